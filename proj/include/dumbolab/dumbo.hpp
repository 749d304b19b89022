#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dumbolab/engine.hpp"
#include "dumbolab/exec_env.hpp"
#include "dumbolab/history.hpp"
#include "dumbolab/htm.hpp"
#include "dumbolab/pm.hpp"
#include "dumbolab/replayer.hpp"

namespace dumbolab {

// Durable unlimited-read transactions over best-effort HTM with suspendable
// access tracking. Update commit path: suspend tracking, leave the active
// state, flush the redo log opportunistically (asynchronously), draw the
// durability timestamp, run the isolation wait, advertise non-durable,
// resume, commit in HTM, fence, run the pruned durability wait, persist the
// commit marker, clear. RO transactions run outside HTM entirely: they only
// advertise the active state and run the pruned durability wait at the end.
class DumboEngine final : public Engine {
 public:
  enum class Isolation { si, opacity };

  DumboEngine(ExecEnv* env, PmSim* pm, HtmRuntime* htm, DurMarkerArray* markers,
              HistoryRecorder* rec, Isolation iso)
      : env_(env), pm_(pm), htm_(htm), markers_(markers), rec_(rec), iso_(iso) {
    int n = env->thread_count();
    active_ = std::make_unique<PaddedWord[]>(n);
    nondur_ = std::make_unique<PaddedWord[]>(n);
    std::uint64_t win = pm->region_size(RegionId::redoLogs) / n;
    win -= win % pm->line_size();
    for (int t = 0; t < n; ++t) {
      threads_.emplace_back(Thread{LogRing(t * win, win), -1, false});
    }
  }

  const char* name() const override {
    return iso_ == Isolation::si ? "dumbo-si" : "dumbo-opa";
  }

  // Checker-sensitivity knob: with the wait disabled the engine is broken by
  // design and the isolation checkers must catch it.
  void set_isolation_wait(bool enabled) { isolation_wait_enabled_ = enabled; }

  TxRecord run(int tid, bool read_only, const TxBody& body) override {
    TxRecord rec;
    rec.thread_id = tid;
    rec.tx_id = next_id_.fetch_add(1);
    rec.read_only = read_only;
    if (read_only) {
      htm_->logical_begin(tid);
      run_read_only(tid, body, rec);
      htm_->logical_end(tid, iso_ == Isolation::opacity);
    } else {
      TxOutcome out = htm_->run_transaction(
          tid, [&](bool sgl) { update_attempt(tid, sgl, body, rec); },
          [&](AbortKind) { abort_handler(tid); });
      rec.htm_attempts = out.htm_attempts;
      rec.used_sgl = out.used_sgl;
      rec.last_abort_code = static_cast<int>(out.last_abort);
    }
    rec.status = TxStatus::committed;
    rec.ack_ns = env_->now_ns(tid);
    if (rec_) rec_->add(rec);
    return rec;
  }

 private:
  struct Thread {
    LogRing ring;
    std::int64_t dur_ts;        // -1 outside the durTs-holding window
    bool abort_flush_pending;   // an abort marker flush has no fence yet
  };

  AccessTag word_tag(PaddedWord* arr, std::uint32_t idx, bool write) const {
    AccessTag t;
    t.kind = arr == active_.get() ? AccessTag::activeWord : AccessTag::nondurWord;
    t.idx = idx;
    t.write = write;
    return t;
  }

  void publish(int tid, PaddedWord* arr, std::uint64_t w,
               bool clk_end = false, bool clk_upd = false) {
    AccessTag t = word_tag(arr, static_cast<std::uint32_t>(tid), true);
    t.clk_end = clk_end;
    t.clk_upd = clk_upd;
    env_->yield(tid, t);
    arr[tid].v.store(w);
  }

  // Drawing the begin time and advertising it must be one indivisible step:
  // a gap between them would let a peer's isolation-wait scan miss a
  // transaction that already holds an earlier begin time.
  std::uint64_t publish_begin(int tid, bool upd_clock) {
    AccessTag tag = word_tag(active_.get(), static_cast<std::uint32_t>(tid), true);
    tag.clk_begin = true;
    tag.clk_upd = upd_clock;
    env_->yield(tid, tag);
    std::uint64_t t = env_->now_ns(tid);
    active_[tid].v.store(pack_stamp(t));
    return t;
  }

  void run_read_only(int tid, const TxBody& body, TxRecord& rec) {
    bool opa = iso_ == Isolation::opacity;
    std::uint64_t begin_time = publish_begin(tid, opa);
    rec.begin_ns = begin_time;
    TxCtx ctx;
    ctx.read = [this, tid, &rec](std::uint64_t addr) {
      std::uint64_t v = htm_->read_word(tid, RegionId::heap, addr);
      rec.reads.push_back({addr, v});
      return v;
    };
    ctx.write = [](std::uint64_t, std::uint64_t) {
      throw UsageError("write in a read-only transaction");
    };
    body(ctx);
    publish(tid, active_.get(), 0, /*clk_end=*/true, opa);
    rec.commit_call_ns = env_->now_ns(tid);
    durability_wait(tid, begin_time, rec);
  }

  void update_attempt(int tid, bool sgl, const TxBody& body, TxRecord& rec) {
    Thread& th = threads_[tid];
    rec.reads.clear();
    rec.writes.clear();
    if (th.abort_flush_pending) {  // fence the previous abort marker now
      pm_->drain_fence(tid);
      th.abort_flush_pending = false;
    }
    std::uint64_t begin_time = publish_begin(tid, true);
    rec.begin_ns = begin_time;
    th.dur_ts = -1;
    if (!sgl)
      htm_->htm_begin(tid, iso_ == Isolation::si ? TxMode::noLoadTracking
                                                 : TxMode::trackAnyAccess);
    TxCtx ctx;
    ctx.read = [this, tid, &rec](std::uint64_t addr) {
      std::uint64_t v = htm_->read_word(tid, RegionId::heap, addr);
      rec.reads.push_back({addr, v});
      return v;
    };
    ctx.write = [this, tid, &rec](std::uint64_t addr, std::uint64_t val) {
      rec.writes.push_back({addr, val});  // volatile redo log entry
      htm_->write_word(tid, RegionId::heap, addr, val);
    };
    body(ctx);

    {
      AccessTag t = word_tag(active_.get(), static_cast<std::uint32_t>(tid),
                             true);
      t.clk_end = true;
      t.clk_upd = true;
      if (!sgl) {
        t.doom_read = true;
        if (env_->traced()) t.track_mask = htm_->track_mask(tid);
      }
      env_->yield(tid, t);
    }
    rec.commit_call_ns = env_->now_ns(tid);
    if (!sgl) htm_->suspend_tracking(tid);
    active_[tid].v.store(0);
    std::uint64_t log_start = flush_redo_log(tid, rec);
    std::uint64_t dur_ts = pm_->next_durts();
    th.dur_ts = static_cast<std::int64_t>(dur_ts);
    rec.dur_ts = th.dur_ts;
    if (isolation_wait_enabled_) isolation_wait(tid, rec);
    // Stamp with the commit-invocation time: any peer that could later read
    // this transaction's writes began after that point, so its pruned
    // durability wait is guaranteed to see a stamp below its own begin time.
    {
      AccessTag t = word_tag(nondur_.get(), static_cast<std::uint32_t>(tid),
                             true);
      if (!sgl) {
        t.doom_read = true;
        if (env_->traced()) t.track_mask = htm_->track_mask(tid);
      }
      env_->yield(tid, t);
      nondur_[tid].v.store(pack_stamp(rec.commit_call_ns));
    }
    if (!sgl) {
      htm_->resume_tracking(tid);
      rec.pre_commit_ns = env_->now_ns(tid);
      rec.commit_seq = htm_->htm_commit(tid);
    } else {
      rec.pre_commit_ns = env_->now_ns(tid);
    }
    rec.commit_ns = env_->now_ns(tid);
    std::uint64_t fence_from = env_->peek_now_ns();
    pm_->drain_fence(tid);  // redo-log entries are durable past this point
    rec.fence_wait_ns = env_->peek_now_ns() - fence_from;
    durability_wait(tid, begin_time, rec);
    markers_->wait_for_slot(tid, dur_ts);
    markers_->publish(tid, {kCommitMarker, dur_ts, log_start, rec.writes.size()});
    th.ring.note_published(dur_ts);
    pm_->drain_fence(tid);
    th.dur_ts = -1;
    bool opa = iso_ == Isolation::opacity;
    publish(tid, nondur_.get(), 0, /*clk_end=*/opa, opa);
  }

  // Copy the volatile redo entries into this thread's persistent log window
  // and issue (but do not await) the line flushes.
  std::uint64_t flush_redo_log(int tid, TxRecord& rec) {
    Thread& th = threads_[tid];
    std::uint64_t start =
        th.ring.reserve(tid, env_, *markers_, rec.writes.size());
    // The log window is thread-private, so the copy cannot interfere with
    // any peer; it goes straight to the device as one step.
    for (std::size_t i = 0; i < rec.writes.size(); ++i) {
      std::uint64_t off = start + i * kLogEntryBytes;
      pm_->write_word(RegionId::redoLogs, off, rec.writes[i].addr);
      pm_->write_word(RegionId::redoLogs, off + 8, rec.writes[i].value);
    }
    rec.log_flush_issue_ns = env_->now_ns(tid);
    rec.log_flush_ready_ns = rec.log_flush_issue_ns;
    std::uint64_t bytes = rec.writes.size() * kLogEntryBytes;
    std::uint64_t line = pm_->line_size();
    std::uint64_t end_line = (start + bytes + line - 1) / line;  // exclusive
    for (std::uint64_t l = start / line; l < end_line; ++l) {
      FlushTicket t = htm_->flush_line(tid, RegionId::redoLogs, l);
      rec.log_flush_ready_ns = std::max(rec.log_flush_ready_ns, t.complete_ns);
    }
    return start;
  }

  // Wait until every peer found active at the scan has moved on. Runs with
  // tracking suspended; a conflict on our write set can doom us meanwhile.
  void isolation_wait(int tid, TxRecord& rec) {
    std::uint64_t from = env_->peek_now_ns();
    AccessTag scan = word_tag(active_.get(), AccessTag::kAnyIdx, false);
    scan.doom_read = true;
    if (env_->traced()) scan.track_mask = htm_->track_mask(tid);
    env_->yield(tid, scan);  // the scan
    int n = env_->thread_count();
    for (int c = 0; c < n; ++c) {
      if (c == tid) continue;
      std::uint64_t w = active_[c].v.load();
      if (!stamp_set(w)) continue;
      ++rec.iso_wait_peers;
      AccessTag wt = word_tag(active_.get(), static_cast<std::uint32_t>(c), false);
      wt.doom_read = true;
      if (env_->traced()) wt.track_mask = htm_->track_mask(tid);
      env_->wait_until(tid, [this, c, w, tid] {
        return active_[c].v.load() != w || htm_->doomed(tid);
      }, wt);
      htm_->poll_doomed(tid);
    }
    rec.iso_wait_ns = env_->peek_now_ns() - from;
  }

  // Pruned durability wait: only peers that advertised non-durable *before*
  // this transaction began could have produced state it depends on.
  void durability_wait(int tid, std::uint64_t begin_time, TxRecord& rec) {
    std::uint64_t from = env_->peek_now_ns();
    env_->yield(tid, word_tag(nondur_.get(), AccessTag::kAnyIdx, false));  // the scan
    int n = env_->thread_count();
    for (int c = 0; c < n; ++c) {
      if (c == tid) continue;
      std::uint64_t w = nondur_[c].v.load();
      if (!stamp_set(w)) continue;
      if (stamp_of(w) >= begin_time) {
        ++rec.dur_wait_skipped;
        continue;
      }
      ++rec.dur_wait_peers;
      env_->wait_until(tid,
                       [this, c, w] { return nondur_[c].v.load() != w; },
                       word_tag(nondur_.get(), static_cast<std::uint32_t>(c),
                                false));
    }
    rec.dur_wait_ns = env_->peek_now_ns() - from;
  }

  void abort_handler(int tid) {
    Thread& th = threads_[tid];
    publish(tid, active_.get(), 0);
    publish(tid, nondur_.get(), 0);
    if (th.dur_ts >= 0) {  // fix the hole asynchronously; fence at next begin
      std::uint64_t d = static_cast<std::uint64_t>(th.dur_ts);
      markers_->wait_for_slot(tid, d);
      markers_->publish(tid, {kAbortMarker, d, 0, 0});
      th.ring.note_published(d);
      th.abort_flush_pending = true;
      th.dur_ts = -1;
    }
  }

  ExecEnv* env_;
  PmSim* pm_;
  HtmRuntime* htm_;
  DurMarkerArray* markers_;
  HistoryRecorder* rec_;
  Isolation iso_;
  bool isolation_wait_enabled_ = true;
  std::unique_ptr<PaddedWord[]> active_, nondur_;
  std::vector<Thread> threads_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace dumbolab
