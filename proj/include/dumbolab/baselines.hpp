#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "dumbolab/engine.hpp"
#include "dumbolab/exec_env.hpp"
#include "dumbolab/history.hpp"
#include "dumbolab/htm.hpp"
#include "dumbolab/pm.hpp"
#include "dumbolab/replayer.hpp"

namespace dumbolab {

constexpr std::uint64_t kTsInf = std::numeric_limits<std::uint64_t>::max();

// Totally-ordered durability baseline. Every transaction (updates and reads
// alike) runs as a full HTM transaction with tracked loads. Each thread
// advertises a physical timestamp: its begin time while running (a
// conservative lower bound), its commit-time clock read once committed, and
// infinity when idle/durable. A transaction may persist its marker only
// after every peer's advertised timestamp has passed its own, which makes
// marker persistence follow the total commit-time order.
class SphtEngine final : public Engine {
 public:
  SphtEngine(ExecEnv* env, PmSim* pm, HtmRuntime* htm, HistoryRecorder* rec)
      : env_(env), pm_(pm), htm_(htm), rec_(rec) {
    int n = env->thread_count();
    ts_ = std::make_unique<PaddedWord[]>(n);
    for (int t = 0; t < n; ++t) ts_[t].v.store(kTsInf);
    std::uint64_t win = pm->region_size(RegionId::redoLogs) / n;
    win -= win % pm->line_size();
    log_head_.assign(n, 0);
    log_base_.resize(n);
    log_cap_ = win;
    for (int t = 0; t < n; ++t) log_base_[t] = t * win;
  }

  const char* name() const override { return "spht"; }

  TxRecord run(int tid, bool read_only, const TxBody& body) override {
    TxRecord rec;
    rec.thread_id = tid;
    rec.tx_id = next_id_.fetch_add(1);
    rec.read_only = read_only;
    TxOutcome out = htm_->run_transaction(
        tid, [&](bool sgl) { attempt(tid, sgl, read_only, body, rec); },
        [&](AbortKind) { ts_store(tid, kTsInf); });
    rec.htm_attempts = out.htm_attempts;
    rec.used_sgl = out.used_sgl;
    rec.last_abort_code = static_cast<int>(out.last_abort);
    rec.status = TxStatus::committed;
    rec.ack_ns = env_->now_ns(tid);
    if (rec_) rec_->add(rec);
    return rec;
  }

 private:
  void ts_store(int tid, std::uint64_t v) {
    env_->yield(tid);
    ts_[tid].v.store(v);
  }

  void attempt(int tid, bool sgl, bool read_only, const TxBody& body,
               TxRecord& rec) {
    rec.reads.clear();
    rec.writes.clear();
    rec.begin_ns = env_->now_ns(tid);
    ts_store(tid, rec.begin_ns);  // conservative lower bound while running
    if (!sgl) htm_->htm_begin(tid, TxMode::trackAnyAccess);
    TxCtx ctx;
    ctx.read = [this, tid, &rec](std::uint64_t addr) {
      std::uint64_t v = htm_->read_word(tid, RegionId::heap, addr);
      rec.reads.push_back({addr, v});
      return v;
    };
    ctx.write = [this, tid, read_only, &rec](std::uint64_t addr,
                                             std::uint64_t val) {
      if (read_only) throw UsageError("write in a read-only transaction");
      rec.writes.push_back({addr, val});
      htm_->write_word(tid, RegionId::heap, addr, val);
    };
    body(ctx);

    rec.commit_call_ns = env_->now_ns(tid);
    std::uint64_t log_start = 0;
    if (!read_only) {
      if (!sgl) htm_->suspend_tracking(tid);
      log_start = write_log(tid, rec);
      std::uint64_t from = env_->peek_now_ns();
      pm_->drain_fence(tid);  // synchronous: log durable before HTM commit
      rec.fence_wait_ns = env_->peek_now_ns() - from;
    }
    std::uint64_t my_ts = env_->now_ns(tid);  // private clock read
    rec.dur_ts = static_cast<std::int64_t>(my_ts);
    if (!sgl) {
      if (!read_only) htm_->resume_tracking(tid);
      rec.pre_commit_ns = env_->now_ns(tid);
      rec.commit_seq = htm_->htm_commit(tid);
    } else {
      rec.pre_commit_ns = env_->now_ns(tid);
    }
    rec.commit_ns = env_->now_ns(tid);
    ts_store(tid, my_ts);  // advertise the commit timestamp

    // Totally-ordered durability wait: every peer must move past my_ts.
    std::uint64_t wait_from = env_->peek_now_ns();
    env_->yield(tid);
    int n = env_->thread_count();
    for (int c = 0; c < n; ++c) {
      if (c == tid) continue;
      if (ts_[c].v.load() >= my_ts) {
        ++rec.dur_wait_skipped;  // already past me (or idle)
        continue;
      }
      ++rec.dur_wait_peers;
      env_->wait_until(tid,
                       [this, c, my_ts] { return ts_[c].v.load() >= my_ts; });
    }
    rec.dur_wait_ns = env_->peek_now_ns() - wait_from;
    if (!read_only) {
      // Per-thread marker: one line per thread past the header line.
      std::uint64_t base = pm_->line_size() * (1 + tid);
      pm_->write_word(RegionId::durMarkers, base + 16, log_start);
      pm_->write_word(RegionId::durMarkers, base + 24, rec.writes.size());
      pm_->write_word(RegionId::durMarkers, base + 0, kCommitMarker);
      pm_->write_word(RegionId::durMarkers, base + 8, my_ts);
      pm_->flush_line_async(tid, RegionId::durMarkers, 1 + tid);
      pm_->drain_fence(tid);
    }
    ts_store(tid, kTsInf);
  }

  std::uint64_t write_log(int tid, TxRecord& rec) {
    std::uint64_t bytes = rec.writes.size() * kLogEntryBytes;
    if (log_head_[tid] % log_cap_ + bytes > log_cap_)
      log_head_[tid] += log_cap_ - log_head_[tid] % log_cap_;
    std::uint64_t start = log_base_[tid] + log_head_[tid] % log_cap_;
    log_head_[tid] += bytes;
    // The log window is thread-private; the copy goes straight to the device.
    for (std::size_t i = 0; i < rec.writes.size(); ++i) {
      std::uint64_t off = start + i * kLogEntryBytes;
      pm_->write_word(RegionId::redoLogs, off, rec.writes[i].addr);
      pm_->write_word(RegionId::redoLogs, off + 8, rec.writes[i].value);
    }
    rec.log_flush_issue_ns = env_->now_ns(tid);
    rec.log_flush_ready_ns = rec.log_flush_issue_ns;
    std::uint64_t line = pm_->line_size();
    std::uint64_t end_line = (start + bytes + line - 1) / line;
    for (std::uint64_t l = start / line; l < end_line; ++l) {
      FlushTicket t = htm_->flush_line(tid, RegionId::redoLogs, l);
      rec.log_flush_ready_ns = std::max(rec.log_flush_ready_ns, t.complete_ns);
    }
    return start;
  }

  ExecEnv* env_;
  PmSim* pm_;
  HtmRuntime* htm_;
  HistoryRecorder* rec_;
  std::unique_ptr<PaddedWord[]> ts_;
  std::vector<std::uint64_t> log_head_, log_base_;
  std::uint64_t log_cap_ = 0;
  std::atomic<std::uint64_t> next_id_{1};
};

// Straightforward combination of unlimited reads with totally-ordered
// durability: update transactions run with untracked loads and take the
// isolation wait before committing, but the post-commit durability stages
// are unchanged from the totally-ordered baseline — the redo-log flush is
// synchronous and serializes with the isolation wait instead of overlapping
// it, and the durability wait is unpruned.
class NaiveComboEngine final : public Engine {
 public:
  NaiveComboEngine(ExecEnv* env, PmSim* pm, HtmRuntime* htm,
                   HistoryRecorder* rec)
      : env_(env), pm_(pm), htm_(htm), rec_(rec) {
    int n = env->thread_count();
    active_ = std::make_unique<PaddedWord[]>(n);
    ts_ = std::make_unique<PaddedWord[]>(n);
    for (int t = 0; t < n; ++t) ts_[t].v.store(kTsInf);
    std::uint64_t win = pm->region_size(RegionId::redoLogs) / n;
    win -= win % pm->line_size();
    log_base_.resize(n);
    log_head_.assign(n, 0);
    log_cap_ = win;
    for (int t = 0; t < n; ++t) log_base_[t] = t * win;
  }

  const char* name() const override { return "naive-combo"; }

  TxRecord run(int tid, bool read_only, const TxBody& body) override {
    TxRecord rec;
    rec.thread_id = tid;
    rec.tx_id = next_id_.fetch_add(1);
    rec.read_only = read_only;
    if (read_only) {
      htm_->logical_begin(tid);
      run_read_only(tid, body, rec);
      htm_->logical_end(tid);
    } else {
      TxOutcome out = htm_->run_transaction(
          tid, [&](bool sgl) { update_attempt(tid, sgl, body, rec); },
          [&](AbortKind) {
            publish_active(tid, 0);
            ts_store(tid, kTsInf);
          });
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
  void publish_active(int tid, std::uint64_t w) {
    env_->yield(tid);
    active_[tid].v.store(w);
  }
  void ts_store(int tid, std::uint64_t v) {
    env_->yield(tid);
    ts_[tid].v.store(v);
  }

  // Draw the begin time and advertise it in one indivisible step so a peer's
  // isolation-wait scan can never miss a transaction holding an earlier time.
  std::uint64_t publish_begin(int tid) {
    env_->yield(tid);
    std::uint64_t t = env_->now_ns(tid);
    ts_[tid].v.store(t);
    active_[tid].v.store(pack_stamp(t));
    return t;
  }

  void run_read_only(int tid, const TxBody& body, TxRecord& rec) {
    rec.begin_ns = publish_begin(tid);
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
    rec.commit_call_ns = env_->now_ns(tid);
    publish_active(tid, 0);
    std::uint64_t my_ts = env_->now_ns(tid);
    rec.dur_ts = static_cast<std::int64_t>(my_ts);
    ts_store(tid, my_ts);
    durability_wait(tid, my_ts, rec);
    ts_store(tid, kTsInf);
  }

  void update_attempt(int tid, bool sgl, const TxBody& body, TxRecord& rec) {
    rec.reads.clear();
    rec.writes.clear();
    rec.begin_ns = publish_begin(tid);
    if (!sgl) htm_->htm_begin(tid, TxMode::noLoadTracking);
    TxCtx ctx;
    ctx.read = [this, tid, &rec](std::uint64_t addr) {
      std::uint64_t v = htm_->read_word(tid, RegionId::heap, addr);
      rec.reads.push_back({addr, v});
      return v;
    };
    ctx.write = [this, tid, &rec](std::uint64_t addr, std::uint64_t val) {
      rec.writes.push_back({addr, val});
      htm_->write_word(tid, RegionId::heap, addr, val);
    };
    body(ctx);

    rec.commit_call_ns = env_->now_ns(tid);
    if (!sgl) htm_->suspend_tracking(tid);
    publish_active(tid, 0);
    std::uint64_t log_start = write_log(tid, rec);
    std::uint64_t from = env_->peek_now_ns();
    pm_->drain_fence(tid);  // synchronous flush, then the isolation wait
    rec.fence_wait_ns = env_->peek_now_ns() - from;
    isolation_wait(tid, rec);
    std::uint64_t my_ts = env_->now_ns(tid);
    rec.dur_ts = static_cast<std::int64_t>(my_ts);
    if (!sgl) {
      htm_->resume_tracking(tid);
      rec.pre_commit_ns = env_->now_ns(tid);
      rec.commit_seq = htm_->htm_commit(tid);
    } else {
      rec.pre_commit_ns = env_->now_ns(tid);
    }
    rec.commit_ns = env_->now_ns(tid);
    ts_store(tid, my_ts);
    durability_wait(tid, my_ts, rec);
    std::uint64_t base = pm_->line_size() * (1 + tid);
    pm_->write_word(RegionId::durMarkers, base + 16, log_start);
    pm_->write_word(RegionId::durMarkers, base + 24, rec.writes.size());
    pm_->write_word(RegionId::durMarkers, base + 0, kCommitMarker);
    pm_->write_word(RegionId::durMarkers, base + 8, my_ts);
    pm_->flush_line_async(tid, RegionId::durMarkers, 1 + tid);
    pm_->drain_fence(tid);
    ts_store(tid, kTsInf);
  }

  void isolation_wait(int tid, TxRecord& rec) {
    std::uint64_t from = env_->peek_now_ns();
    env_->yield(tid);
    int n = env_->thread_count();
    for (int c = 0; c < n; ++c) {
      if (c == tid) continue;
      std::uint64_t w = active_[c].v.load();
      if (!stamp_set(w)) continue;
      ++rec.iso_wait_peers;
      env_->wait_until(tid, [this, c, w, tid] {
        return active_[c].v.load() != w || htm_->doomed(tid);
      });
      htm_->poll_doomed(tid);
    }
    rec.iso_wait_ns = env_->peek_now_ns() - from;
  }

  void durability_wait(int tid, std::uint64_t my_ts, TxRecord& rec) {
    std::uint64_t from = env_->peek_now_ns();
    env_->yield(tid);
    int n = env_->thread_count();
    for (int c = 0; c < n; ++c) {
      if (c == tid) continue;
      if (ts_[c].v.load() >= my_ts) {
        ++rec.dur_wait_skipped;
        continue;
      }
      ++rec.dur_wait_peers;
      env_->wait_until(tid,
                       [this, c, my_ts] { return ts_[c].v.load() >= my_ts; });
    }
    rec.dur_wait_ns = env_->peek_now_ns() - from;
  }

  std::uint64_t write_log(int tid, TxRecord& rec) {
    std::uint64_t bytes = rec.writes.size() * kLogEntryBytes;
    if (log_head_[tid] % log_cap_ + bytes > log_cap_)
      log_head_[tid] += log_cap_ - log_head_[tid] % log_cap_;
    std::uint64_t start = log_base_[tid] + log_head_[tid] % log_cap_;
    log_head_[tid] += bytes;
    // The log window is thread-private; the copy goes straight to the device.
    for (std::size_t i = 0; i < rec.writes.size(); ++i) {
      std::uint64_t off = start + i * kLogEntryBytes;
      pm_->write_word(RegionId::redoLogs, off, rec.writes[i].addr);
      pm_->write_word(RegionId::redoLogs, off + 8, rec.writes[i].value);
    }
    rec.log_flush_issue_ns = env_->now_ns(tid);
    rec.log_flush_ready_ns = rec.log_flush_issue_ns;
    std::uint64_t line = pm_->line_size();
    std::uint64_t end_line = (start + bytes + line - 1) / line;
    for (std::uint64_t l = start / line; l < end_line; ++l) {
      FlushTicket t = htm_->flush_line(tid, RegionId::redoLogs, l);
      rec.log_flush_ready_ns = std::max(rec.log_flush_ready_ns, t.complete_ns);
    }
    return start;
  }

  ExecEnv* env_;
  PmSim* pm_;
  HtmRuntime* htm_;
  HistoryRecorder* rec_;
  std::unique_ptr<PaddedWord[]> active_, ts_;
  std::vector<std::uint64_t> log_base_, log_head_;
  std::uint64_t log_cap_ = 0;
  std::atomic<std::uint64_t> next_id_{1};
};

// Volatile control: plain best-effort HTM with the global-lock fallback and
// no durability machinery at all.
class HtmSglEngine final : public Engine {
 public:
  HtmSglEngine(ExecEnv* env, PmSim* pm, HtmRuntime* htm, HistoryRecorder* rec)
      : env_(env), pm_(pm), htm_(htm), rec_(rec) {}

  const char* name() const override { return "htm-sgl"; }

  TxRecord run(int tid, bool read_only, const TxBody& body) override {
    TxRecord rec;
    rec.thread_id = tid;
    rec.tx_id = next_id_.fetch_add(1);
    rec.read_only = read_only;
    TxOutcome out = htm_->run_transaction(tid, [&](bool sgl) {
      rec.reads.clear();
      rec.writes.clear();
      rec.begin_ns = env_->now_ns(tid);
      if (!sgl) htm_->htm_begin(tid, TxMode::trackAnyAccess);
      TxCtx ctx;
      ctx.read = [this, tid, &rec](std::uint64_t addr) {
        std::uint64_t v = htm_->read_word(tid, RegionId::heap, addr);
        rec.reads.push_back({addr, v});
        return v;
      };
      ctx.write = [this, tid, read_only, &rec](std::uint64_t addr,
                                               std::uint64_t val) {
        if (read_only) throw UsageError("write in a read-only transaction");
        rec.writes.push_back({addr, val});
        htm_->write_word(tid, RegionId::heap, addr, val);
      };
      body(ctx);
      rec.commit_call_ns = env_->now_ns(tid);
      if (!sgl) {
        rec.pre_commit_ns = rec.commit_call_ns;
        rec.commit_seq = htm_->htm_commit(tid);
      }
      rec.commit_ns = env_->now_ns(tid);
    });
    rec.htm_attempts = out.htm_attempts;
    rec.used_sgl = out.used_sgl;
    rec.last_abort_code = static_cast<int>(out.last_abort);
    rec.status = TxStatus::committed;
    rec.ack_ns = env_->now_ns(tid);
    if (rec_) rec_->add(rec);
    return rec;
  }

 private:
  ExecEnv* env_;
  PmSim* pm_;
  HtmRuntime* htm_;
  HistoryRecorder* rec_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace dumbolab
