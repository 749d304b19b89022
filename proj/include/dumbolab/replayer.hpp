#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

#include "dumbolab/common.hpp"
#include "dumbolab/exec_env.hpp"
#include "dumbolab/pm.hpp"

namespace dumbolab {

// Durable-marker record, 4 words (32 bytes), several per cache line:
//   word 0: kind (1 = commit, 2 = abort)
//   word 1: durTs — doubles as the validity tag: a slot holds a marker for
//           timestamp d iff this word equals d. Written last, so any durable
//           prefix of the record that includes it includes the payload too.
//   word 2: logStart (byte offset into the redo-log region)
//   word 3: numEntries (16-byte addr/value pairs)
constexpr std::uint64_t kMarkerBytes = 32;
constexpr std::uint64_t kCommitMarker = 1;
constexpr std::uint64_t kAbortMarker = 2;
constexpr std::uint64_t kLogEntryBytes = 16;

struct MarkerRecord {
  std::uint64_t kind = 0;
  std::uint64_t dur_ts = 0;
  std::uint64_t log_start = 0;
  std::uint64_t num_entries = 0;
};

// Global circular marker array in the durMarkers region. Line 0 holds the
// durable replay tail (a count: timestamps below it are fully replayed into
// the durable heap); slots for durTs d live at line_size + (d mod M) * 32.
//
// Also hosts the background replayer state: replay applies redo-log entries
// for the next unreplayed timestamp to the *durable* heap bytes, modeling a
// helper that works strictly underneath the transactional (volatile) view.
class DurMarkerArray {
 public:
  DurMarkerArray(ExecEnv* env, PmSim* pm, std::uint64_t slots)
      : env_(env), pm_(pm), slots_(slots) {
    if (pm->region_size(RegionId::durMarkers) <
        pm->line_size() + slots * kMarkerBytes)
      throw UsageError("marker region too small for slot count");
  }

  std::uint64_t slots() const { return slots_; }
  std::uint64_t persisted_tail() const { return persisted_tail_.load(); }
  std::uint64_t volatile_tail() const { return next_.load(); }
  std::uint64_t probe_count() const { return probes_.load(); }
  std::uint64_t replayed_commits() const { return replayed_commits_.load(); }

  // Backpressure: a marker for durTs d may only be written once the previous
  // occupant of its slot (d - M) has been replayed and the tail persisted.
  void wait_for_slot(int tid, std::uint64_t dur_ts) {
    AccessTag t;  // the step after the wait stores the marker record
    t.kind = AccessTag::marker;
    t.idx = static_cast<std::uint32_t>(dur_ts % slots_);
    env_->wait_until(tid, [this, dur_ts] {
      return persisted_tail_.load() + slots_ > dur_ts;
    }, t);
  }

  // Store the record (durTs word last) and issue the slot line's flush.
  // Callers order this after their redo-log flushes and fence afterwards.
  FlushTicket publish(int tid, const MarkerRecord& rec) {
    std::uint64_t base = slot_base(rec.dur_ts);
    pm_->write_word(RegionId::durMarkers, base + 16, rec.log_start);
    pm_->write_word(RegionId::durMarkers, base + 24, rec.num_entries);
    pm_->write_word(RegionId::durMarkers, base + 0, rec.kind);
    pm_->write_word(RegionId::durMarkers, base + 8, rec.dur_ts);
    return pm_->flush_line_async(tid, RegionId::durMarkers, base / pm_->line_size());
  }

  MarkerRecord read_slot(std::uint64_t dur_ts) const {
    std::uint64_t base = slot_base(dur_ts);
    MarkerRecord r;
    r.kind = pm_->read_word(RegionId::durMarkers, base + 0);
    r.dur_ts = pm_->read_word(RegionId::durMarkers, base + 8);
    r.log_start = pm_->read_word(RegionId::durMarkers, base + 16);
    r.num_entries = pm_->read_word(RegionId::durMarkers, base + 24);
    return r;
  }

  // One background replay step. Returns false when the marker for the next
  // timestamp is not there yet (background mode waits at holes; it never
  // skips). Each step costs exactly one slot probe regardless of thread
  // count — the property the scan-based replayer lacks.
  bool try_replay_step(int tid) {
    std::lock_guard<std::mutex> g(mu_);
    std::uint64_t d = next_.load();
    probes_.fetch_add(1);
    MarkerRecord rec = read_slot(d);
    if (rec.dur_ts != d || (rec.kind != kCommitMarker && rec.kind != kAbortMarker))
      return false;
    if (rec.kind == kCommitMarker) {
      apply_entries_durably(rec);
      replayed_commits_.fetch_add(1);
    }
    next_.store(d + 1);
    // Persist the tail before anyone may reuse the slot or its log window.
    pm_->write_word(RegionId::durMarkers, 0, d + 1);
    pm_->flush_line_async(tid, RegionId::durMarkers, 0);
    pm_->drain_fence(tid);
    persisted_tail_.store(d + 1);
    return true;
  }

 private:
  std::uint64_t slot_base(std::uint64_t dur_ts) const {
    return pm_->line_size() + (dur_ts % slots_) * kMarkerBytes;
  }

  void apply_entries_durably(const MarkerRecord& rec) {
    for (std::uint64_t i = 0; i < rec.num_entries; ++i) {
      std::uint64_t off = rec.log_start + i * kLogEntryBytes;
      std::uint64_t addr = pm_->read_word(RegionId::redoLogs, off);
      std::uint64_t val = pm_->read_word(RegionId::redoLogs, off + 8);
      pm_->recovery_write_durable(RegionId::heap, addr, val);
    }
  }

  ExecEnv* env_;
  PmSim* pm_;
  std::uint64_t slots_;
  std::mutex mu_;
  std::atomic<std::uint64_t> next_{0};
  std::atomic<std::uint64_t> persisted_tail_{0};
  std::atomic<std::uint64_t> probes_{0};
  std::atomic<std::uint64_t> replayed_commits_{0};
};

// Per-thread redo-log window: a ring over [base, base+capacity) in the
// redoLogs region. Reuse of bytes waits until the markers that reference
// them have been replayed (persisted tail moved past their timestamps).
class LogRing {
 public:
  LogRing(std::uint64_t base, std::uint64_t capacity)
      : base_(base), cap_(capacity) {}

  // Reserve space for n entries; returns the absolute byte offset. Blocks
  // until every marker still referencing the reused bytes has been replayed.
  std::uint64_t reserve(int tid, ExecEnv* env, const DurMarkerArray& markers,
                        std::uint64_t n_entries) {
    std::uint64_t bytes = n_entries * kLogEntryBytes;
    if (bytes > cap_) throw UsageError("transaction larger than its log window");
    if (head_ % cap_ + bytes > cap_)       // no wrap-splitting: skip the
      head_ += cap_ - head_ % cap_;        // remainder of the ring
    last_start_ = head_;
    head_ += bytes;
    // The new range physically collides with monotone range
    // [head_-cap_-bytes, head_-cap_): wait out entries that begin below it.
    while (!outstanding_.empty() &&
           head_ > cap_ && outstanding_.front().start < head_ - cap_) {
      std::uint64_t ts = outstanding_.front().dur_ts;
      AccessTag t;
      t.kind = AccessTag::marker;
      t.write = false;
      env->wait_until(tid, [&markers, ts] { return markers.persisted_tail() > ts; }, t);
      outstanding_.pop_front();
    }
    return base_ + last_start_ % cap_;
  }

  void note_published(std::uint64_t dur_ts) {
    outstanding_.push_back({dur_ts, last_start_});
  }

 private:
  struct Pending {
    std::uint64_t dur_ts;
    std::uint64_t start;  // monotone byte position of the reservation
  };
  std::uint64_t base_, cap_;
  std::uint64_t head_ = 0;  // monotone
  std::uint64_t last_start_ = 0;
  std::deque<Pending> outstanding_;
};

// ---- crash recovery -------------------------------------------------------

struct RecoveryReport {
  std::vector<std::uint64_t> applied;        // commit timestamps, in order
  std::vector<std::uint64_t> skipped_holes;  // timestamps with no marker
  std::uint64_t aborts = 0;
  std::uint64_t start_tail = 0;
  std::uint64_t resume_tail = 0;  // timestamp after the last examined slot
  bool corruption = false;
};

// Offline recovery over a durable snapshot. Scans forward from the persisted
// tail, applying commit markers in timestamp order. Unmarked slots are holes
// left by transactions that crashed before their marker flush completed; at
// most one per worker thread can exist, so the scan stops after max_holes
// cumulative holes — anything beyond was never acknowledged.
inline RecoveryReport recover_image(CrashImage& img, std::uint64_t line_size,
                                    std::uint64_t slots, std::uint64_t max_holes) {
  RecoveryReport rep;
  rep.start_tail = img.read_word(RegionId::durMarkers, 0);
  std::uint64_t log_size = img.durable[static_cast<int>(RegionId::redoLogs)].size();
  auto& heap = img.durable[static_cast<int>(RegionId::heap)];
  std::uint64_t holes = 0;
  std::uint64_t d = rep.start_tail;
  for (;; ++d) {
    std::uint64_t base = line_size + (d % slots) * kMarkerBytes;
    std::uint64_t tag = img.read_word(RegionId::durMarkers, base + 8);
    std::uint64_t kind = img.read_word(RegionId::durMarkers, base + 0);
    if (tag != d || (kind != kCommitMarker && kind != kAbortMarker)) {
      if (++holes >= max_holes) break;
      rep.skipped_holes.push_back(d);
      continue;
    }
    if (kind == kAbortMarker) {
      ++rep.aborts;
      continue;
    }
    std::uint64_t log_start = img.read_word(RegionId::durMarkers, base + 16);
    std::uint64_t n = img.read_word(RegionId::durMarkers, base + 24);
    if (log_start + n * kLogEntryBytes > log_size) {
      rep.corruption = true;
      break;
    }
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t off = log_start + i * kLogEntryBytes;
      std::uint64_t addr = img.read_word(RegionId::redoLogs, off);
      std::uint64_t val = img.read_word(RegionId::redoLogs, off + 8);
      if (addr + 8 > heap.size()) {
        rep.corruption = true;
        break;
      }
      store_word_le(heap.data() + addr, val);
    }
    if (rep.corruption) break;
    rep.applied.push_back(d);
  }
  rep.resume_tail = d;
  return rep;
}

// Full-array oracle for the stop rule: examines every slot regardless of
// holes and reports every valid commit marker at or above the tail, within
// one epoch of it. Used to bound what any hole-skipping scan may recover.
inline std::vector<std::uint64_t> scan_all_markers(const CrashImage& img,
                                                   std::uint64_t line_size,
                                                   std::uint64_t slots) {
  std::uint64_t tail = img.read_word(RegionId::durMarkers, 0);
  std::vector<std::uint64_t> found;
  for (std::uint64_t s = 0; s < slots; ++s) {
    std::uint64_t base = line_size + s * kMarkerBytes;
    std::uint64_t tag = img.read_word(RegionId::durMarkers, base + 8);
    std::uint64_t kind = img.read_word(RegionId::durMarkers, base + 0);
    if (kind != kCommitMarker) continue;
    if (tag % slots != s) continue;
    if (tag >= tail && tag < tail + slots) found.push_back(tag);
  }
  std::sort(found.begin(), found.end());
  return found;
}

}  // namespace dumbolab
