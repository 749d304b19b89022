#pragma once

#include <cstdint>
#include <mutex>
#include <vector>

namespace dumbolab {

struct Access {
  std::uint64_t addr = 0;
  std::uint64_t value = 0;
};

enum class TxStatus { committed, aborted };

// Everything the checker and the metrics pipeline need to know about one
// transaction execution (one successful attempt, or its final abort).
struct TxRecord {
  int thread_id = -1;
  std::uint64_t tx_id = 0;  // unique per run
  bool read_only = false;
  TxStatus status = TxStatus::aborted;
  std::int64_t dur_ts = -1;  // -1: none was drawn

  std::uint64_t begin_ns = 0;
  std::uint64_t commit_call_ns = 0;  // when the commit procedure was entered
  std::uint64_t commit_ns = 0;  // htmCommit publication time (0 for RO)
  std::uint64_t ack_ns = 0;     // when commit returned to the caller
  std::uint64_t commit_seq = 0; // global HTM publication order (0 = none)
  int htm_attempts = 0;
  bool used_sgl = false;

  std::vector<Access> reads;
  std::vector<Access> writes;

  // wait/overlap instrumentation
  std::uint64_t iso_wait_peers = 0;    // peers the isolation wait tracked
  std::uint64_t dur_wait_peers = 0;    // peers the durability wait tracked
  std::uint64_t dur_wait_skipped = 0;  // peers pruned out of the durability wait
  std::uint64_t log_flush_issue_ns = 0;
  std::uint64_t log_flush_ready_ns = 0;  // max completion among log flushes
  std::uint64_t pre_commit_ns = 0;       // just before htmCommit
  std::uint64_t fence_wait_ns = 0;       // time the post-commit drain stalled
  std::uint64_t iso_wait_ns = 0;         // time spent in the isolation wait
  std::uint64_t dur_wait_ns = 0;         // time spent in the durability wait
  int last_abort_code = 0;  // AbortKind of the final failed attempt, as int
};

class HistoryRecorder {
 public:
  void add(TxRecord r) {
    std::lock_guard<std::mutex> g(mu_);
    records_.push_back(std::move(r));
  }
  std::vector<TxRecord> take() {
    std::lock_guard<std::mutex> g(mu_);
    return std::move(records_);
  }
  const std::vector<TxRecord>& records() const { return records_; }

 private:
  std::mutex mu_;
  std::vector<TxRecord> records_;
};

}  // namespace dumbolab
