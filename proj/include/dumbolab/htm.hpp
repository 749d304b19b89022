#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dumbolab/common.hpp"
#include "dumbolab/config.hpp"
#include "dumbolab/exec_env.hpp"
#include "dumbolab/pm.hpp"

namespace dumbolab {

enum class AbortKind {
  none,
  conflict,
  capacityRead,
  capacityWrite,
  explicitAbort,
  sglPreempt,
  illegalOperation,
};
inline const char* abort_kind_name(AbortKind k) {
  switch (k) {
    case AbortKind::none: return "none";
    case AbortKind::conflict: return "conflict";
    case AbortKind::capacityRead: return "capacity-read";
    case AbortKind::capacityWrite: return "capacity-write";
    case AbortKind::explicitAbort: return "explicit";
    case AbortKind::sglPreempt: return "sgl-preempt";
    case AbortKind::illegalOperation: return "illegal-operation";
  }
  return "?";
}

// Hardware rollback. Thrown by any transactional operation, caught by
// run_transaction (or the engine wrapper around it).
struct HtmAbort {
  AbortKind kind;
};

enum class TxMode { trackAnyAccess, noLoadTracking };
enum class VictimPolicy { requesterWins, responderWins };

struct TxOutcome {
  bool committed = false;
  int htm_attempts = 0;
  bool used_sgl = false;
  AbortKind last_abort = AbortKind::none;
};

// Best-effort HTM emulation. Access tracking is line-granular; conflict
// detection is eager (at the access); buffered writes publish atomically at
// commit. One transaction per thread. All bookkeeping is serialized by one
// mutex; in deterministic mode the scheduler serializes callers anyway.
class HtmRuntime {
 public:
  struct Caps {
    std::uint64_t read_lines = 4096;
    std::uint64_t write_lines = 64;
    bool smt_halved = false;
    std::uint64_t effective_read() const { return smt_halved ? read_lines / 2 : read_lines; }
    std::uint64_t effective_write() const { return smt_halved ? write_lines / 2 : write_lines; }
  };

  HtmRuntime(ExecEnv* env, PmSim* pm, Caps caps, VictimPolicy policy,
             int max_retries, std::uint64_t suspend_cost_1t = 350,
             std::uint64_t suspend_cost_64t = 1500)
      : env_(env),
        pm_(pm),
        caps_(caps),
        policy_(policy),
        max_retries_(max_retries),
        suspend_1t_(suspend_cost_1t),
        suspend_64t_(suspend_cost_64t),
        txs_(env->thread_count()) {}

  // unique_ptr because the runtime owns mutexes and cannot move
  static std::unique_ptr<HtmRuntime> from_config(ExecEnv* env, PmSim* pm,
                                                 const Config& cfg) {
    Caps caps;
    caps.read_lines = cfg.get_u64("htm.read_lines", 4096);
    caps.write_lines = cfg.get_u64("htm.write_lines", 64);
    caps.smt_halved = cfg.get_bool("htm.smt_halved", false);
    VictimPolicy vp = cfg.get("htm.victim_policy", "requester-wins") == "responder-wins"
                          ? VictimPolicy::responderWins
                          : VictimPolicy::requesterWins;
    return std::make_unique<HtmRuntime>(
        env, pm, caps, vp,
        static_cast<int>(cfg.get_u64("htm.max_retries", 10)),
        cfg.get_u64("htm.suspend_cost_ns_1t", 350),
        cfg.get_u64("htm.suspend_cost_ns_64t", 1500));
  }

  int max_retries() const { return max_retries_; }
  const Caps& caps() const { return caps_; }

  // Linear interpolation between the 1-thread and 64-thread endpoints.
  std::uint64_t suspend_resume_cost_ns() const {
    int n = env_->thread_count();
    if (n <= 1) return suspend_1t_;
    if (n >= 64) return suspend_64t_;
    return suspend_1t_ + (suspend_64t_ - suspend_1t_) * (n - 1) / 63;
  }

  static std::uint32_t fold_idx(std::uint64_t key) {
    std::uint32_t i = static_cast<std::uint32_t>(key ^ (key >> 32));
    return i == AccessTag::kAnyIdx ? 0 : i;
  }

  // Bloom filter over the lines tid currently tracks (bit = folded key & 63).
  // Own-thread state: only tid itself mutates its read/write sets.
  std::uint64_t track_mask(int tid) const {
    std::uint64_t m = 0;
    const Tx& tx = txs_[tid];
    for (std::uint64_t k : tx.read_set) m |= 1ull << (fold_idx(k) & 63);
    for (std::uint64_t k : tx.write_set) m |= 1ull << (fold_idx(k) & 63);
    return m;
  }

  // One heap line per tag; an access can doom a peer tracking that line, and
  // an access made inside a transaction can find the transaction doomed.
  AccessTag heap_tag(int tid, RegionId region, std::uint64_t addr,
                     bool write) const {
    AccessTag t;
    t.kind = AccessTag::heap;
    if (!env_->traced()) return t;
    t.idx = fold_idx(line_key(region, addr / pm_->line_size()));
    t.line_mask = 1ull << (t.idx & 63);
    t.write = write;
    t.doom_write = true;
    if (txs_[tid].status != Status::none) {
      t.doom_read = true;
      t.track_mask = track_mask(tid);
    }
    return t;
  }

  // ---- transaction demarcation ------------------------------------------

  void htm_begin(int tid, TxMode mode) {
    AccessTag t;
    t.kind = AccessTag::sgl;
    t.idx = 0;
    t.write = false;
    env_->yield(tid, t);
    std::lock_guard<std::mutex> g(mu_);
    Tx& tx = txs_[tid];
    if (tx.status != Status::none) throw HtmAbort{AbortKind::illegalOperation};
    if (sgl_blocked_locked(tid)) throw HtmAbort{AbortKind::sglPreempt};
    tx.status = Status::active;
    tx.track_loads = mode == TxMode::trackAnyAccess;
    tx.doomed = AbortKind::none;
    tx.read_set.clear();
    tx.write_set.clear();
    tx.write_buffer.clear();
    tx.pre_suspend.clear();
  }

  bool in_tx(int tid) const {
    std::lock_guard<std::mutex> g(mu_);
    return txs_[tid].status != Status::none;
  }
  bool suspended(int tid) const {
    std::lock_guard<std::mutex> g(mu_);
    return txs_[tid].status == Status::suspended;
  }
  bool doomed(int tid) const {
    std::lock_guard<std::mutex> g(mu_);
    return txs_[tid].doomed != AbortKind::none;
  }
  // Deliver a pending doom as the abort it stands for (no-op otherwise).
  void poll_doomed(int tid) {
    std::lock_guard<std::mutex> g(mu_);
    check_doomed_locked(tid);
  }

  // ---- memory accesses ---------------------------------------------------
  // Also the path for non-transactional accesses (status none): they do not
  // track, but they still invalidate peers' tracked lines.

  std::uint64_t read_word(int tid, RegionId region, std::uint64_t addr) {
    env_->yield(tid, heap_tag(tid, region, addr, /*write=*/false));
    std::lock_guard<std::mutex> g(mu_);
    Tx& tx = txs_[tid];
    check_doomed_locked(tid);
    std::uint64_t key = addr_key(region, addr);
    if (tx.status != Status::none) {
      auto it = tx.write_buffer.find(key);
      if (it != tx.write_buffer.end()) return it->second;  // read-your-writes
    }
    resolve_conflicts_locked(tid, line_key(region, addr / pm_->line_size()),
                             /*is_write=*/false);
    if (tx.status == Status::active && tx.track_loads) {
      tx.read_set.insert(line_key(region, addr / pm_->line_size()));
      if (tx.read_set.size() > caps_.effective_read()) {
        doom_locked(tid, AbortKind::capacityRead);
        check_doomed_locked(tid);
      }
    }
    return pm_->read_word(region, addr);
  }

  void write_word(int tid, RegionId region, std::uint64_t addr, std::uint64_t value) {
    env_->yield(tid, heap_tag(tid, region, addr, /*write=*/true));
    std::lock_guard<std::mutex> g(mu_);
    Tx& tx = txs_[tid];
    check_doomed_locked(tid);
    std::uint64_t lkey = line_key(region, addr / pm_->line_size());
    resolve_conflicts_locked(tid, lkey, /*is_write=*/true);
    if (tx.status == Status::active) {
      tx.write_set.insert(lkey);
      if (tx.write_set.size() > caps_.effective_write()) {
        doom_locked(tid, AbortKind::capacityWrite);
        check_doomed_locked(tid);
      }
      tx.write_buffer[addr_key(region, addr)] = value;  // buffered until commit
      return;
    }
    if (tx.status == Status::suspended && tx.pre_suspend.count(lkey))
      throw HtmAbort{AbortKind::illegalOperation};
    pm_->write_word(region, addr, value);  // untracked, immediately visible
  }

  // Flush on behalf of a (possibly suspended) transaction. Suspended mode may
  // only write back lines the transaction had not accessed before suspending.
  FlushTicket flush_line(int tid, RegionId region, std::uint64_t line_id) {
    {
      std::lock_guard<std::mutex> g(mu_);
      Tx& tx = txs_[tid];
      check_doomed_locked(tid);
      if (tx.status == Status::active) throw HtmAbort{AbortKind::illegalOperation};
      if (tx.status == Status::suspended && tx.pre_suspend.count(line_key(region, line_id)))
        throw HtmAbort{AbortKind::illegalOperation};
    }
    return pm_->flush_line_async(tid, region, line_id);
  }

  // ---- suspend / resume --------------------------------------------------

  void suspend_tracking(int tid) {
    std::lock_guard<std::mutex> g(mu_);
    Tx& tx = txs_[tid];
    check_doomed_locked(tid);
    if (tx.status != Status::active) throw HtmAbort{AbortKind::illegalOperation};
    tx.status = Status::suspended;
    tx.pre_suspend = tx.read_set;
    for (auto k : tx.write_set) tx.pre_suspend.insert(k);
  }

  void resume_tracking(int tid) {
    std::uint64_t cost = suspend_resume_cost_ns();
    {
      std::lock_guard<std::mutex> g(mu_);
      Tx& tx = txs_[tid];
      check_doomed_locked(tid);
      if (tx.status != Status::suspended) throw HtmAbort{AbortKind::illegalOperation};
      tx.status = Status::active;
    }
    env_->charge(tid, cost);  // one pair charged at resume
  }

  // ---- commit / abort ----------------------------------------------------

  // Returns a global commit sequence number (publication order).
  std::uint64_t htm_commit(int tid) {
    AccessTag t;
    t.kind = AccessTag::heap;
    t.doom_read = true;
    t.commit_order = true;
    if (env_->traced()) {
      t.track_mask = track_mask(tid);
      t.line_mask = 0;
      for (std::uint64_t k : txs_[tid].write_set)
        t.line_mask |= 1ull << (fold_idx(k) & 63);
    }
    env_->yield(tid, t);
    std::lock_guard<std::mutex> g(mu_);
    Tx& tx = txs_[tid];
    check_doomed_locked(tid);
    if (tx.status == Status::suspended) throw HtmAbort{AbortKind::illegalOperation};
    if (tx.status != Status::active) throw HtmAbort{AbortKind::illegalOperation};
    for (const auto& [key, val] : tx.write_buffer)
      pm_->write_word(static_cast<RegionId>(key >> 56), key & kAddrMask, val);
    clear_locked(tx);
    return ++commit_seq_;
  }

  void explicit_abort(int) { throw HtmAbort{AbortKind::explicitAbort}; }

  // Cleanup after a delivered rollback (call from the catch handler).
  void abort_cleanup(int tid) {
    std::lock_guard<std::mutex> g(mu_);
    clear_locked(txs_[tid]);
  }

  // ---- logical (non-HTM) transaction windows -----------------------------
  // RO transactions run outside HTM but must still be quiesced by the SGL.

  void logical_begin(int tid) {
    AccessTag t;
    t.kind = AccessTag::sgl;
    t.idx = 1 + static_cast<std::uint32_t>(tid);
    env_->wait_until(tid, [this, tid] {
      std::lock_guard<std::mutex> g(mu_);
      return !sgl_blocked_locked(tid);
    }, t);
    std::lock_guard<std::mutex> g(mu_);
    logical_active_[tid] = true;
  }

  void logical_end(int tid, bool ack_ordered = true) {
    AccessTag t;  // the caller draws its commit ack in this step
    t.kind = AccessTag::sgl;
    t.idx = 1 + static_cast<std::uint32_t>(tid);
    if (ack_ordered) {
      t.clk_end = true;
      t.clk_upd = true;
    }
    env_->yield(tid, t);
    std::lock_guard<std::mutex> g(mu_);
    logical_active_[tid] = false;
  }

  // ---- SGL ---------------------------------------------------------------

  bool sgl_held() const { return sgl_holder_.load() >= 0; }

  void acquire_sgl(int tid) {
    AccessTag bt;
    bt.kind = AccessTag::sgl;
    bt.doom_write = true;
    env_->yield(tid, bt);
    {
      std::lock_guard<std::mutex> g(mu_);
      ++sgl_pending_;
      for (int i = 0; i < static_cast<int>(txs_.size()); ++i)
        if (i != tid && txs_[i].status != Status::none)
          doom_locked(i, AbortKind::sglPreempt);
    }
    auto free_and_quiesced = [this, tid] {
      if (sgl_holder_.load() != -1) return false;
      for (int i = 0; i < static_cast<int>(txs_.size()); ++i) {
        if (i == tid) continue;
        if (txs_[i].status != Status::none) return false;
        auto it = logical_active_.find(i);
        if (it != logical_active_.end() && it->second) return false;
      }
      return true;
    };
    AccessTag wt;
    wt.kind = AccessTag::sgl;
    for (;;) {
      env_->wait_until(tid, [&] {
        std::lock_guard<std::mutex> g(mu_);
        return free_and_quiesced();
      }, wt);
      std::lock_guard<std::mutex> g(mu_);
      if (free_and_quiesced()) {  // re-check: another waiter may have won
        sgl_holder_.store(tid);
        --sgl_pending_;
        return;
      }
    }
  }

  void release_sgl(int tid) {
    AccessTag t;
    t.kind = AccessTag::sgl;
    env_->yield(tid, t);
    std::lock_guard<std::mutex> g(mu_);
    if (sgl_holder_.load() != tid) throw UsageError("release of unheld SGL");
    sgl_holder_.store(-1);
  }

  // ---- retry wrapper -----------------------------------------------------

  // body(sgl_mode) runs the whole transaction including the engine's commit
  // path. on_abort runs between attempts (the engine's abort handler).
  TxOutcome run_transaction(int tid, const std::function<void(bool)>& body,
                            const std::function<void(AbortKind)>& on_abort = {}) {
    TxOutcome out;
    AccessTag gate;
    gate.kind = AccessTag::sgl;
    gate.idx = 0;
    gate.write = false;
    for (int attempt = 1; attempt <= max_retries_; ++attempt) {
      env_->wait_until(tid, [this, tid] {
        std::lock_guard<std::mutex> g(mu_);
        return !sgl_blocked_locked(tid);
      }, gate);
      out.htm_attempts = attempt;
      try {
        body(false);
        out.committed = true;
        return out;
      } catch (const HtmAbort& a) {
        out.last_abort = a.kind;
        abort_cleanup(tid);
        if (on_abort) on_abort(a.kind);
      }
    }
    acquire_sgl(tid);
    try {
      body(true);
    } catch (...) {
      release_sgl(tid);
      throw;
    }
    release_sgl(tid);
    out.committed = true;
    out.used_sgl = true;
    return out;
  }

  // Tracked-set introspection (tests, checker assertions).
  std::size_t read_set_size(int tid) const {
    std::lock_guard<std::mutex> g(mu_);
    return txs_[tid].read_set.size();
  }
  std::size_t write_set_size(int tid) const {
    std::lock_guard<std::mutex> g(mu_);
    return txs_[tid].write_set.size();
  }

 private:
  enum class Status { none, active, suspended };
  static constexpr std::uint64_t kAddrMask = (1ull << 56) - 1;

  struct Tx {
    Status status = Status::none;
    bool track_loads = true;
    AbortKind doomed = AbortKind::none;
    std::unordered_set<std::uint64_t> read_set, write_set;      // line keys
    std::unordered_map<std::uint64_t, std::uint64_t> write_buffer;  // addr keys
    std::unordered_set<std::uint64_t> pre_suspend;              // line keys
  };

  static std::uint64_t line_key(RegionId r, std::uint64_t line) {
    return (static_cast<std::uint64_t>(r) << 56) | line;
  }
  static std::uint64_t addr_key(RegionId r, std::uint64_t addr) {
    return (static_cast<std::uint64_t>(r) << 56) | addr;
  }

  void check_doomed_locked(int tid) {
    Tx& tx = txs_[tid];
    if (tx.status != Status::none && tx.doomed != AbortKind::none)
      throw HtmAbort{tx.doomed};
  }

  void doom_locked(int tid, AbortKind kind) {
    Tx& tx = txs_[tid];
    if (tx.status != Status::none && tx.doomed == AbortKind::none) tx.doomed = kind;
  }

  bool sgl_blocked_locked(int tid) const {
    return (sgl_pending_ > 0 || sgl_holder_.load() != -1) && sgl_holder_.load() != tid;
  }

  // Eager conflict resolution for an access by `tid` to tracked line `lkey`.
  void resolve_conflicts_locked(int tid, std::uint64_t lkey, bool is_write) {
    Tx& me = txs_[tid];
    bool requester_tracked = me.status == Status::active;
    for (int i = 0; i < static_cast<int>(txs_.size()); ++i) {
      if (i == tid) continue;
      Tx& peer = txs_[i];
      if (peer.status == Status::none) continue;
      bool hit = peer.write_set.count(lkey) ||
                 (is_write && peer.read_set.count(lkey));
      if (!hit) continue;
      if (policy_ == VictimPolicy::responderWins && requester_tracked) {
        doom_locked(tid, AbortKind::conflict);
        check_doomed_locked(tid);
        return;
      }
      // Requester wins, except: an HTM transaction touching a suspended
      // peer's write line cannot interrupt it and aborts itself.
      if (requester_tracked && peer.status == Status::suspended &&
          peer.write_set.count(lkey)) {
        doom_locked(tid, AbortKind::conflict);
        check_doomed_locked(tid);
        return;
      }
      doom_locked(i, AbortKind::conflict);
    }
  }

  static void clear_locked(Tx& tx) {
    tx.status = Status::none;
    tx.doomed = AbortKind::none;
    tx.read_set.clear();
    tx.write_set.clear();
    tx.write_buffer.clear();
    tx.pre_suspend.clear();
  }

  ExecEnv* env_;
  PmSim* pm_;
  Caps caps_;
  VictimPolicy policy_;
  int max_retries_;
  std::uint64_t suspend_1t_, suspend_64t_;
  mutable std::mutex mu_;
  std::vector<Tx> txs_;
  std::unordered_map<int, bool> logical_active_;
  int sgl_pending_ = 0;
  std::atomic<int> sgl_holder_{-1};
  std::uint64_t commit_seq_ = 0;
};

}  // namespace dumbolab
