#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include <boost/context/continuation.hpp>

#include "dumbolab/common.hpp"

namespace dumbolab {

// Execution environment behind every engine: time source, scheduling points
// and blocking waits. Two backends exist; engines are written once in
// blocking style against this interface.
//
//  - NativeEnv: real threads, real clock, busy-wait spins.
//  - FiberScheduler: all workers are fibers on one OS thread; every yield()
//    is a scheduling decision and time is a virtual clock. This is the
//    backend the interleaving explorer drives.
// What a scheduling step is about to touch. The interleaving explorer uses
// these to decide which step pairs commute (partial-order reduction): two
// steps of different threads need both orders explored only if they can
// observe each other.
struct AccessTag {
  enum Kind : std::uint8_t {
    other,       // unknown: conflicts with everything
    heap,        // a heap line access through the HTM (idx = hashed line key)
    activeWord,  // per-thread active/begin-stamp word (idx = owner tid)
    nondurWord,  // per-thread non-durable-stamp word (idx = owner tid)
    sgl,         // global-lock state
    marker,      // durability-marker array state
  };
  static constexpr std::uint32_t kAnyIdx = 0xffffffffu;

  Kind kind = other;
  std::uint32_t idx = kAnyIdx;
  bool write = true;
  // For heap steps: Bloom filter (bit = folded line key & 63) of the lines
  // the step itself touches. Two heap steps interact only if a write is
  // involved and their line sets may intersect.
  std::uint64_t line_mask = ~0ull;
  // Conflict resolution: the step may doom a peer (doom_write, on the line
  // named by idx, or any doomable peer when idx is kAnyIdx) / the step can
  // observe this thread's own doom flag (doom_read). track_mask is a
  // 64-bit Bloom filter over the lines this thread currently tracks (bit
  // idx & 63): a doomer hits us only if its line may be in our tracked set.
  bool doom_write = false;
  bool doom_read = false;
  std::uint64_t track_mask = 0;
  // Timestamp draws that enter cross-thread comparisons. The checkers
  // compare begin stamps against commit-call and ack stamps, and nothing
  // else; so a begin draw never commutes with a commit-call/ack draw, while
  // draws of the same class do. clk_upd marks draws that can appear on the
  // writer side of a read-from edge (or any draw when the engine's checker
  // also orders read-only pairs, as opacity does): a begin/end pair with
  // neither side so marked never meets in a comparison.
  bool clk_begin = false;
  bool clk_end = false;
  bool clk_upd = false;
  // Commit publication steps: their mutual order defines the engine's
  // commit sequence, which checkers consume directly.
  bool commit_order = false;
};

// True iff the two steps commute: executing them in either order yields the
// same state and the same checker-visible history. Must over-approximate
// dependence; "other" conflicts with everything.
inline bool tag_dooms(const AccessTag& w, const AccessTag& r) {
  if (!w.doom_write || !r.doom_read) return false;
  if (w.idx == AccessTag::kAnyIdx) return true;  // status-based doom
  return (r.track_mask >> (w.idx & 63)) & 1;     // line-based doom
}

inline bool tags_independent(const AccessTag& a, const AccessTag& b) {
  if (a.kind == AccessTag::other || b.kind == AccessTag::other) return false;
  if (((a.clk_begin && b.clk_end) || (a.clk_end && b.clk_begin)) &&
      (a.clk_upd || b.clk_upd))
    return false;
  if (a.commit_order && b.commit_order) return false;
  if (tag_dooms(a, b) || tag_dooms(b, a)) return false;
  if (a.kind != b.kind) return true;
  if (!a.write && !b.write) return true;
  if (a.kind == AccessTag::heap) return (a.line_mask & b.line_mask) == 0;
  return a.idx != AccessTag::kAnyIdx && b.idx != AccessTag::kAnyIdx &&
         a.idx != b.idx;
}

class ExecEnv {
 public:
  virtual ~ExecEnv() = default;

  virtual bool deterministic() const = 0;
  virtual int thread_count() const = 0;

  // True when the backend consumes access tags (the exploring scheduler).
  // Engines may skip computing expensive tag fields otherwise.
  virtual bool traced() const { return false; }

  // Strictly increasing per calling thread.
  virtual std::uint64_t now_ns(int tid) = 0;
  // Read the clock without perturbing per-thread monotonicity bookkeeping.
  virtual std::uint64_t peek_now_ns() = 0;

  // A shared-memory step boundary: the scheduler may switch threads here.
  virtual void yield(int tid) = 0;
  // Same, announcing what the following step touches (explorer reduction).
  virtual void yield(int tid, const AccessTag&) { yield(tid); }

  // Block until pred() holds. pred must be monotone-ish: once true it may
  // only flip back through actions of the waiting thread itself.
  virtual void wait_until(int tid, const std::function<bool()>& pred) = 0;
  virtual void wait_until(int tid, const std::function<bool()>& pred,
                          const AccessTag&) {
    wait_until(tid, pred);
  }

  // Ensure the clock has reached t (drain-fence style wait).
  virtual void advance_to(int tid, std::uint64_t t_ns) = 0;

  // Charge injected latency (e.g. a suspend/resume pair).
  virtual void charge(int tid, std::uint64_t ns) = 0;
};

class NativeEnv final : public ExecEnv {
 public:
  explicit NativeEnv(int threads, std::int64_t skew_ns = 0)
      : threads_(threads), last_(threads, 0), skew_(threads, skew_ns) {
    t0_ = clock_ns();
  }

  bool deterministic() const override { return false; }
  int thread_count() const override { return threads_; }

  void set_skew(int tid, std::int64_t ns) { skew_[tid] = ns; }

  std::uint64_t now_ns(int tid) override {
    std::uint64_t t = clock_ns() - t0_ + static_cast<std::uint64_t>(skew_[tid]);
    if (t <= last_[tid]) t = last_[tid] + 1;
    last_[tid] = t;
    return t;
  }

  std::uint64_t peek_now_ns() override { return clock_ns() - t0_; }

  void yield(int) override { relax(); }

  void wait_until(int, const std::function<bool()>& pred) override {
    while (!pred()) relax();
  }

  void advance_to(int, std::uint64_t t_ns) override {
    while (clock_ns() - t0_ < t_ns) relax();
  }

  void charge(int, std::uint64_t ns) override {
    std::uint64_t until = clock_ns() + ns;
    while (clock_ns() < until) relax();
  }

 private:
  static std::uint64_t clock_ns() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
  }
  static void relax() {
#if defined(__x86_64__)
    __builtin_ia32_pause();
#else
    std::atomic_thread_fence(std::memory_order_seq_cst);
#endif
  }

  int threads_;
  std::uint64_t t0_;
  std::vector<std::uint64_t> last_;
  std::vector<std::int64_t> skew_;
};

// Cooperative deterministic scheduler. Workers run as Boost.Context fibers;
// control returns to the scheduler at every yield()/blocked wait, where the
// next runnable thread is chosen either by a forced decision prefix (DFS
// exploration) or by a pluggable policy (round-robin / seeded random).
// Thrown into every live fiber when the driver abandons a run early; the
// worker wrappers catch it after the program frames have unwound.
struct StopRun {};

// Stack allocator that recycles fiber stacks process-wide. Exploration
// creates and destroys schedulers at a high rate; mapping a fresh stack per
// fiber dominates otherwise. Not thread-safe by design: fibers are only
// used by the single-threaded exploring backend.
class PooledStack {
 public:
  boost::context::stack_context allocate() {
    auto& pool = free_list();
    if (!pool.empty()) {
      boost::context::stack_context sc = pool.back();
      pool.pop_back();
      return sc;
    }
    return boost::context::fixedsize_stack(kStackBytes).allocate();
  }
  void deallocate(boost::context::stack_context& sc) { free_list().push_back(sc); }

 private:
  static constexpr std::size_t kStackBytes = 1 << 17;
  static std::vector<boost::context::stack_context>& free_list() {
    static std::vector<boost::context::stack_context> pool;
    return pool;
  }
};

class FiberScheduler final : public ExecEnv {
 public:
  using Policy = std::function<int(const std::vector<int>& runnable, int step)>;
  // Tag-aware variant: also sees the pending access tag of every runnable
  // thread (the operation it will perform when dispatched).
  using TagPolicy = std::function<int(const std::vector<int>& runnable,
                                      const std::vector<AccessTag>& tags,
                                      int step)>;

  explicit FiberScheduler(int threads, std::uint64_t tick_ns = 10)
      : threads_(threads), tick_(tick_ns), workers_(threads) {}

  bool deterministic() const override { return true; }
  bool traced() const override { return true; }
  int thread_count() const override { return threads_; }

  std::uint64_t now_ns(int) override { return ++vclock_; }
  std::uint64_t peek_now_ns() override { return vclock_; }

  void yield(int tid) override { yield(tid, AccessTag{}); }

  void yield(int tid, const AccessTag& tag) override {
    workers_[tid].pending_tag = tag;
    switch_out(tid);
  }

  void wait_until(int tid, const std::function<bool()>& pred) override {
    wait_until(tid, pred, AccessTag{});
  }

  void wait_until(int tid, const std::function<bool()>& pred,
                  const AccessTag& tag) override {
    while (!pred()) {
      workers_[tid].blocked = true;
      workers_[tid].pred = &pred;
      workers_[tid].pending_tag = tag;
      switch_out(tid);
      workers_[tid].blocked = false;
      workers_[tid].pred = nullptr;
    }
  }

  void advance_to(int, std::uint64_t t_ns) override {
    if (vclock_ < t_ns) vclock_ = t_ns;
  }

  void charge(int, std::uint64_t ns) override { vclock_ += ns; }

  // --- driver side ---

  void set_forced_choices(const std::vector<int>* choices) { forced_ = choices; }
  void set_policy(Policy p) { policy_ = std::move(p); }
  void set_tag_policy(TagPolicy p) { tag_policy_ = std::move(p); }

  // Abandon the current run: every worker is unwound at its next resumption
  // and the partially built history is discarded by the caller. May be
  // called from a scheduling policy.
  void request_stop() { stop_ = true; }
  bool stopped() const { return stop_; }

  // Runs the given per-thread programs to completion (or deadlock).
  // Records, per decision, the runnable-set size and the chosen index.
  void run(const std::vector<std::function<void()>>& programs) {
    if (static_cast<int>(programs.size()) != threads_)
      throw UsageError("program count != thread count");
    trace_.clear();
    runnable_counts_.clear();
    deadlock_ = false;
    stop_ = false;
    for (int i = 0; i < threads_; ++i) {
      Worker& w = workers_[i];
      w.finished = false;
      w.blocked = false;
      w.pred = nullptr;
      w.pending_tag = AccessTag{};  // program start: conservative tag
      w.cont = boost::context::callcc(
          std::allocator_arg, PooledStack(), [this, i, &programs](
                                          boost::context::continuation&& sink) {
        main_ = std::move(sink);
        main_ = main_.resume();  // wait for first dispatch
        try {
          if (!stop_) programs[i]();
        } catch (const StopRun&) {
        }
        workers_[i].finished = true;
        return std::move(main_);
      });
    }
    std::vector<int> runnable;
    std::vector<AccessTag> tags;
    runnable.reserve(threads_);
    tags.reserve(threads_);
    for (;;) {
      runnable.clear();
      bool all_done = true;
      for (int i = 0; i < threads_; ++i) {
        const Worker& w = workers_[i];
        if (w.finished) continue;
        all_done = false;
        if (!w.blocked || (*w.pred)()) runnable.push_back(i);
      }
      if (all_done) return;
      if (runnable.empty()) {
        deadlock_ = true;
        return;
      }
      int choice = 0;
      int step = static_cast<int>(trace_.size());
      if (forced_ && step < static_cast<int>(forced_->size())) {
        choice = (*forced_)[step];
      } else if (tag_policy_) {
        tags.clear();
        for (int tid : runnable) tags.push_back(workers_[tid].pending_tag);
        choice = tag_policy_(runnable, tags, step);
      } else if (policy_) {
        choice = policy_(runnable, step);
      }
      if (stop_) {  // unwind every live fiber, then give up on the run
        for (bool live = true; live;) {
          live = false;
          for (int i = 0; i < threads_; ++i)
            if (!workers_[i].finished) {
              live = true;
              dispatch(i);
            }
        }
        return;
      }
      if (choice < 0 || choice >= static_cast<int>(runnable.size()))
        throw UsageError("scheduler choice out of range");
      trace_.push_back(choice);
      runnable_counts_.push_back(static_cast<int>(runnable.size()));
      vclock_ += tick_;
      dispatch(runnable[choice]);
    }
  }

  bool deadlocked() const { return deadlock_; }
  const std::vector<int>& trace() const { return trace_; }
  const std::vector<int>& runnable_counts() const { return runnable_counts_; }
  std::uint64_t steps() const { return trace_.size(); }

 private:
  struct Worker {
    boost::context::continuation cont;
    bool finished = true;
    bool blocked = false;
    const std::function<bool()>* pred = nullptr;
    AccessTag pending_tag;  // what the next dispatched step will touch
  };

  void dispatch(int tid) {
    current_ = tid;
    workers_[tid].cont = workers_[tid].cont.resume();
  }

  void switch_out(int tid) {
    if (tid != current_) throw UsageError("yield from non-current thread");
    main_ = main_.resume();
    if (stop_) throw StopRun{};
  }

  int threads_;
  bool stop_ = false;
  std::uint64_t tick_;
  std::uint64_t vclock_ = 0;
  int current_ = -1;
  std::vector<Worker> workers_;
  boost::context::continuation main_;
  const std::vector<int>* forced_ = nullptr;
  Policy policy_;
  TagPolicy tag_policy_;
  std::vector<int> trace_;
  std::vector<int> runnable_counts_;
  bool deadlock_ = false;
};

inline FiberScheduler::Policy round_robin_policy() {
  auto last = std::make_shared<int>(-1);
  return [last](const std::vector<int>& runnable, int) {
    for (std::size_t i = 0; i < runnable.size(); ++i)
      if (runnable[i] > *last) {
        *last = runnable[i];
        return static_cast<int>(i);
      }
    *last = runnable[0];
    return 0;
  };
}

inline FiberScheduler::Policy random_policy(std::uint64_t seed) {
  auto rng = std::make_shared<SplitMix64>(seed);
  return [rng](const std::vector<int>& runnable, int) {
    return static_cast<int>(rng->below(runnable.size()));
  };
}

}  // namespace dumbolab
