#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dumbolab/exec_env.hpp"

namespace dumbolab {

struct ExploreResult {
  std::uint64_t schedules = 0;
  std::uint64_t redundant = 0;  // runs that hit a sleep-blocked state
  std::uint64_t deadlocks = 0;
  bool capped = false;  // stopped at max_schedules before exhausting the space
};

// Exhaustive DFS over thread interleavings with sleep-set partial-order
// reduction. Each iteration builds a fresh world via `make` (programs capture
// that world) and replays the decision prefix held on the frame stack; the
// suffix extends with the first runnable thread not in the node's sleep set.
//
// Sleep sets prune redundant interleavings: after a subtree rooted at thread
// t has been explored, a sibling subtree need not re-explore orders that only
// commute t's step with independent steps (per tags_independent on the
// AccessTag each blocked thread announced). The reduction preserves at least
// one representative of every Mazurkiewicz trace, and the access tags are
// chosen so checker verdicts are invariant within a trace (steps drawing
// cross-thread-compared timestamps never commute).
inline ExploreResult explore_schedules(
    int threads,
    const std::function<std::vector<std::function<void()>>(FiberScheduler&)>& make,
    const std::function<void(FiberScheduler&)>& after_run,
    std::uint64_t max_schedules = 1'000'000, std::uint64_t tick_ns = 10) {
  struct Frame {
    std::vector<int> runnable;
    std::vector<AccessTag> tags;  // pending step of each runnable thread
    int chosen;                   // index into runnable
    std::vector<char> sleep;      // by tid: asleep on entry to this node
    std::vector<char> explored;   // by tid: sibling subtree already done
  };
  std::vector<Frame> stack;
  ExploreResult res;
  for (;;) {
    FiberScheduler sched(threads, tick_ns);
    // Set when every runnable thread is asleep: each continuation of such a
    // state commutes into an interleaving explored from an earlier sibling,
    // so the rest of this run is finished without creating branch points.
    bool redundant = false;
    sched.set_tag_policy([&stack, &redundant, threads](
                             const std::vector<int>& runnable,
                             const std::vector<AccessTag>& tags,
                             int step) -> int {
      std::size_t d = static_cast<std::size_t>(step);
      if (d < stack.size()) return stack[d].chosen;  // replay the prefix
      if (redundant) return 0;
      Frame f;
      f.runnable = runnable;
      f.tags = tags;
      f.sleep.assign(threads, 0);
      f.explored.assign(threads, 0);
      if (d > 0) {
        const Frame& p = stack[d - 1];
        int chosen_tid = p.runnable[p.chosen];
        const AccessTag& chosen_tag = p.tags[p.chosen];
        for (std::size_t i = 0; i < p.runnable.size(); ++i) {
          int u = p.runnable[i];
          if (u == chosen_tid) continue;
          // u did not run, so its pending step is unchanged; it stays asleep
          // when that step commutes with the step just taken.
          if ((p.sleep[u] || p.explored[u]) &&
              tags_independent(p.tags[i], chosen_tag))
            f.sleep[u] = 1;
        }
      }
      f.chosen = -1;
      for (std::size_t i = 0; i < runnable.size(); ++i)
        if (!f.sleep[runnable[i]]) {
          f.chosen = static_cast<int>(i);
          break;
        }
      if (f.chosen < 0) {  // sleep-blocked: subtree covered elsewhere
        redundant = true;   // finish on a default path, adding no branches
        return 0;
      }
      stack.push_back(std::move(f));
      return stack.back().chosen;
    });
    auto programs = make(sched);
    sched.run(programs);
    ++res.schedules;
    if (redundant) ++res.redundant;
    if (sched.deadlocked()) ++res.deadlocks;
    if (after_run && !redundant) after_run(sched);
    if (res.schedules >= max_schedules) {
      res.capped = true;
      return res;
    }
    // Backtrack to the deepest node with an awake, unexplored sibling.
    for (;;) {
      if (stack.empty()) return res;  // space exhausted
      Frame& f = stack.back();
      f.explored[f.runnable[f.chosen]] = 1;
      int next = -1;
      for (std::size_t i = 0; i < f.runnable.size(); ++i) {
        int u = f.runnable[i];
        if (!f.sleep[u] && !f.explored[u]) {
          next = static_cast<int>(i);
          break;
        }
      }
      if (next >= 0) {
        f.chosen = next;
        break;
      }
      stack.pop_back();
    }
  }
}

}  // namespace dumbolab
