#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <utility>

#include "dumbolab/explorer.hpp"
#include "dumbolab/htm.hpp"

using namespace dumbolab;

namespace {

PmSim::Sizes small_sizes() {
  PmSim::Sizes s;
  s.heap = 128 * 64;
  s.logs = 128 * 16;
  s.markers = 128 * 16;
  return s;
}

struct World {
  NativeEnv env;
  PmSim pm;
  HtmRuntime htm;
  World(int threads, HtmRuntime::Caps caps = {},
        VictimPolicy vp = VictimPolicy::requesterWins, int retries = 10)
      : env(threads),
        pm(&env, 128, small_sizes()),
        htm(&env, &pm, caps, vp, retries) {}
};

constexpr std::uint64_t kLineA = 0;     // byte address of line 0
constexpr std::uint64_t kLineB = 128;   // byte address of line 1
constexpr std::uint64_t kLineC = 256;

}  // namespace

TEST_CASE("buffered writes are invisible until commit, then all appear") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 11);
  w.htm.write_word(0, RegionId::heap, kLineB, 22);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 0);  // not published
  CHECK(w.htm.read_word(0, RegionId::heap, kLineA) == 11);  // read-your-writes
  w.htm.htm_commit(0);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 11);
  CHECK(w.pm.read_word(RegionId::heap, kLineB) == 22);
  CHECK_FALSE(w.htm.in_tx(0));
}

TEST_CASE("commit sequence numbers are issued in publication order") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  std::uint64_t s0 = w.htm.htm_commit(0);
  w.htm.htm_begin(1, TxMode::trackAnyAccess);
  w.htm.write_word(1, RegionId::heap, kLineB, 2);
  std::uint64_t s1 = w.htm.htm_commit(1);
  CHECK(s0 < s1);
}

TEST_CASE("read capacity overflow aborts with capacity-read") {
  HtmRuntime::Caps caps;
  caps.read_lines = 4;
  caps.write_lines = 2;
  World w(1, caps);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  for (int i = 0; i < 4; ++i) w.htm.read_word(0, RegionId::heap, 128ull * i);
  CHECK(w.htm.read_set_size(0) == 4);
  AbortKind got = AbortKind::none;
  try {
    w.htm.read_word(0, RegionId::heap, 128ull * 4);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::capacityRead);
  w.htm.abort_cleanup(0);
}

TEST_CASE("write capacity overflow aborts with capacity-write") {
  HtmRuntime::Caps caps;
  caps.read_lines = 4;
  caps.write_lines = 2;
  World w(1, caps);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  w.htm.write_word(0, RegionId::heap, kLineB, 2);
  AbortKind got = AbortKind::none;
  try {
    w.htm.write_word(0, RegionId::heap, kLineC, 3);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::capacityWrite);
  w.htm.abort_cleanup(0);
  // none of the buffered writes survived the rollback
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 0);
}

TEST_CASE("smt-halved halves both capacities") {
  HtmRuntime::Caps caps;
  caps.read_lines = 4096;
  caps.write_lines = 64;
  caps.smt_halved = true;
  CHECK(caps.effective_read() == 2048);
  CHECK(caps.effective_write() == 32);
}

TEST_CASE("no-load-tracking mode keeps the read set empty") {
  HtmRuntime::Caps caps;
  caps.read_lines = 2;
  World w(1, caps);
  w.htm.htm_begin(0, TxMode::noLoadTracking);
  for (int i = 0; i < 8; ++i) w.htm.read_word(0, RegionId::heap, 128ull * i);
  CHECK(w.htm.read_set_size(0) == 0);  // and no capacity abort either
  w.htm.htm_commit(0);
}

TEST_CASE("non-transactional read of a tracked write line dooms the writer") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 99);
  CHECK(w.htm.read_word(1, RegionId::heap, kLineA) == 0);  // sees pre-tx value
  CHECK(w.htm.doomed(0));
  AbortKind got = AbortKind::none;
  try {
    w.htm.htm_commit(0);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::conflict);
  w.htm.abort_cleanup(0);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 0);
}

TEST_CASE("tracked requester wins against an active tracked peer") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  w.htm.htm_begin(1, TxMode::trackAnyAccess);
  CHECK_NOTHROW(w.htm.read_word(1, RegionId::heap, kLineA));
  CHECK(w.htm.doomed(0));
  CHECK_FALSE(w.htm.doomed(1));
  w.htm.abort_cleanup(0);
  w.htm.htm_commit(1);
}

TEST_CASE("tracked requester loses against a suspended peer's write line") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  w.htm.suspend_tracking(0);
  w.htm.htm_begin(1, TxMode::trackAnyAccess);
  AbortKind got = AbortKind::none;
  try {
    w.htm.read_word(1, RegionId::heap, kLineA);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::conflict);
  CHECK_FALSE(w.htm.doomed(0));  // the suspended peer was not interrupted
  w.htm.abort_cleanup(1);
  w.htm.resume_tracking(0);
  w.htm.htm_commit(0);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 1);
}

TEST_CASE("non-transactional reader still dooms a suspended writer") {
  World w(2);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  w.htm.suspend_tracking(0);
  CHECK(w.htm.read_word(1, RegionId::heap, kLineA) == 0);
  CHECK(w.htm.doomed(0));
  AbortKind got = AbortKind::none;
  try {
    w.htm.resume_tracking(0);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::conflict);
  w.htm.abort_cleanup(0);
}

TEST_CASE("responder-wins policy aborts the tracked requester instead") {
  World w(2, {}, VictimPolicy::responderWins);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 1);
  w.htm.htm_begin(1, TxMode::trackAnyAccess);
  AbortKind got = AbortKind::none;
  try {
    w.htm.read_word(1, RegionId::heap, kLineA);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::conflict);
  CHECK_FALSE(w.htm.doomed(0));
  w.htm.abort_cleanup(1);
  w.htm.htm_commit(0);
}

TEST_CASE("suspended writes to pre-suspend lines are illegal, fresh lines go direct") {
  World w(1);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 7);
  w.htm.read_word(0, RegionId::heap, kLineB);
  w.htm.suspend_tracking(0);
  CHECK(w.htm.suspended(0));
  AbortKind got = AbortKind::none;
  try {
    w.htm.write_word(0, RegionId::heap, kLineA, 8);  // written before suspend
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::illegalOperation);
  w.htm.abort_cleanup(0);

  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 7);
  w.htm.suspend_tracking(0);
  w.htm.write_word(0, RegionId::heap, kLineC, 42);  // untracked, immediate
  CHECK(w.pm.read_word(RegionId::heap, kLineC) == 42);
  CHECK(w.htm.write_set_size(0) == 1);  // not added to the tracked set
  w.htm.resume_tracking(0);
  w.htm.htm_commit(0);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 7);
}

TEST_CASE("flush during suspension rejects pre-suspend lines") {
  World w(1);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  w.htm.write_word(0, RegionId::heap, kLineA, 7);
  w.htm.suspend_tracking(0);
  AbortKind got = AbortKind::none;
  try {
    w.htm.flush_line(0, RegionId::heap, 0);
  } catch (const HtmAbort& a) {
    got = a.kind;
  }
  CHECK(got == AbortKind::illegalOperation);
  CHECK_NOTHROW(w.htm.flush_line(0, RegionId::redoLogs, 0));
  w.htm.abort_cleanup(0);
}

TEST_CASE("demarcation misuse raises illegal-operation") {
  World w(1);
  w.htm.htm_begin(0, TxMode::trackAnyAccess);
  CHECK_THROWS_AS(w.htm.htm_begin(0, TxMode::trackAnyAccess), HtmAbort);  // nesting
  w.htm.suspend_tracking(0);
  CHECK_THROWS_AS(w.htm.htm_commit(0), HtmAbort);      // commit while suspended
  CHECK_THROWS_AS(w.htm.suspend_tracking(0), HtmAbort);  // double suspend
  w.htm.abort_cleanup(0);
  CHECK_THROWS_AS(w.htm.resume_tracking(0), HtmAbort);  // resume outside a tx
  w.htm.abort_cleanup(0);
}

TEST_CASE("suspend/resume cost interpolates between thread-count endpoints") {
  World w1(1);
  CHECK(w1.htm.suspend_resume_cost_ns() == 350);
  World w64(64);
  CHECK(w64.htm.suspend_resume_cost_ns() == 1500);
  World w32(32);
  std::uint64_t c = w32.htm.suspend_resume_cost_ns();
  CHECK(c > 350);
  CHECK(c < 1500);
  CHECK(c == 350 + (1500 - 350) * 31 / 63);
}

TEST_CASE("resume charges the cost to the virtual clock") {
  FiberScheduler sched(1);
  sched.set_policy(round_robin_policy());
  PmSim pm(&sched, 128, small_sizes());
  HtmRuntime htm(&sched, &pm, {}, VictimPolicy::requesterWins, 10);
  std::uint64_t before = 0, after = 0;
  sched.run({[&] {
    htm.htm_begin(0, TxMode::trackAnyAccess);
    htm.write_word(0, RegionId::heap, kLineA, 1);
    htm.suspend_tracking(0);
    before = sched.peek_now_ns();
    htm.resume_tracking(0);
    after = sched.peek_now_ns();
    htm.htm_commit(0);
  }});
  CHECK(after - before >= 350);
}

TEST_CASE("retry wrapper: persistent aborts use all attempts then fall back to the lock") {
  World w(1, {}, VictimPolicy::requesterWins, 3);
  int htm_calls = 0, sgl_calls = 0, abort_cb = 0;
  TxOutcome out = w.htm.run_transaction(
      0,
      [&](bool sgl) {
        if (!sgl) {
          ++htm_calls;
          w.htm.htm_begin(0, TxMode::trackAnyAccess);
          w.htm.explicit_abort(0);
        } else {
          ++sgl_calls;
          w.htm.write_word(0, RegionId::heap, kLineA, 5);
        }
      },
      [&](AbortKind k) {
        ++abort_cb;
        CHECK(k == AbortKind::explicitAbort);
      });
  CHECK(out.committed);
  CHECK(out.used_sgl);
  CHECK(out.htm_attempts == 3);
  CHECK(out.last_abort == AbortKind::explicitAbort);
  CHECK(htm_calls == 3);
  CHECK(sgl_calls == 1);
  CHECK(abort_cb == 3);
  CHECK(w.pm.read_word(RegionId::heap, kLineA) == 5);
  CHECK_FALSE(w.htm.sgl_held());
}

TEST_CASE("retry wrapper: first-attempt success") {
  World w(2);
  TxOutcome out = w.htm.run_transaction(0, [&](bool sgl) {
    CHECK_FALSE(sgl);
    w.htm.htm_begin(0, TxMode::trackAnyAccess);
    w.htm.write_word(0, RegionId::heap, kLineA, 9);
    w.htm.htm_commit(0);
  });
  CHECK(out.committed);
  CHECK_FALSE(out.used_sgl);
  CHECK(out.htm_attempts == 1);
}

TEST_CASE("lock acquisition dooms in-flight transactions and waits them out") {
  FiberScheduler sched(2);
  sched.set_policy(round_robin_policy());
  PmSim pm(&sched, 128, small_sizes());
  HtmRuntime htm(&sched, &pm, {}, VictimPolicy::requesterWins, 10);
  AbortKind t0_abort = AbortKind::none;
  sched.run({
      [&] {
        try {
          htm.htm_begin(0, TxMode::trackAnyAccess);
          htm.write_word(0, RegionId::heap, kLineA, 1);
          for (int i = 0; i < 6; ++i) sched.yield(0);  // dawdle mid-transaction
          htm.htm_commit(0);
        } catch (const HtmAbort& a) {
          t0_abort = a.kind;
          htm.abort_cleanup(0);
        }
      },
      [&] {
        htm.acquire_sgl(1);
        CHECK(htm.sgl_held());
        htm.write_word(1, RegionId::heap, kLineB, 2);
        htm.release_sgl(1);
      },
  });
  CHECK_FALSE(sched.deadlocked());
  CHECK(t0_abort == AbortKind::sglPreempt);
  CHECK(pm.read_word(RegionId::heap, kLineA) == 0);
  CHECK(pm.read_word(RegionId::heap, kLineB) == 2);
}

TEST_CASE("lock acquisition waits for logical (non-speculative) readers") {
  FiberScheduler sched(2);
  sched.set_policy(round_robin_policy());
  PmSim pm(&sched, 128, small_sizes());
  HtmRuntime htm(&sched, &pm, {}, VictimPolicy::requesterWins, 10);
  bool reader_done = false, lock_ran = false;
  sched.run({
      [&] {
        htm.logical_begin(0);
        for (int i = 0; i < 6; ++i) sched.yield(0);
        CHECK_FALSE(lock_ran);  // lock must not run inside the reader window
        reader_done = true;
        htm.logical_end(0);
      },
      [&] {
        sched.yield(1);  // let the reader open its window first
        htm.acquire_sgl(1);
        lock_ran = true;
        CHECK(reader_done);
        htm.release_sgl(1);
      },
  });
  CHECK_FALSE(sched.deadlocked());
  CHECK(lock_ran);
}

TEST_CASE("exploration: conflicting writers never both survive an overlap") {
  std::uint64_t both_committed = 0, none_committed = 0, bad_value = 0;
  struct Shared {
    PmSim pm;
    HtmRuntime htm;
    int committed[2] = {0, 0};
    Shared(FiberScheduler& s)
        : pm(&s, 128, small_sizes()),
          htm(&s, &pm, {}, VictimPolicy::requesterWins, 10) {}
  };
  std::shared_ptr<Shared> world;
  auto res = explore_schedules(
      2,
      [&](FiberScheduler& sched) -> std::vector<std::function<void()>> {
        world = std::make_shared<Shared>(sched);
        auto prog = [&, w = world](int tid) {
          try {
            w->htm.htm_begin(tid, TxMode::trackAnyAccess);
            w->htm.write_word(tid, RegionId::heap, kLineA,
                              static_cast<std::uint64_t>(tid) + 1);
            w->htm.htm_commit(tid);
            w->committed[tid] = 1;
          } catch (const HtmAbort&) {
            w->htm.abort_cleanup(tid);
          }
        };
        return {[prog] { prog(0); }, [prog] { prog(1); }};
      },
      [&](FiberScheduler& sched) {
        REQUIRE_FALSE(sched.deadlocked());
        int n = world->committed[0] + world->committed[1];
        if (n == 2) ++both_committed;  // reachable: serial, non-overlapping runs
        if (n == 0) ++none_committed;
        std::uint64_t v = world->pm.read_word(RegionId::heap, kLineA);
        if (n == 1) {
          // sole committer's value must be the one that stuck
          std::uint64_t winner = world->committed[0] ? 1 : 2;
          if (v != winner) ++bad_value;
        } else if (v != 1 && v != 2) {
          ++bad_value;
        }
      },
      100000);
  CHECK_FALSE(res.capped);
  CHECK(res.schedules > 1);
  CHECK(both_committed > 0);   // serial interleavings exist
  CHECK(none_committed == 0);  // at most one victim per conflicting pair
  CHECK(bad_value == 0);
  // overlapping schedules where the conflict claimed a victim must also exist
  CHECK(res.schedules > both_committed);
}

TEST_CASE("exploration: publication is atomic — observers never see a torn pair") {
  std::uint64_t mixed = 0;
  struct Shared {
    PmSim pm;
    HtmRuntime htm;
    std::uint64_t a = 0, b = 0;
    Shared(FiberScheduler& s)
        : pm(&s, 128, small_sizes()),
          htm(&s, &pm, {}, VictimPolicy::requesterWins, 10) {}
  };
  std::shared_ptr<Shared> world;
  auto res = explore_schedules(
      2,
      [&](FiberScheduler& sched) -> std::vector<std::function<void()>> {
        world = std::make_shared<Shared>(sched);
        return {
            [w = world] {
              try {
                w->htm.htm_begin(0, TxMode::trackAnyAccess);
                w->htm.write_word(0, RegionId::heap, kLineA, 1);
                w->htm.write_word(0, RegionId::heap, kLineB, 2);
                w->htm.htm_commit(0);
              } catch (const HtmAbort&) {
                w->htm.abort_cleanup(0);
              }
            },
            [w = world] {
              // reads lines the writer owns: either dooms it (sees old state)
              // or runs after commit (sees all of the new state)
              w->a = w->htm.read_word(1, RegionId::heap, kLineA);
              w->b = w->htm.read_word(1, RegionId::heap, kLineB);
            },
        };
      },
      [&](FiberScheduler& sched) {
        REQUIRE_FALSE(sched.deadlocked());
        // a==1 means the commit already published; b must then be 2.
        // (a==0, b==2 is fine: the reads are two separate operations.)
        if (world->a == 1 && world->b != 2) ++mixed;
      },
      100000);
  CHECK_FALSE(res.capped);
  CHECK(res.schedules > 1);
  CHECK(mixed == 0);
}
