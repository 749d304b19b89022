#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dumbolab/history.hpp"
#include "dumbolab/pm.hpp"
#include "dumbolab/replayer.hpp"

namespace dumbolab {

// History oracles. All of them recover the read-from relation from observed
// values, which works because litmus/workload writes are globally unique and
// nonzero (zero is the initial value of every word).

enum class Verdict { pass, fail, unchecked };

struct Violation {
  std::string what;
};

struct CheckResult {
  Verdict verdict = Verdict::pass;
  std::vector<Violation> violations;
  bool ok() const { return verdict == Verdict::pass; }
};

namespace detail {

// Index of writer records by written value.
inline std::map<std::uint64_t, const TxRecord*> writers_by_value(
    const std::vector<TxRecord>& hist) {
  std::map<std::uint64_t, const TxRecord*> by_value;
  for (const TxRecord& r : hist)
    for (const Access& w : r.writes) by_value[w.value] = &r;
  return by_value;
}

inline std::string tx_label(const TxRecord& r) {
  std::ostringstream os;
  os << "tx" << r.tx_id << "(t" << r.thread_id << ")";
  return os.str();
}

}  // namespace detail

// Two transactions are concurrent when their windows from begin to the
// commit-call overlap; no read-from edge may connect a concurrent pair.
inline CheckResult check_property1(const std::vector<TxRecord>& hist) {
  CheckResult res;
  auto by_value = detail::writers_by_value(hist);
  for (const TxRecord& r : hist) {
    for (const Access& rd : r.reads) {
      auto it = by_value.find(rd.value);
      if (it == by_value.end()) continue;  // initial value or own write
      const TxRecord& w = *it->second;
      if (w.tx_id == r.tx_id) continue;
      bool overlap =
          r.begin_ns < w.commit_call_ns && w.begin_ns < r.commit_call_ns;
      if (overlap) {
        std::ostringstream os;
        os << detail::tx_label(r) << " read value " << rd.value << " at addr "
           << rd.addr << " from concurrent " << detail::tx_label(w);
        res.violations.push_back({os.str()});
      }
    }
  }
  if (!res.violations.empty()) res.verdict = Verdict::fail;
  return res;
}

// Snapshot isolation: every committed transaction's reads (minus its own
// writes) match some prefix of the update commits in publication order, and
// the concurrency property above holds. Write skew is deliberately not a
// failure here.
inline CheckResult check_si(const std::vector<TxRecord>& hist) {
  CheckResult res = check_property1(hist);
  std::vector<const TxRecord*> updates;
  for (const TxRecord& r : hist)
    if (!r.read_only && r.status == TxStatus::committed) updates.push_back(&r);
  std::sort(updates.begin(), updates.end(),
            [](const TxRecord* a, const TxRecord* b) {
              return a->commit_ns < b->commit_ns;
            });
  for (const TxRecord& r : hist) {
    if (r.status != TxStatus::committed) continue;
    bool found = false;
    for (std::size_t k = 0; k <= updates.size() && !found; ++k) {
      std::map<std::uint64_t, std::uint64_t> state;
      for (std::size_t i = 0; i < k; ++i)
        for (const Access& w : updates[i]->writes) state[w.addr] = w.value;
      bool match = true;
      for (const Access& rd : r.reads) {
        bool own = false;
        for (const Access& w : r.writes)
          if (w.addr == rd.addr && w.value == rd.value) own = true;
        if (own) continue;
        auto it = state.find(rd.addr);
        std::uint64_t expect = it == state.end() ? 0 : it->second;
        if (rd.value != expect) {
          match = false;
          break;
        }
      }
      found = match;
    }
    if (!found) {
      std::ostringstream os;
      os << detail::tx_label(r)
         << " reads match no single committed-prefix snapshot";
      res.violations.push_back({os.str()});
    }
  }
  if (!res.violations.empty()) res.verdict = Verdict::fail;
  return res;
}

// Opacity via brute-force serialization search: some total order of the
// committed transactions respects real-time order (acknowledgment before a
// later begin) and makes every read see the latest preceding write.
// Histories beyond 8 transactions get an explicit "unchecked" verdict.
inline CheckResult check_opacity(const std::vector<TxRecord>& hist) {
  CheckResult res;
  std::vector<const TxRecord*> txs;
  for (const TxRecord& r : hist)
    if (r.status == TxStatus::committed) txs.push_back(&r);
  if (txs.size() > 8) {
    res.verdict = Verdict::unchecked;
    res.violations.push_back(
        {"history too large for serialization search (> 8 transactions)"});
    return res;
  }
  std::vector<std::size_t> order(txs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end());
  do {
    bool ok = true;
    for (std::size_t i = 0; i + 1 < order.size() && ok; ++i)
      for (std::size_t j = i + 1; j < order.size() && ok; ++j)
        if (txs[order[j]]->ack_ns < txs[order[i]]->begin_ns) ok = false;
    if (!ok) continue;
    std::map<std::uint64_t, std::uint64_t> state;
    for (std::size_t idx : order) {
      const TxRecord& r = *txs[idx];
      std::map<std::uint64_t, std::uint64_t> own;
      for (const Access& rd : r.reads) {
        auto o = own.find(rd.addr);
        if (o != own.end()) {
          if (rd.value != o->second) ok = false;
          continue;
        }
        auto it = state.find(rd.addr);
        std::uint64_t expect = it == state.end() ? 0 : it->second;
        bool own_later = false;  // read-before-write of a self-written addr
        for (const Access& w : r.writes)
          if (w.addr == rd.addr && w.value == rd.value) own_later = true;
        if (rd.value != expect && !own_later) ok = false;
      }
      for (const Access& w : r.writes) {
        own[w.addr] = w.value;
        state[w.addr] = w.value;
      }
      if (!ok) break;
    }
    if (ok) return res;  // a valid serialization exists
  } while (std::next_permutation(order.begin(), order.end()));
  res.verdict = Verdict::fail;
  res.violations.push_back(
      {"no real-time-respecting serialization explains the reads"});
  return res;
}

// Durable consistency of one recovered image against the run's history.
//   hist      all committed update records from the run (superset)
//   acked_ts  durability timestamps acknowledged before this crash point
//   rep       recovery result for the image
//   img       the image itself (heap words are compared against replaying
//             exactly the applied set in timestamp order)
inline CheckResult check_durable_consistency(const std::vector<TxRecord>& hist,
                                             const std::vector<std::int64_t>& acked_ts,
                                             const RecoveryReport& rep,
                                             const CrashImage& img) {
  CheckResult res;
  std::map<std::int64_t, const TxRecord*> by_ts;
  for (const TxRecord& r : hist)
    if (!r.read_only && r.dur_ts >= 0) by_ts[r.dur_ts] = &r;

  auto applied = [&rep](std::uint64_t ts) {
    return std::find(rep.applied.begin(), rep.applied.end(), ts) !=
           rep.applied.end();
  };

  // (a) recovered set is a subset of committed transactions...
  for (std::uint64_t ts : rep.applied)
    if (!by_ts.count(static_cast<std::int64_t>(ts)))
      res.violations.push_back(
          {"recovered timestamp " + std::to_string(ts) +
           " does not belong to any committed transaction"});

  // ...closed under read-from: a survivor may not have read a lost write.
  auto by_value = detail::writers_by_value(hist);
  for (std::uint64_t ts : rep.applied) {
    auto it = by_ts.find(static_cast<std::int64_t>(ts));
    if (it == by_ts.end()) continue;
    for (const Access& rd : it->second->reads) {
      auto w = by_value.find(rd.value);
      if (w == by_value.end()) continue;
      const TxRecord& src = *w->second;
      if (src.tx_id == it->second->tx_id || src.dur_ts < 0) continue;
      if (!applied(static_cast<std::uint64_t>(src.dur_ts)))
        res.violations.push_back(
            {"recovered " + detail::tx_label(*it->second) + " read from lost " +
             detail::tx_label(src)});
    }
  }

  // (b) everything acknowledged before the crash survived.
  for (std::int64_t ts : acked_ts)
    if (ts >= 0 && !applied(static_cast<std::uint64_t>(ts)))
      res.violations.push_back({"acknowledged timestamp " + std::to_string(ts) +
                                " was not recovered"});

  // (c) the heap equals a replay of exactly the applied set in order.
  std::map<std::uint64_t, std::uint64_t> expect;
  for (const auto& [ts, rec] : by_ts)
    for (const Access& w : rec->writes) expect.emplace(w.addr, 0);
  std::vector<std::uint64_t> ordered(rep.applied);
  std::sort(ordered.begin(), ordered.end());
  for (std::uint64_t ts : ordered) {
    auto it = by_ts.find(static_cast<std::int64_t>(ts));
    if (it == by_ts.end()) continue;
    for (const Access& w : it->second->writes) expect[w.addr] = w.value;
  }
  for (const auto& [addr, val] : expect) {
    std::uint64_t got = img.read_word(RegionId::heap, addr);
    if (got != val)
      res.violations.push_back(
          {"heap word " + std::to_string(addr) + " recovered as " +
           std::to_string(got) + ", expected " + std::to_string(val)});
  }

  if (!res.violations.empty()) res.verdict = Verdict::fail;
  return res;
}

}  // namespace dumbolab
