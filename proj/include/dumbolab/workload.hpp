#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dumbolab/common.hpp"
#include "dumbolab/engine.hpp"

namespace dumbolab {

// ---- transaction-type footprints -----------------------------------------

enum class TxType { stocklevel, orderstatus, delivery, payment, neworder };
constexpr int kTxTypes = 5;

inline const char* tx_type_name(TxType t) {
  switch (t) {
    case TxType::stocklevel: return "stocklevel";
    case TxType::orderstatus: return "orderstatus";
    case TxType::delivery: return "delivery";
    case TxType::payment: return "payment";
    case TxType::neworder: return "neworder";
  }
  return "?";
}

struct Footprint {
  double mean_reads;
  double mean_writes;  // 0 for read-only types
};

// Mean read/write counts per transaction type.
inline Footprint footprint_of(TxType t) {
  switch (t) {
    case TxType::stocklevel: return {122000.0, 0.0};
    case TxType::orderstatus: return {650.0, 0.0};
    case TxType::delivery: return {86000.0, 30.0};
    case TxType::payment: return {97.0, 5.0};
    case TxType::neworder: return {7500.0, 141.0};
  }
  return {0.0, 0.0};
}

inline bool tx_type_read_only(TxType t) {
  return footprint_of(t).mean_writes == 0.0;
}

// Only averages are known per type; counts are drawn log-normally around the
// mean with sigma such that P99 is about 3x the mean.
constexpr double kFootprintSigma = 0.5335;

inline std::uint64_t sample_count(SplitMix64& rng, double mean, double scale,
                                  double sigma = kFootprintSigma) {
  if (mean <= 0.0) return 0;
  double m = mean * scale;
  if (m < 1.0) return 1;  // floor rule: a nonzero mean never rounds to zero
  double mu = std::log(m) - sigma * sigma / 2.0;
  // Box-Muller with the deterministic generator.
  double u1 = rng.unit();
  double u2 = rng.unit();
  if (u1 < 1e-300) u1 = 1e-300;
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  double draw = std::exp(mu + sigma * z);
  std::uint64_t n = static_cast<std::uint64_t>(std::llround(draw));
  return n < 1 ? 1 : n;
}

// ---- transaction mix ------------------------------------------------------

struct Mix {
  std::array<int, kTxTypes> pct;  // indexed by TxType, sums to 100

  // Standard full-mix default.
  static Mix standard() { return Mix{{4, 4, 4, 43, 45}}; }
  // Read-dominated mix: 85% read-only transactions.
  static Mix read_dominated() { return Mix{{5, 80, 3, 7, 5}}; }

  // "name" or "t1:p1,t2:p2,..." (unlisted types get 0).
  static Mix parse(const std::string& text) {
    if (text == "standard") return standard();
    if (text == "read-dominated") return read_dominated();
    Mix m{{0, 0, 0, 0, 0}};
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      auto pos = item.find(':');
      if (pos == std::string::npos) throw UsageError("bad mix item: " + item);
      std::string name = item.substr(0, pos);
      int p = std::stoi(item.substr(pos + 1));
      bool known = false;
      for (int t = 0; t < kTxTypes; ++t)
        if (name == tx_type_name(static_cast<TxType>(t))) {
          m.pct[t] = p;
          known = true;
        }
      if (!known) throw UsageError("unknown transaction type: " + name);
    }
    if (m.total() != 100) throw UsageError("mix percentages must sum to 100");
    return m;
  }

  int total() const {
    int s = 0;
    for (int p : pct) s += p;
    return s;
  }

  std::string to_string() const {
    std::ostringstream os;
    bool first = true;
    for (int t = 0; t < kTxTypes; ++t) {
      if (pct[t] == 0) continue;
      if (!first) os << ",";
      os << tx_type_name(static_cast<TxType>(t)) << ":" << pct[t];
      first = false;
    }
    return os.str();
  }
};

// ---- TPC-C-lite generator -------------------------------------------------

// Warehouse-sharded key space over the heap region. Reads scatter uniformly
// across the thread's warehouse (stock lookups); writes land in contiguous
// word runs (order lines), which keeps update line footprints small the way
// the real benchmark's row layout does.
class TpccLite {
 public:
  struct Params {
    double scale = 1.0;
    int warehouses = 1;
    bool disjoint = true;  // thread t only touches warehouse t % warehouses
    std::uint64_t heap_bytes = 0;
    std::uint64_t line_bytes = 128;
    std::uint64_t seed = 1;
    Mix mix = Mix::standard();
  };

  struct Tx {
    TxType type;
    bool read_only;
    std::vector<std::uint64_t> read_addrs;
    std::vector<std::uint64_t> write_addrs;
  };

  explicit TpccLite(Params p) : p_(p) {
    if (p_.warehouses < 1) throw UsageError("need at least one warehouse");
    shard_bytes_ = p_.heap_bytes / p_.warehouses;
    shard_bytes_ -= shard_bytes_ % p_.line_bytes;
    if (shard_bytes_ < p_.line_bytes)
      throw UsageError("heap too small for the warehouse count");
  }

  TxType draw_type(SplitMix64& rng) const {
    int roll = static_cast<int>(rng.below(100));
    for (int t = 0; t < kTxTypes; ++t) {
      roll -= p_.mix.pct[t];
      if (roll < 0) return static_cast<TxType>(t);
    }
    return TxType::neworder;
  }

  Tx gen(SplitMix64& rng, int tid) const {
    Tx tx;
    tx.type = draw_type(rng);
    tx.read_only = tx_type_read_only(tx.type);
    Footprint fp = footprint_of(tx.type);
    std::uint64_t shard =
        p_.disjoint ? (tid % p_.warehouses) : rng.below(p_.warehouses);
    std::uint64_t base = shard * shard_bytes_;
    std::uint64_t words = shard_bytes_ / 8;

    std::uint64_t n_reads = sample_count(rng, fp.mean_reads, p_.scale);
    tx.read_addrs.reserve(n_reads);
    for (std::uint64_t i = 0; i < n_reads; ++i)
      tx.read_addrs.push_back(base + rng.below(words) * 8);

    std::uint64_t n_writes = sample_count(rng, fp.mean_writes, p_.scale);
    if (n_writes > 0) {
      // Contiguous runs: start at a random line, write consecutive words.
      std::uint64_t start_word = rng.below(words);
      for (std::uint64_t i = 0; i < n_writes; ++i)
        tx.write_addrs.push_back(base + ((start_word + i) % words) * 8);
    }
    return tx;
  }

  // Turn a generated transaction into an engine body. Written values come
  // from the shared unique-value counter so the checkers can trace them.
  TxBody body(const Tx& tx, std::atomic<std::uint64_t>& value_counter) const {
    return [tx, &value_counter](TxCtx& c) {
      for (std::uint64_t a : tx.read_addrs) c.read(a);
      for (std::uint64_t a : tx.write_addrs)
        c.write(a, value_counter.fetch_add(1));
    };
  }

  const Params& params() const { return p_; }
  std::uint64_t shard_bytes() const { return shard_bytes_; }

 private:
  Params p_;
  std::uint64_t shard_bytes_;
};

// ---- synthetic replay prefill --------------------------------------------

// Per-thread transaction streams for the replay benchmark: write counts
// uniform in {1..20}, addresses uniform over the heap.
struct ReplayTx {
  std::uint64_t dur_ts;
  std::vector<Access> writes;
};

inline std::vector<std::vector<ReplayTx>> gen_synthetic_replay(
    int threads, std::uint64_t txs_per_thread, std::uint64_t heap_bytes,
    std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<ReplayTx>> out(threads);
  std::uint64_t words = heap_bytes / 8;
  std::uint64_t next_ts = 0;
  std::uint64_t value = 1;
  // Round-robin timestamp assignment across threads, like a balanced run.
  for (std::uint64_t i = 0; i < txs_per_thread; ++i) {
    for (int t = 0; t < threads; ++t) {
      ReplayTx tx;
      tx.dur_ts = next_ts++;
      std::uint64_t n = 1 + rng.below(20);
      for (std::uint64_t k = 0; k < n; ++k)
        tx.writes.push_back({rng.below(words) * 8, value++});
      out[t].push_back(std::move(tx));
    }
  }
  return out;
}

}  // namespace dumbolab
