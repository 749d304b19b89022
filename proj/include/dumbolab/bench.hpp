#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dumbolab/baselines.hpp"
#include "dumbolab/config.hpp"
#include "dumbolab/dumbo.hpp"
#include "dumbolab/workload.hpp"

namespace dumbolab {

// ---- engine factory -------------------------------------------------------

struct EngineStack {
  std::unique_ptr<ExecEnv> env;
  std::unique_ptr<PmSim> pm;
  std::unique_ptr<HtmRuntime> htm;
  std::unique_ptr<DurMarkerArray> markers;
  std::unique_ptr<HistoryRecorder> hist;
  std::unique_ptr<Engine> engine;
};

inline std::unique_ptr<Engine> make_engine(const std::string& name,
                                           ExecEnv* env, PmSim* pm,
                                           HtmRuntime* htm,
                                           DurMarkerArray* markers,
                                           HistoryRecorder* rec) {
  if (name == "dumbo-si")
    return std::make_unique<DumboEngine>(env, pm, htm, markers, rec,
                                         DumboEngine::Isolation::si);
  if (name == "dumbo-opa")
    return std::make_unique<DumboEngine>(env, pm, htm, markers, rec,
                                         DumboEngine::Isolation::opacity);
  if (name == "spht") return std::make_unique<SphtEngine>(env, pm, htm, rec);
  if (name == "naive-combo")
    return std::make_unique<NaiveComboEngine>(env, pm, htm, rec);
  if (name == "htm-sgl")
    return std::make_unique<HtmSglEngine>(env, pm, htm, rec);
  throw UsageError("unknown engine: " + name);
}

inline EngineStack build_stack(const Config& cfg, bool deterministic = false) {
  EngineStack s;
  int threads = static_cast<int>(cfg.get_u64("dumbo.threads", 4));
  if (deterministic) {
    auto sched = std::make_unique<FiberScheduler>(threads);
    sched->set_policy(round_robin_policy());
    s.env = std::move(sched);
  } else {
    s.env = std::make_unique<NativeEnv>(threads);
  }
  s.pm = PmSim::from_config(s.env.get(), cfg);
  s.htm = HtmRuntime::from_config(s.env.get(), s.pm.get(), cfg);
  s.markers = std::make_unique<DurMarkerArray>(
      s.env.get(), s.pm.get(), cfg.get_u64("pm.marker_slots", 1024));
  s.hist = std::make_unique<HistoryRecorder>();
  s.engine = make_engine(cfg.get("engine", "dumbo-si"), s.env.get(),
                         s.pm.get(), s.htm.get(), s.markers.get(),
                         s.hist.get());
  return s;
}

// ---- metrics --------------------------------------------------------------

struct MetricsRecord {
  std::string engine;
  int threads = 0;
  std::string mix;
  std::uint64_t commits = 0;
  std::uint64_t htm_aborts = 0;  // failed HTM attempts across all txs
  std::uint64_t sgl_runs = 0;
  std::uint64_t capacity_aborts = 0;  // txs whose last abort was capacity
  std::uint64_t total_ns = 0;
  // latency buckets (virtual/physical ns summed over committed txs)
  std::uint64_t plain_exec_ns = 0;
  std::uint64_t iso_wait_ns = 0;
  std::uint64_t redo_flush_wait_ns = 0;
  std::uint64_t dur_wait_ns = 0;
  std::uint64_t marker_flush_ns = 0;
  // wait-shape counters
  std::uint64_t dur_wait_peers = 0;
  std::uint64_t dur_wait_skipped = 0;
};

inline void fold_record(MetricsRecord& m, const TxRecord& r) {
  if (r.status != TxStatus::committed) return;
  ++m.commits;
  m.htm_aborts += r.htm_attempts > 0 ? r.htm_attempts - (r.used_sgl ? 0 : 1) : 0;
  if (r.used_sgl) ++m.sgl_runs;
  int cap_read = static_cast<int>(AbortKind::capacityRead);
  int cap_write = static_cast<int>(AbortKind::capacityWrite);
  if (r.last_abort_code == cap_read || r.last_abort_code == cap_write)
    ++m.capacity_aborts;
  m.plain_exec_ns += r.commit_call_ns - r.begin_ns;
  m.iso_wait_ns += r.iso_wait_ns;
  m.redo_flush_wait_ns += r.fence_wait_ns;
  m.dur_wait_ns += r.dur_wait_ns;
  std::uint64_t accounted = r.fence_wait_ns + r.dur_wait_ns;
  std::uint64_t post_commit =
      r.commit_ns > 0 && r.ack_ns > r.commit_ns ? r.ack_ns - r.commit_ns : 0;
  m.marker_flush_ns += post_commit > accounted ? post_commit - accounted : 0;
  m.dur_wait_peers += r.dur_wait_peers;
  m.dur_wait_skipped += r.dur_wait_skipped;
}

inline std::string csv_header() {
  return "engine,threads,mix,commits,htm_aborts,sgl_runs,capacity_aborts,"
         "total_ns,plain_exec_ns,iso_wait_ns,redo_flush_wait_ns,dur_wait_ns,"
         "marker_flush_ns,dur_wait_peers,dur_wait_skipped";
}

inline std::string csv_row(const MetricsRecord& m) {
  std::ostringstream os;
  os << m.engine << "," << m.threads << ",\"" << m.mix << "\"," << m.commits << ","
     << m.htm_aborts << "," << m.sgl_runs << "," << m.capacity_aborts << ","
     << m.total_ns << "," << m.plain_exec_ns << "," << m.iso_wait_ns << ","
     << m.redo_flush_wait_ns << "," << m.dur_wait_ns << ","
     << m.marker_flush_ns << "," << m.dur_wait_peers << ","
     << m.dur_wait_skipped;
  return os.str();
}

// ---- benchmark driver -----------------------------------------------------

struct BenchResult {
  MetricsRecord metrics;
  std::vector<TxRecord> history;
};

// Runs txs_per_thread transactions on every thread. In deterministic mode
// the workers run as fibers on the scheduler; in native mode as real threads.
inline BenchResult run_benchmark(const Config& cfg, bool deterministic = false,
                                 EngineStack* keep_stack = nullptr) {
  EngineStack s = build_stack(cfg, deterministic);
  int threads = s.env->thread_count();
  std::uint64_t txs = cfg.get_u64("bench.txs_per_thread", 200);
  std::uint64_t seed = cfg.get_u64("bench.seed", 1);

  TpccLite::Params wp;
  wp.scale = cfg.get_f64("bench.scale", 1.0);
  wp.warehouses = static_cast<int>(cfg.get_u64("bench.warehouses", threads));
  wp.disjoint = cfg.get_bool("bench.disjoint_warehouses", true);
  wp.heap_bytes = s.pm->region_size(RegionId::heap);
  wp.line_bytes = s.pm->line_size();
  wp.mix = Mix::parse(cfg.get("bench.mix", "standard"));
  TpccLite gen(wp);

  std::atomic<std::uint64_t> value_counter{1};
  auto worker = [&](int tid) {
    SplitMix64 rng(seed * 0x9e3779b9u + tid + 1);
    for (std::uint64_t i = 0; i < txs; ++i) {
      TpccLite::Tx tx = gen.gen(rng, tid);
      s.engine->run(tid, tx.read_only, gen.body(tx, value_counter));
    }
  };

  std::uint64_t t0 = s.env->peek_now_ns();
  if (deterministic) {
    auto* sched = static_cast<FiberScheduler*>(s.env.get());
    std::vector<std::function<void()>> progs;
    for (int t = 0; t < threads; ++t) progs.push_back([&worker, t] { worker(t); });
    sched->run(progs);
    if (sched->deadlocked()) throw UsageError("benchmark deadlocked");
  } else {
    std::vector<std::thread> ths;
    for (int t = 0; t < threads; ++t) ths.emplace_back(worker, t);
    for (auto& th : ths) th.join();
  }

  BenchResult res;
  res.history = s.hist->take();
  res.metrics.engine = s.engine->name();
  res.metrics.threads = threads;
  res.metrics.mix = wp.mix.to_string();
  res.metrics.total_ns = s.env->peek_now_ns() - t0;
  for (const TxRecord& r : res.history) fold_record(res.metrics, r);
  if (keep_stack) *keep_stack = std::move(s);
  return res;
}

// ---- replay benchmark -----------------------------------------------------

// Compares the per-transaction replay cost of the ordered marker array
// (one slot probe per transaction) against a scan-based replayer that must
// re-scan every thread's log head to find the next timestamp. Costs are
// deterministic probe counts, not wall time.
struct ReplayBenchResult {
  int threads = 0;
  std::uint64_t txs = 0;
  double array_probes_per_tx = 0.0;
  double scan_probes_per_tx = 0.0;
};

inline ReplayBenchResult replay_bench(int threads, std::uint64_t txs_per_thread,
                                      std::uint64_t heap_bytes,
                                      std::uint64_t seed) {
  auto streams =
      gen_synthetic_replay(threads, txs_per_thread, heap_bytes, seed);
  std::uint64_t total = threads * txs_per_thread;

  // Ordered marker array: replay walks timestamps 0..total-1, probing the
  // slot for each exactly once (no holes in a prefill).
  std::uint64_t array_probes = total;

  // Scan-based: per replayed transaction, peek at every thread's next
  // pending timestamp and take the minimum.
  std::uint64_t scan_probes = 0;
  std::vector<std::size_t> head(threads, 0);
  for (std::uint64_t done = 0; done < total; ++done) {
    int best = -1;
    std::uint64_t best_ts = ~0ull;
    for (int t = 0; t < threads; ++t) {
      ++scan_probes;
      if (head[t] < streams[t].size() &&
          streams[t][head[t]].dur_ts < best_ts) {
        best_ts = streams[t][head[t]].dur_ts;
        best = t;
      }
    }
    ++head[best];
  }

  ReplayBenchResult res;
  res.threads = threads;
  res.txs = total;
  res.array_probes_per_tx = static_cast<double>(array_probes) / total;
  res.scan_probes_per_tx = static_cast<double>(scan_probes) / total;
  return res;
}

}  // namespace dumbolab
