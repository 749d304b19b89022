// dumbolab: command-line front end for the durable-HTM laboratory.
//
//   dumbolab bench        [--config F] [--set k=v] [--deterministic]
//                         [--save-image DIR]
//   dumbolab check        [--config F] [--set k=v] [--engine E]
//                         [--litmus NAME | --corpus FILE]
//                         [--max-schedules N]
//   dumbolab replay-bench [--threads-list 2,4,8] [--txs N] [--heap-mb M]
//                         [--seed S]
//   dumbolab recover      <image-dir> [--max-holes N]
//   dumbolab print-config [--config F] [--set k=v]
//
// Configuration precedence: defaults < --config files (in order) <
// DUMBOLAB_* environment < --set.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dumbolab/bench.hpp"
#include "dumbolab/checks.hpp"
#include "dumbolab/explorer.hpp"
#include "dumbolab/litmus.hpp"
#include "dumbolab/replayer.hpp"

using namespace dumbolab;

namespace {

struct Args {
  std::vector<std::string> positional;
  std::vector<std::pair<std::string, std::string>> options;  // --x value
  std::vector<std::string> flags;                            // --x

  bool has_flag(const std::string& f) const {
    for (const auto& g : flags)
      if (g == f) return true;
    return false;
  }
  std::string opt(const std::string& name, const std::string& dflt = "") const {
    std::string v = dflt;
    for (const auto& [k, val] : options)
      if (k == name) v = val;  // last occurrence wins
    return v;
  }
};

const char* kValueOptions[] = {"--config", "--set",  "--engine",
                               "--litmus", "--corpus", "--max-schedules",
                               "--threads-list", "--txs", "--heap-mb",
                               "--seed", "--max-holes", "--save-image"};

Args parse_args(int argc, char** argv) {
  Args a;
  for (int i = 2; i < argc; ++i) {
    std::string s = argv[i];
    if (s.rfind("--", 0) != 0) {
      a.positional.push_back(s);
      continue;
    }
    bool takes_value = false;
    for (const char* o : kValueOptions)
      if (s == o) takes_value = true;
    if (takes_value) {
      if (i + 1 >= argc) throw UsageError(s + " needs a value");
      a.options.emplace_back(s, argv[++i]);
    } else {
      a.flags.push_back(s);
    }
  }
  return a;
}

Config build_config(const Args& a) {
  Config cfg = Config::defaults();
  for (const auto& [k, v] : a.options)
    if (k == "--config") cfg.load_file(v);
  cfg.apply_env_overrides();
  for (const auto& [k, v] : a.options)
    if (k == "--set") cfg.parse_line(v);
  return cfg;
}

int cmd_bench(const Args& a) {
  Config cfg = build_config(a);
  bool det = a.has_flag("--deterministic");
  EngineStack stack;
  BenchResult res = run_benchmark(cfg, det, &stack);
  std::cout << csv_header() << "\n" << csv_row(res.metrics) << "\n";
  std::string dir = a.opt("--save-image");
  if (!dir.empty()) stack.pm->save_durable(dir);
  return 0;
}

// Pick the checker that matches the engine's isolation claim.
CheckResult check_history(const std::string& engine,
                          const std::vector<TxRecord>& recs) {
  CheckResult p1 = check_property1(recs);
  if (!p1.ok()) return p1;
  if (engine == "dumbo-si" || engine == "naive-combo") return check_si(recs);
  return check_opacity(recs);
}

int cmd_check(const Args& a) {
  Config cfg = build_config(a);
  std::string engine = a.opt("--engine", cfg.get("engine", "dumbo-si"));
  std::uint64_t max_schedules =
      std::stoull(a.opt("--max-schedules", "400000"));

  std::vector<Litmus> corpus;
  std::string corpus_file = a.opt("--corpus");
  std::string pick = a.opt("--litmus");
  if (!corpus_file.empty()) {
    std::ifstream in(corpus_file);
    if (!in) throw UsageError("cannot open corpus file: " + corpus_file);
    std::stringstream ss;
    ss << in.rdbuf();
    corpus.push_back(parse_litmus(ss.str(), corpus_file));
  } else {
    for (const Litmus& l : litmus_corpus())
      if (pick.empty() || l.name == pick) corpus.push_back(l);
    if (corpus.empty() && !pick.empty())
      for (const Litmus& l : litmus_extras())
        if (l.name == pick) corpus.push_back(l);
    if (corpus.empty()) throw UsageError("no litmus named " + pick);
  }

  bool all_ok = true;
  for (const Litmus& lit : corpus) {
    int threads = static_cast<int>(lit.threads.size());
    // Litmus worlds are rebuilt once per explored schedule, so they use
    // lab-sized regions instead of the benchmark-sized pm.* settings.
    struct World {
      PmSim pm;
      std::unique_ptr<HtmRuntime> htm;
      DurMarkerArray markers;
      HistoryRecorder hist;
      std::unique_ptr<Engine> eng;
      static PmSim::Sizes lab_sizes() {
        PmSim::Sizes s;
        s.heap = 128 * 8;   // litmus variables live in the first few lines
        s.logs = 128 * 16;
        s.markers = 128 + 16 * kMarkerBytes;
        return s;
      }
      World(ExecEnv* e, const Config& cfg, const std::string& name)
          : pm(e, 128, lab_sizes(),
               cfg.get_u64("pm.flush_latency_ns", 310)),
            htm(HtmRuntime::from_config(e, &pm, cfg)),
            markers(e, &pm, 16),
            eng(make_engine(name, e, &pm, htm.get(), &markers, &hist)) {}
    };
    std::shared_ptr<World> w;
    std::uint64_t bad = 0, unchecked = 0;
    std::string first_violation;
    ExploreResult res = explore_schedules(
        threads,
        [&](FiberScheduler& sched) {
          w = std::make_shared<World>(&sched, cfg, engine);
          return litmus_programs(lit, *w->eng, w->pm.line_size());
        },
        [&](FiberScheduler& sched) {
          if (sched.deadlocked()) return;  // counted by the explorer
          auto recs = w->hist.take();
          CheckResult r = check_history(engine, recs);
          if (r.verdict == Verdict::unchecked) {
            ++unchecked;
          } else if (!r.ok()) {
            ++bad;
            if (first_violation.empty() && !r.violations.empty())
              first_violation = r.violations[0].what;
          }
        },
        max_schedules);
    bool ok = bad == 0 && res.deadlocks == 0;
    all_ok = all_ok && ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << lit.name << " engine="
              << engine << " schedules=" << res.schedules
              << " redundant=" << res.redundant
              << (res.capped ? " (capped)" : " (exhausted)")
              << " violations=" << bad << " deadlocks=" << res.deadlocks;
    if (unchecked) std::cout << " unchecked=" << unchecked;
    std::cout << "\n";
    if (!first_violation.empty())
      std::cout << "  first: " << first_violation << "\n";
  }
  return all_ok ? 0 : 1;
}

int cmd_replay_bench(const Args& a) {
  std::uint64_t txs = std::stoull(a.opt("--txs", "10000"));
  std::uint64_t heap = std::stoull(a.opt("--heap-mb", "16")) << 20;
  std::uint64_t seed = std::stoull(a.opt("--seed", "1"));
  std::string list = a.opt("--threads-list", "2,4,8,16");

  std::cout << "threads,txs,array_probes_per_tx,scan_probes_per_tx\n";
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int t = std::stoi(item);
    ReplayBenchResult r = replay_bench(t, txs, heap, seed);
    std::cout << r.threads << "," << r.txs << "," << r.array_probes_per_tx
              << "," << r.scan_probes_per_tx << "\n";
  }
  return 0;
}

int cmd_recover(const Args& a) {
  if (a.positional.empty()) throw UsageError("recover needs an image dir");
  std::string dir = a.positional[0];
  std::uint64_t max_holes = std::stoull(a.opt("--max-holes", "64"));

  std::uint64_t line_size = 0;
  CrashImage img = PmSim::load_image(dir, &line_size);
  std::uint64_t marker_bytes =
      img.durable[static_cast<int>(RegionId::durMarkers)].size();
  std::uint64_t slots = (marker_bytes - line_size) / kMarkerBytes;

  RecoveryReport rep = recover_image(img, line_size, slots, max_holes);
  std::cout << "image: " << dir << "\n"
            << "line_size: " << line_size << "\n"
            << "marker_slots: " << slots << "\n"
            << "start_tail: " << rep.start_tail << "\n"
            << "applied: " << rep.applied.size() << "\n"
            << "aborts: " << rep.aborts << "\n"
            << "holes_skipped: " << rep.skipped_holes.size() << "\n"
            << "resume_tail: " << rep.resume_tail << "\n"
            << "corruption: " << (rep.corruption ? "yes" : "no") << "\n";
  return rep.corruption ? 1 : 0;
}

int cmd_print_config(const Args& a) {
  Config cfg = build_config(a);
  std::cout << cfg.dump();
  return 0;
}

void usage() {
  std::cerr << "usage: dumbolab <bench|check|replay-bench|recover|"
               "print-config> [options]\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 2;
  }
  std::string cmd = argv[1];
  try {
    Args a = parse_args(argc, argv);
    if (cmd == "bench") return cmd_bench(a);
    if (cmd == "check") return cmd_check(a);
    if (cmd == "replay-bench") return cmd_replay_bench(a);
    if (cmd == "recover") return cmd_recover(a);
    if (cmd == "print-config") return cmd_print_config(a);
    usage();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dumbolab: " << e.what() << "\n";
    return 2;
  }
}
