#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dumbolab/common.hpp"
#include "dumbolab/engine.hpp"

namespace dumbolab {

// Tiny concurrent programs for schedule exploration. Line-oriented text, one
// thread program per line:
//
//   up w:0 r:1      # update transaction: write var 0, read var 1
//   ro r:0 r:0      # read-only transaction: read var 0 twice
//
// Variables are small integers; the runner places each on its own cache line
// and assigns globally unique nonzero write values so the checkers can
// recover the read-from relation from observed values alone.
struct LitmusOp {
  bool is_read;
  std::uint64_t var;
};

struct LitmusThread {
  bool read_only;
  std::vector<LitmusOp> ops;
};

struct Litmus {
  std::string name;
  std::vector<LitmusThread> threads;
};

inline Litmus parse_litmus(const std::string& text, std::string name = "") {
  Litmus lit;
  lit.name = std::move(name);
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    LitmusThread th;
    if (head == "up")
      th.read_only = false;
    else if (head == "ro")
      th.read_only = true;
    else
      throw UsageError("litmus thread must start with 'up' or 'ro': " + head);
    std::string tok;
    while (ls >> tok) {
      if (tok.size() < 3 || tok[1] != ':' || (tok[0] != 'r' && tok[0] != 'w'))
        throw UsageError("bad litmus op: " + tok);
      LitmusOp op;
      op.is_read = tok[0] == 'r';
      op.var = std::stoull(tok.substr(2));
      if (op.is_read && th.read_only) {
        // fine
      } else if (!op.is_read && th.read_only) {
        throw UsageError("write in a read-only litmus thread");
      }
      th.ops.push_back(op);
    }
    if (th.ops.empty()) throw UsageError("empty litmus thread program");
    lit.threads.push_back(std::move(th));
  }
  if (lit.threads.empty()) throw UsageError("litmus has no thread programs");
  return lit;
}

// One runnable program per litmus thread. Variable v lives at word offset
// v * line_bytes; write values are unique across the whole litmus.
inline std::vector<std::function<void()>> litmus_programs(
    const Litmus& lit, Engine& eng, std::uint64_t line_bytes = 128) {
  std::vector<std::function<void()>> progs;
  for (std::size_t t = 0; t < lit.threads.size(); ++t) {
    const LitmusThread& th = lit.threads[t];
    progs.push_back([&th, &eng, t, line_bytes] {
      eng.run(static_cast<int>(t), th.read_only, [&th, t,
                                                  line_bytes](TxCtx& tx) {
        std::uint64_t k = 0;
        for (const LitmusOp& op : th.ops) {
          ++k;
          if (op.is_read)
            tx.read(op.var * line_bytes);
          else
            tx.write(op.var * line_bytes, 100 * (t + 1) + k);
        }
      });
    });
  }
  return progs;
}

// The litmus corpus used by the exhaustive isolation checks: 2-3 threads,
// at most 4 shared-memory steps per thread. The first entry is the
// non-repeatable-read scenario (a reader revisiting a location while a
// writer commits).
inline std::vector<Litmus> litmus_corpus() {
  std::vector<Litmus> out;
  auto add = [&out](const char* name, const char* text) {
    out.push_back(parse_litmus(text, name));
  };
  add("nonrepeatable-read", "ro r:0 r:0\nup w:0\n");
  add("store-buffer", "up w:0 r:1\nup w:1 r:0\n");
  add("write-skew", "up r:1 w:0\nup r:0 w:1\n");
  add("message-pass", "up w:0 w:1\nro r:1 r:0\n");
  add("load-buffer", "up r:0 w:1\nup r:1 w:0\n");
  add("read-my-peer", "up w:0 r:0\nup r:0 w:1\n");
  add("long-reader", "up w:0\nro r:0 r:1 r:0 r:1\n");
  add("anti-dependence", "up r:0 w:1\nro r:1 r:0\n");
  add("one-writer-two-readers", "up w:0\nro r:0\nro r:0\n");
  add("split-readers", "up w:0\nro r:0\nro r:1\n");
  return out;
}

// Heavier interleaving studies kept out of the exhaustive corpus: multiple
// update transactions multiply the dependent steps per schedule and push the
// trace count beyond what exhaustion budgets allow. They remain available to
// `check --litmus <name>` for bounded (capped) exploration.
inline std::vector<Litmus> litmus_extras() {
  std::vector<Litmus> out;
  auto add = [&out](const char* name, const char* text) {
    out.push_back(parse_litmus(text, name));
  };
  add("overwrite", "up w:0\nup w:0\nro r:0 r:0\n");
  add("independent-reads", "up w:0\nro r:0 r:1\nro r:1 r:0\n");
  add("chain", "up w:0\nup r:0 w:1\nro r:1 r:0\n");
  add("fan-in", "up w:0\nup w:1\nro r:0 r:1\n");
  add("two-writers-one-line", "up w:0 w:1\nup w:0\nro r:0\n");
  add("one-writer-readback", "up w:0 r:0\nro r:0\nro r:0\n");
  add("two-line-writer", "up w:0 w:1\nro r:0\nro r:1\n");
  return out;
}

}  // namespace dumbolab
