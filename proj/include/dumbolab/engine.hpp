#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <vector>

#include "dumbolab/history.hpp"

namespace dumbolab {

// Handle the user transaction body uses for its memory accesses. The engine
// rebinds it per attempt; addresses are byte offsets into the heap region.
struct TxCtx {
  std::function<std::uint64_t(std::uint64_t)> read;
  std::function<void(std::uint64_t, std::uint64_t)> write;
};
using TxBody = std::function<void(TxCtx&)>;

class Engine {
 public:
  virtual ~Engine() = default;
  virtual const char* name() const = 0;
  // Runs the body to a successful acknowledgement (retrying/falling back as
  // the engine sees fit) and returns the record of the winning execution.
  virtual TxRecord run(int tid, bool read_only, const TxBody& body) = 0;
};

// One cache line per word so peer scans don't false-share.
struct alignas(128) PaddedWord {
  std::atomic<std::uint64_t> v{0};
};

// Thread-state words: 0 = clear, else (stamp << 1) | 1.
inline std::uint64_t pack_stamp(std::uint64_t t) { return (t << 1) | 1; }
inline bool stamp_set(std::uint64_t w) { return w & 1; }
inline std::uint64_t stamp_of(std::uint64_t w) { return w >> 1; }

}  // namespace dumbolab
