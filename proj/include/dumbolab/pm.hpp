#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dumbolab/common.hpp"
#include "dumbolab/config.hpp"
#include "dumbolab/exec_env.hpp"

namespace dumbolab {

enum class RegionId : std::uint32_t { heap = 0, redoLogs = 1, durMarkers = 2 };
inline constexpr int kRegionCount = 3;
inline const char* region_name(RegionId r) {
  switch (r) {
    case RegionId::heap: return "heap";
    case RegionId::redoLogs: return "redologs";
    case RegionId::durMarkers: return "durmarkers";
  }
  return "?";
}

struct FlushTicket {
  std::uint64_t id = 0;            // 0 = immediately-complete no-op flush
  std::uint64_t complete_ns = 0;   // completion time (== issue time for no-ops)
};

// Durable-only snapshot of all regions taken at a crash point. In-flight
// flushes survive whole-line or not at all.
struct CrashImage {
  std::array<std::vector<std::uint8_t>, kRegionCount> durable;
  std::uint64_t crash_point_id = 0;
  std::vector<std::uint64_t> survived_flushes;  // ticket ids deemed completed

  std::uint64_t read_word(RegionId r, std::uint64_t addr) const {
    const auto& d = durable[static_cast<int>(r)];
    if (addr + 8 > d.size()) throw UsageError("crash image read out of range");
    return load_word_le(d.data() + addr);
  }
};

// Byte-addressable PM emulator: per-line volatile/durable contents, dirty
// bits, asynchronous flushes that complete after a configured latency, and
// the time/ticket sources the protocols use. All mutation goes through the
// volatile view; durable contents change only when a flush completes (or
// when recovery replay applies log entries to an image).
class PmSim {
 public:
  struct Sizes {
    std::uint64_t heap = 0, logs = 0, markers = 0;
  };

  PmSim(ExecEnv* env, std::uint64_t line_size, Sizes sizes,
        std::uint64_t flush_latency_ns = 310)
      : env_(env), line_(line_size), latency_(flush_latency_ns) {
    init_region(RegionId::heap, sizes.heap);
    init_region(RegionId::redoLogs, sizes.logs);
    init_region(RegionId::durMarkers, sizes.markers);
  }

  // unique_ptr because the simulator owns mutexes and cannot move
  static std::unique_ptr<PmSim> from_config(ExecEnv* env, const Config& cfg) {
    Sizes s;
    s.heap = cfg.get_u64("pm.heap_mb", 128) << 20;
    s.logs = cfg.get_u64("pm.log_mb", 128) << 20;
    std::uint64_t line = cfg.get_u64("pm.line_size", 128);
    std::uint64_t slots = cfg.get_u64("pm.marker_slots", 1024);
    // one header line + 32B marker records, line-aligned region size
    s.markers = line + ((slots * 32 + line - 1) / line) * line;
    return std::make_unique<PmSim>(env, line, s,
                                   cfg.get_u64("pm.flush_latency_ns", 310));
  }

  std::uint64_t line_size() const { return line_; }
  std::uint64_t flush_latency_ns() const { return latency_; }
  std::uint64_t region_size(RegionId r) const { return regions_[idx(r)].vol.size(); }

  // ---- volatile accesses -------------------------------------------------

  std::uint64_t read_word(RegionId r, std::uint64_t addr) const {
    std::lock_guard<std::mutex> g(mu_);
    check_addr(r, addr);
    return load_word_le(regions_[idx(r)].vol.data() + addr);
  }

  void write_word(RegionId r, std::uint64_t addr, std::uint64_t value) {
    std::lock_guard<std::mutex> g(mu_);
    check_addr(r, addr);
    Region& reg = regions_[idx(r)];
    store_word_le(reg.vol.data() + addr, value);
    reg.dirty[addr / line_] = 1;
  }

  // ---- flushes and fences ------------------------------------------------

  FlushTicket flush_line_async(int tid, RegionId r, std::uint64_t line_id) {
    std::lock_guard<std::mutex> g(mu_);
    Region& reg = regions_[idx(r)];
    if (line_id >= reg.dirty.size()) throw UsageError("flush: line out of range");
    std::uint64_t now = env_->peek_now_ns();
    materialize_locked(now);
    if (!reg.dirty[line_id]) return FlushTicket{0, now};  // clean line: no-op
    InFlight f;
    f.id = ++next_ticket_;
    f.tid = tid;
    f.region = r;
    f.line = line_id;
    f.issue_ns = now;
    f.complete_ns = now + latency_;
    f.snapshot.assign(reg.vol.begin() + line_id * line_,
                      reg.vol.begin() + (line_id + 1) * line_);
    reg.dirty[line_id] = 0;
    inflight_.push_back(std::move(f));
    injected_latency_total_ += latency_;
    note_crash_point();
    return FlushTicket{next_ticket_, now + latency_};
  }

  // Blocks until every flush issued by `tid` has completed. Publication
  // ordering is given by the seq_cst atomics the engines use for state words.
  void drain_fence(int tid) {
    std::uint64_t target = 0;
    {
      std::lock_guard<std::mutex> g(mu_);
      for (const auto& f : inflight_)
        if (f.tid == tid && f.complete_ns > target) target = f.complete_ns;
    }
    if (target) env_->advance_to(tid, target);
    std::lock_guard<std::mutex> g(mu_);
    materialize_locked(env_->peek_now_ns());
    note_crash_point();
  }

  // Completion time of a specific ticket if it is still in flight.
  std::optional<std::uint64_t> pending_completion(std::uint64_t ticket) const {
    std::lock_guard<std::mutex> g(mu_);
    for (const auto& f : inflight_)
      if (f.id == ticket) return f.complete_ns;
    return std::nullopt;
  }

  std::uint64_t injected_latency_total() const {
    std::lock_guard<std::mutex> g(mu_);
    return injected_latency_total_;
  }

  // ---- crash -------------------------------------------------------------

  enum class CrashPolicy { dropAllInFlight, enumerateSubsets };

  // Produces crash images for the current instant. With enumerate-subsets,
  // 2^k images for k in-flight flushes (applied in issue order).
  std::vector<CrashImage> crash(CrashPolicy policy) {
    std::lock_guard<std::mutex> g(mu_);
    materialize_locked(env_->peek_now_ns());
    return crash_locked(policy);
  }

  std::vector<CrashImage> crash_locked(CrashPolicy policy) {
    std::vector<const InFlight*> pend;
    for (const auto& f : inflight_) pend.push_back(&f);
    std::vector<CrashImage> out;
    std::uint64_t subsets =
        policy == CrashPolicy::dropAllInFlight ? 1 : (1ull << pend.size());
    for (std::uint64_t mask = 0; mask < subsets; ++mask) {
      CrashImage img;
      img.crash_point_id = crash_points_;
      for (int r = 0; r < kRegionCount; ++r) img.durable[r] = regions_[r].dur;
      for (std::size_t i = 0; i < pend.size(); ++i) {
        if (!(mask & (1ull << i))) continue;
        const InFlight& f = *pend[i];
        std::memcpy(img.durable[idx(f.region)].data() + f.line * line_,
                    f.snapshot.data(), line_);
        img.survived_flushes.push_back(f.id);
      }
      out.push_back(std::move(img));
    }
    return out;
  }

  // Crash-point hook: after every flush issue and fence, the harness gets the
  // full enumerate-subsets image set for that instant. Enable only in sweeps.
  using CrashHook = std::function<void(std::uint64_t, std::vector<CrashImage>&&)>;
  void set_crash_point_hook(CrashHook hook) {
    std::lock_guard<std::mutex> g(mu_);
    crash_hook_ = std::move(hook);
  }
  std::uint64_t crash_points() const { return crash_points_; }

  // ---- tickets and time --------------------------------------------------

  std::uint64_t now_ns(int tid) { return env_->now_ns(tid); }

  // Dense, duplicate-free logical sequence starting at 0.
  std::uint64_t next_durts() { return durts_.fetch_add(1); }
  std::uint64_t durts_issued() const { return durts_.load(); }

  // ---- durable views (tests, recovery) -----------------------------------

  std::uint64_t durable_word(RegionId r, std::uint64_t addr) {
    std::lock_guard<std::mutex> g(mu_);
    materialize_locked(env_->peek_now_ns());
    check_addr(r, addr);
    return load_word_le(regions_[idx(r)].dur.data() + addr);
  }

  std::vector<std::uint8_t> durable_bytes(RegionId r) {
    std::lock_guard<std::mutex> g(mu_);
    materialize_locked(env_->peek_now_ns());
    return regions_[idx(r)].dur;
  }

  std::vector<std::uint8_t> volatile_bytes(RegionId r) const {
    std::lock_guard<std::mutex> g(mu_);
    return regions_[idx(r)].vol;
  }

  // Recovery replay is the one path allowed to write durable contents.
  void recovery_write_durable(RegionId r, std::uint64_t addr, std::uint64_t v) {
    std::lock_guard<std::mutex> g(mu_);
    check_addr(r, addr);
    store_word_le(regions_[idx(r)].dur.data() + addr, v);
  }

  // ---- image files -------------------------------------------------------
  // Flat binary per region: 64-byte little-endian header then durable bytes.
  //   magic "DMBLPM01" | version u32 | lineSize u32 | regionId u32 |
  //   pad u32 | sizeBytes u64 | zero pad to 64
  static constexpr char kMagic[9] = "DMBLPM01";

  void save_image(const CrashImage& img, const std::string& dir) const {
    for (int r = 0; r < kRegionCount; ++r)
      save_region_file(dir + "/" + region_name(static_cast<RegionId>(r)) + ".pm",
                       static_cast<RegionId>(r), img.durable[r], line_);
  }

  void save_durable(const std::string& dir) {
    CrashImage img;
    for (int r = 0; r < kRegionCount; ++r)
      img.durable[r] = durable_bytes(static_cast<RegionId>(r));
    save_image(img, dir);
  }

  static void save_region_file(const std::string& path, RegionId r,
                               const std::vector<std::uint8_t>& bytes,
                               std::uint64_t line_size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path);
    std::uint8_t hdr[64] = {0};
    std::memcpy(hdr, kMagic, 8);
    store_word_le(hdr + 8, 1);  // version u32 + lineSize u32 packed below
    std::uint8_t tmp[8];
    store_word_le(tmp, line_size);
    std::memcpy(hdr + 12, tmp, 4);
    store_word_le(tmp, static_cast<std::uint64_t>(r));
    std::memcpy(hdr + 16, tmp, 4);
    store_word_le(hdr + 24, bytes.size());
    out.write(reinterpret_cast<const char*>(hdr), 64);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }

  static std::vector<std::uint8_t> load_region_file(const std::string& path,
                                                    std::uint64_t* line_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read " + path);
    std::uint8_t hdr[64];
    in.read(reinterpret_cast<char*>(hdr), 64);
    if (!in || std::memcmp(hdr, kMagic, 8) != 0)
      throw UsageError("bad PM image header: " + path);
    std::uint8_t tmp[8] = {0};
    std::memcpy(tmp, hdr + 12, 4);
    if (line_size) *line_size = load_word_le(tmp);
    std::uint64_t n = load_word_le(hdr + 24);
    std::vector<std::uint8_t> bytes(n);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (!in) throw UsageError("truncated PM image: " + path);
    return bytes;
  }

  static CrashImage load_image(const std::string& dir, std::uint64_t* line_size) {
    CrashImage img;
    for (int r = 0; r < kRegionCount; ++r)
      img.durable[r] = load_region_file(
          dir + "/" + region_name(static_cast<RegionId>(r)) + ".pm", line_size);
    return img;
  }

 private:
  struct Region {
    std::vector<std::uint8_t> vol, dur;
    std::vector<std::uint8_t> dirty;  // per line
  };
  struct InFlight {
    std::uint64_t id;
    int tid;
    RegionId region;
    std::uint64_t line;
    std::uint64_t issue_ns, complete_ns;
    std::vector<std::uint8_t> snapshot;
  };

  static int idx(RegionId r) { return static_cast<int>(r); }

  void init_region(RegionId r, std::uint64_t size) {
    if (size % line_ != 0) throw UsageError("region size not a line multiple");
    Region& reg = regions_[idx(r)];
    reg.vol.assign(size, 0);
    reg.dur.assign(size, 0);
    reg.dirty.assign(size / line_, 0);
  }

  void check_addr(RegionId r, std::uint64_t addr) const {
    if (addr % 8 != 0) throw UsageError("misaligned word address");
    if (addr + 8 > regions_[idx(r)].vol.size())
      throw UsageError("address out of region range");
  }

  // Apply flushes whose completion time has passed, in issue order.
  void materialize_locked(std::uint64_t now) {
    std::size_t kept = 0;
    for (std::size_t i = 0; i < inflight_.size(); ++i) {
      InFlight& f = inflight_[i];
      if (f.complete_ns <= now) {
        std::memcpy(regions_[idx(f.region)].dur.data() + f.line * line_,
                    f.snapshot.data(), line_);
      } else {
        if (kept != i) inflight_[kept] = std::move(f);
        ++kept;
      }
    }
    inflight_.resize(kept);
  }

  void note_crash_point() {
    ++crash_points_;
    if (crash_hook_)
      crash_hook_(crash_points_, crash_locked(CrashPolicy::enumerateSubsets));
  }

  ExecEnv* env_;
  std::uint64_t line_;
  std::uint64_t latency_;
  mutable std::mutex mu_;
  std::array<Region, kRegionCount> regions_;
  std::vector<InFlight> inflight_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t injected_latency_total_ = 0;
  std::atomic<std::uint64_t> durts_{0};
  std::uint64_t crash_points_ = 0;
  CrashHook crash_hook_;
};

}  // namespace dumbolab
