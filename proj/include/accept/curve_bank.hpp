#pragma once

#include <accept/curve_fitting.hpp>
#include <accept/degradation_model.hpp>
#include <accept/util.hpp>

#include <cstring>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace accept {

inline constexpr std::size_t default_grid_size = 256;

struct BankEntry {
  std::uint64_t id = 0;
  DegradationParams params;
  double t_end = 0.0;
  /// Capacity on a uniform grid over [0, t_end].
  std::vector<double> capacity;

  friend bool operator==(const BankEntry&, const BankEntry&) = default;
};

struct BankProvenance {
  ParamBounds bounds;
  std::uint64_t seed = 0;
  double step = 0.01;
  double time_cap = 50.0;

  friend bool operator==(const BankProvenance&, const BankProvenance&) = default;
};

class CurveBank {
 public:
  CurveBank() = default;
  CurveBank(std::size_t grid_size, BankProvenance provenance)
      : grid_size_(grid_size), provenance_(provenance) {}

  std::size_t grid_size() const { return grid_size_; }
  const BankProvenance& provenance() const { return provenance_; }
  const std::vector<BankEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const BankEntry& operator[](std::size_t i) const { return entries_[i]; }

  void add(BankEntry entry) {
    if (entry.capacity.size() != grid_size_)
      throw Error(ErrorKind::validation, "bank entry length does not match grid size");
    if (find(entry.id)) throw Error(ErrorKind::validation, "duplicate bank id " + std::to_string(entry.id));
    sorted_ = sorted_ && (index_.empty() || entry.id > index_.back());
    index_.push_back(entry.id);
    entries_.push_back(std::move(entry));
  }

  const BankEntry* find(std::uint64_t id) const {
    if (sorted_) {
      auto it = std::lower_bound(index_.begin(), index_.end(), id);
      if (it != index_.end() && *it == id) return &entries_[static_cast<std::size_t>(it - index_.begin())];
      return nullptr;
    }
    for (const auto& e : entries_)
      if (e.id == id) return &e;
    return nullptr;
  }

  const BankEntry& at(std::uint64_t id) const {
    if (const auto* e = find(id)) return *e;
    throw Error(ErrorKind::corrupt_bank, "bank id " + std::to_string(id) + " not found");
  }

  friend bool operator==(const CurveBank& a, const CurveBank& b) {
    return a.grid_size_ == b.grid_size_ && a.provenance_ == b.provenance_ && a.entries_ == b.entries_;
  }

 private:
  std::size_t grid_size_ = default_grid_size;
  BankProvenance provenance_;
  std::vector<BankEntry> entries_;
  std::vector<std::uint64_t> index_;
  bool sorted_ = true;
};

/// Linear resampling of a simulated curve onto n points spanning [0, t_end].
inline std::vector<double> resample_uniform(const SimCurve& curve, std::size_t n = default_grid_size) {
  std::vector<double> out(n);
  const double t_end = curve.t_end();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : t_end * static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = capacity_at(curve, t);
  }
  out[0] = curve.states.front().C;
  out[n - 1] = curve.states.back().C;
  return out;
}

/// Linear interpolation of a uniform-grid vector at normalised position u in [0, 1].
inline double interpolate_grid(const std::vector<double>& grid, double u) {
  const std::size_t n = grid.size();
  if (u <= 0.0) return grid.front();
  if (u >= 1.0) return grid.back();
  const double pos = u * static_cast<double>(n - 1);
  const auto i = std::min(static_cast<std::size_t>(pos), n - 2);
  const double w = pos - static_cast<double>(i);
  return grid[i] + w * (grid[i + 1] - grid[i]);
}

struct BankOptions {
  std::size_t grid_size = default_grid_size;
  double step = 0.01;
  double time_cap = 50.0;
  unsigned threads = default_threads();
};

struct BankGeneration {
  CurveBank bank;
  std::vector<std::uint64_t> dropped;
  std::vector<std::string> drop_reasons;
};

inline BankEntry make_entry(std::uint64_t id, const DegradationParams& p, const BankOptions& opt) {
  const SimCurve curve = simulate(p, opt.step, opt.time_cap);
  return {id, p, curve.t_end(), resample_uniform(curve, opt.grid_size)};
}

/// Draws `count` parameter tuples uniformly within bounds and simulates each.
/// Parameter draws happen sequentially from one generator, so the result only
/// depends on (bounds, count, seed) regardless of thread count.
inline BankGeneration generate_bank(const ParamBounds& bounds, std::size_t count, std::uint64_t seed,
                                    const BankOptions& opt = {}) {
  bounds.validate();
  if (count < 1) throw Error(ErrorKind::config, "bank count must be at least 1");
  if (opt.grid_size < 2) throw Error(ErrorKind::config, "grid size must be at least 2");

  Rng rng(seed);
  std::vector<DegradationParams> draws(count);
  for (auto& d : draws) {
    std::array<double, DegradationParams::size> v{};
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = uniform(rng, bounds.lo[j], bounds.hi[j]);
    d = DegradationParams::from_array(v);
  }

  std::vector<std::optional<BankEntry>> slots(count);
  std::vector<std::string> reasons(count);
  parallel_for(count, [&](std::size_t i) {
    try {
      slots[i] = make_entry(i, draws[i], opt);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::diverged) throw;
      reasons[i] = e.what();
    }
  }, opt.threads);

  BankGeneration out{CurveBank(opt.grid_size, {bounds, seed, opt.step, opt.time_cap}), {}, {}};
  for (std::size_t i = 0; i < count; ++i) {
    if (slots[i]) {
      out.bank.add(std::move(*slots[i]));
    } else {
      out.dropped.push_back(i);
      out.drop_reasons.push_back(reasons[i]);
    }
  }
  if (out.dropped.size() * 10 > count)
    throw Error(ErrorKind::bank_generation,
                std::to_string(out.dropped.size()) + " of " + std::to_string(count) + " simulations diverged");
  return out;
}

inline double mean_squared_difference(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Entry with the smallest mean squared difference to `query`; ties go to the lower id.
inline const BankEntry& nearest_by_curve(const CurveBank& bank, const std::vector<double>& query) {
  if (bank.empty()) throw Error(ErrorKind::empty_input, "bank is empty");
  if (query.size() != bank.grid_size())
    throw Error(ErrorKind::config, "query length " + std::to_string(query.size()) + " does not match bank grid " +
                                       std::to_string(bank.grid_size()));
  const BankEntry* best = nullptr;
  double best_mse = std::numeric_limits<double>::infinity();
  for (const auto& e : bank.entries()) {
    const double mse = mean_squared_difference(e.capacity, query);
    if (mse < best_mse || (mse == best_mse && best && e.id < best->id)) {
      best_mse = mse;
      best = &e;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// Bank file. Binary layout (little-endian):
//   "ACCBANK\0" | u32 version | u32 grid | u64 count | f64 lo[5] | f64 hi[5]
//   | u64 seed | f64 step | f64 time_cap
//   then per entry: u64 id | f64 params[5] | f64 t_end | f64 capacity[grid]
// The text export carries the same fields, one record per line.

inline constexpr char bank_magic[8] = {'A', 'C', 'C', 'B', 'A', 'N', 'K', '\0'};
inline constexpr std::uint32_t bank_format_version = 1;

inline void write_bank_binary(const CurveBank& bank, std::ostream& os) {
  os.write(bank_magic, sizeof bank_magic);
  io::write_u32(os, bank_format_version);
  io::write_u32(os, static_cast<std::uint32_t>(bank.grid_size()));
  io::write_u64(os, bank.size());
  const auto& pv = bank.provenance();
  for (double v : pv.bounds.lo) io::write_f64(os, v);
  for (double v : pv.bounds.hi) io::write_f64(os, v);
  io::write_u64(os, pv.seed);
  io::write_f64(os, pv.step);
  io::write_f64(os, pv.time_cap);
  for (const auto& e : bank.entries()) {
    io::write_u64(os, e.id);
    for (double v : e.params.to_array()) io::write_f64(os, v);
    io::write_f64(os, e.t_end);
    for (double v : e.capacity) io::write_f64(os, v);
  }
}

inline CurveBank read_bank_binary(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, bank_magic, sizeof magic) != 0)
    throw Error(ErrorKind::corrupt_bank, "not a curve bank file");
  const auto version = io::read_u32(is, "version");
  if (version != bank_format_version)
    throw Error(ErrorKind::corrupt_bank, "unsupported bank format version " + std::to_string(version));
  const auto grid = io::read_u32(is, "grid size");
  const auto count = io::read_u64(is, "count");
  BankProvenance pv;
  for (auto& v : pv.bounds.lo) v = io::read_f64(is, "bounds");
  for (auto& v : pv.bounds.hi) v = io::read_f64(is, "bounds");
  pv.seed = io::read_u64(is, "seed");
  pv.step = io::read_f64(is, "step");
  pv.time_cap = io::read_f64(is, "time cap");
  if (grid < 2) throw Error(ErrorKind::corrupt_bank, "invalid grid size");
  CurveBank bank(grid, pv);
  for (std::uint64_t i = 0; i < count; ++i) {
    BankEntry e;
    e.id = io::read_u64(is, "entry id");
    std::array<double, DegradationParams::size> p{};
    for (auto& v : p) v = io::read_f64(is, "entry params");
    e.params = DegradationParams::from_array(p);
    e.t_end = io::read_f64(is, "entry t_end");
    e.capacity.resize(grid);
    for (auto& v : e.capacity) v = io::read_f64(is, "entry capacity");
    bank.add(std::move(e));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::corrupt_bank, "trailing bytes after last entry");
  return bank;
}

inline void write_bank_text(const CurveBank& bank, std::ostream& os) {
  const auto& pv = bank.provenance();
  os << "accept-bank-text " << bank_format_version << '\n';
  os << "grid " << bank.grid_size() << '\n' << "count " << bank.size() << '\n';
  os << "lo";
  for (double v : pv.bounds.lo) os << ' ' << io::format_double(v);
  os << "\nhi";
  for (double v : pv.bounds.hi) os << ' ' << io::format_double(v);
  os << "\nseed " << pv.seed << "\nstep " << io::format_double(pv.step) << "\ntime_cap "
     << io::format_double(pv.time_cap) << '\n';
  for (const auto& e : bank.entries()) {
    os << e.id;
    for (double v : e.params.to_array()) os << ' ' << io::format_double(v);
    os << ' ' << io::format_double(e.t_end);
    for (double v : e.capacity) os << ' ' << io::format_double(v);
    os << '\n';
  }
}

inline CurveBank read_bank_text(std::istream& is) {
  auto expect = [&](const char* key) {
    std::string k;
    if (!(is >> k) || k != key) throw Error(ErrorKind::corrupt_bank, std::string("expected '") + key + "' in bank text");
  };
  auto num = [&](const char* what) {
    std::string tok;
    if (!(is >> tok)) throw Error(ErrorKind::corrupt_bank, std::string("missing ") + what);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (*end != '\0') throw Error(ErrorKind::corrupt_bank, std::string("bad number for ") + what);
    return v;
  };
  std::uint32_t version = 0;
  expect("accept-bank-text");
  is >> version;
  if (version != bank_format_version) throw Error(ErrorKind::corrupt_bank, "unsupported bank text version");
  std::size_t grid = 0, count = 0;
  expect("grid");
  is >> grid;
  expect("count");
  is >> count;
  BankProvenance pv;
  expect("lo");
  for (auto& v : pv.bounds.lo) v = num("lo");
  expect("hi");
  for (auto& v : pv.bounds.hi) v = num("hi");
  expect("seed");
  is >> pv.seed;
  expect("step");
  pv.step = num("step");
  expect("time_cap");
  pv.time_cap = num("time_cap");
  if (!is || grid < 2) throw Error(ErrorKind::corrupt_bank, "malformed bank text header");
  CurveBank bank(grid, pv);
  for (std::size_t i = 0; i < count; ++i) {
    BankEntry e;
    if (!(is >> e.id)) throw Error(ErrorKind::corrupt_bank, "missing entry id");
    std::array<double, DegradationParams::size> p{};
    for (auto& v : p) v = num("params");
    e.params = DegradationParams::from_array(p);
    e.t_end = num("t_end");
    e.capacity.resize(grid);
    for (auto& v : e.capacity) v = num("capacity");
    bank.add(std::move(e));
  }
  return bank;
}

inline std::string bank_to_bytes(const CurveBank& bank) {
  std::ostringstream os(std::ios::binary);
  write_bank_binary(bank, os);
  return os.str();
}

inline CurveBank bank_from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_bank_binary(is);
}

inline void save_bank(const CurveBank& bank, const std::filesystem::path& path) {
  io::write_file_atomic(path, bank_to_bytes(bank));
}

inline CurveBank load_bank(const std::filesystem::path& path) {
  return bank_from_bytes(io::read_file(path));
}

}  // namespace accept
