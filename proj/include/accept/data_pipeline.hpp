#pragma once

// Cycle-level cell records: CSV ingest/export, the synthetic desk-scale suite,
// labelled training windows and forecast metrics.

#include <accept/contrastive.hpp>
#include <accept/curve_fitting.hpp>
#include <accept/inference.hpp>

#include <charconv>
#include <map>
#include <set>

namespace accept {

using io::format_double;

struct CycleRow {
  double cycle = 0.0;
  double capacity_ah = 0.0;
  double temp_c = 0.0;
  double chg_current_a = 0.0;
  double dis_current_a = 0.0;
  double voltage_v = 0.0;

  friend bool operator==(const CycleRow&, const CycleRow&) = default;
};

struct CellRecord {
  std::string cell_id;
  std::string chemistry;
  double initial_capacity_ah = 1.0;
  std::vector<CycleRow> rows;

  double soh(std::size_t i) const { return rows[i].capacity_ah / initial_capacity_ah; }
  std::vector<double> soh_series() const {
    std::vector<double> s(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) s[i] = soh(i);
    return s;
  }
  std::vector<double> cycles() const {
    std::vector<double> c(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) c[i] = rows[i].cycle;
    return c;
  }
  double lifetime() const { return rows.empty() ? 0.0 : rows.back().cycle - rows.front().cycle + 1.0; }

  void validate() const {
    if (!(initial_capacity_ah > 0.0)) throw Error(ErrorKind::validation, "cell " + cell_id + ": initial capacity must be positive");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!(rows[i].capacity_ah > 0.0))
        throw Error(ErrorKind::validation, "cell " + cell_id + ": capacity must be positive at cycle " + format_double(rows[i].cycle));
      if (i > 0 && !(rows[i].cycle > rows[i - 1].cycle))
        throw Error(ErrorKind::validation, "cell " + cell_id + ": cycle indices must be strictly increasing (cycle " +
                                               format_double(rows[i].cycle) + " follows " + format_double(rows[i - 1].cycle) + ")");
    }
  }

  friend bool operator==(const CellRecord&, const CellRecord&) = default;
};

inline constexpr const char* csv_header =
    "cell_id,chemistry,initial_capacity_ah,cycle,capacity_ah,temp_c,chg_current_a,dis_current_a,voltage_v";

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_number(std::string_view s, std::size_t row, const char* column) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end || !std::isfinite(v))
    throw Error(ErrorKind::parse, "row " + std::to_string(row) + " column " + column + ": '" + std::string(s) +
                                      "' is not a finite number");
  return v;
}

}  // namespace detail

/// Parses the cell CSV. Rows of one cell need not be contiguous but keep their
/// file order; cells are returned in order of first appearance.
inline std::vector<CellRecord> parse_cells(std::string_view text) {
  static constexpr const char* columns[] = {"cell_id", "chemistry", "initial_capacity_ah", "cycle", "capacity_ah",
                                            "temp_c", "chg_current_a", "dis_current_a", "voltage_v"};
  std::vector<CellRecord> cells;
  std::map<std::string, std::size_t, std::less<>> slot;
  std::size_t row = 0, pos = 0;
  bool header = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header) {
      if (line != csv_header) throw Error(ErrorKind::parse, std::string("row 1: header must be '") + csv_header + "'");
      header = true;
      continue;
    }
    const auto f = detail::split_csv(line);
    if (f.size() != 9)
      throw Error(ErrorKind::parse, "row " + std::to_string(row) + ": expected 9 columns, found " + std::to_string(f.size()));
    if (f[0].empty()) throw Error(ErrorKind::parse, "row " + std::to_string(row) + " column cell_id: empty");
    if (f[1].empty()) throw Error(ErrorKind::parse, "row " + std::to_string(row) + " column chemistry: empty");
    const double init = detail::parse_number(f[2], row, columns[2]);
    CycleRow r{detail::parse_number(f[3], row, columns[3]), detail::parse_number(f[4], row, columns[4]),
               detail::parse_number(f[5], row, columns[5]), detail::parse_number(f[6], row, columns[6]),
               detail::parse_number(f[7], row, columns[7]), detail::parse_number(f[8], row, columns[8])};
    auto it = slot.find(f[0]);
    if (it == slot.end()) {
      it = slot.emplace(std::string(f[0]), cells.size()).first;
      cells.push_back({std::string(f[0]), std::string(f[1]), init, {}});
    }
    CellRecord& c = cells[it->second];
    if (c.chemistry != f[1] || c.initial_capacity_ah != init)
      throw Error(ErrorKind::validation, "row " + std::to_string(row) + ": chemistry or initial capacity changes within cell " +
                                             c.cell_id);
    c.rows.push_back(r);
  }
  if (!header) throw Error(ErrorKind::parse, "file is empty; a header row is required");
  for (const auto& c : cells) c.validate();
  return cells;
}

inline std::vector<CellRecord> ingest(const std::filesystem::path& path) { return parse_cells(io::read_file(path)); }

inline std::string cells_to_csv(const std::vector<CellRecord>& cells) {
  std::string out = std::string(csv_header) + "\n";
  for (const auto& c : cells)
    for (const auto& r : c.rows) {
      out += c.cell_id + "," + c.chemistry + "," + format_double(c.initial_capacity_ah) + "," + format_double(r.cycle) + "," +
             format_double(r.capacity_ah) + "," + format_double(r.temp_c) + "," + format_double(r.chg_current_a) + "," +
             format_double(r.dis_current_a) + "," + format_double(r.voltage_v) + "\n";
    }
  return out;
}

inline void export_cells(const std::vector<CellRecord>& cells, const std::filesystem::path& path) {
  io::write_file_atomic(path, cells_to_csv(cells));
}

// ---------------------------------------------------------------------------
// Windows

/// The first `length` rows of a cell as an encoder input.
inline OperationalWindow window_from_cell(const CellRecord& c, std::size_t length) {
  length = std::min(length, c.rows.size());
  OperationalWindow w;
  w.chemistry = c.chemistry;
  w.initial_capacity_ah = c.initial_capacity_ah;
  for (std::size_t i = 0; i < length; ++i) {
    const auto& r = c.rows[i];
    w.cycle.push_back(r.cycle);
    w.soh.push_back(c.soh(i));
    w.temp_c.push_back(r.temp_c);
    w.chg_crate.push_back(r.chg_current_a / c.initial_capacity_ah);
    w.dis_crate.push_back(r.dis_current_a / c.initial_capacity_ah);
    w.voltage_v.push_back(r.voltage_v);
    w.mask.push_back(1);
  }
  return w;
}

struct LabeledWindow {
  OperationalWindow window;
  std::uint64_t positive_id = 0;
  std::string cell_id;
  std::size_t length = 0;
};

struct WindowConfig {
  std::vector<std::size_t> lengths{50, 100, 200, 400};
  FitOptions fit = [] {
    FitOptions f;
    f.restarts = 1;
    f.max_evals = 600;
    return f;
  }();
  std::size_t max_fit_points = 200;  // the full curve is subsampled to this many points before fitting
};

struct PositiveLabel {
  std::uint64_t id = 0;
  std::uint64_t scale_entry = 0;  // entry used for the cycle-to-t mapping
  FitResult fit;
};

/// Positive bank entry for a whole-life SoH curve. The cell's last cycle is
/// taken as the end of its curve: the nearest bank entry on the uniform grid
/// fixes the cycle-to-t scale and seeds the fit; the fitted curve is then
/// mapped back to its nearest bank entry.
inline PositiveLabel label_positive(const CellRecord& cell, const CurveBank& bank, const WindowConfig& cfg) {
  if (cell.rows.size() < 2) throw Error(ErrorKind::validation, "cell " + cell.cell_id + " has fewer than two cycles");
  const auto cycles = cell.cycles();
  const auto soh = cell.soh_series();
  const double c0 = cycles.front(), span = cycles.back() - cycles.front();
  std::vector<double> grid(bank.grid_size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double target = c0 + span * static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    const auto it = std::lower_bound(cycles.begin(), cycles.end(), target);
    const auto j = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cycles.begin(), static_cast<std::ptrdiff_t>(cycles.size() - 1)));
    if (j == 0 || cycles[j] == target) {
      grid[i] = soh[j];
    } else {
      const double w = (target - cycles[j - 1]) / (cycles[j] - cycles[j - 1]);
      grid[i] = soh[j - 1] + w * (soh[j] - soh[j - 1]);
    }
  }
  const BankEntry& scale = nearest_by_curve(bank, grid);

  ObservedCurve obs;
  const std::size_t n = cycles.size();
  const std::size_t m = std::min(n, std::max<std::size_t>(2, cfg.max_fit_points));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = m == 1 ? 0 : (i * (n - 1)) / (m - 1);
    obs.t.push_back((cycles[j] - c0) / span * scale.t_end);
    obs.capacity.push_back(soh[j]);
  }
  FitOptions fo = cfg.fit;
  fo.step = bank.provenance().step;
  fo.initial_guesses.insert(fo.initial_guesses.begin(), scale.params);
  PositiveLabel label;
  label.scale_entry = scale.id;
  label.fit = fit(obs, bank.provenance().bounds, fo);
  const auto fitted = resample_uniform(simulate(label.fit.params, bank.provenance().step, bank.provenance().time_cap),
                                       bank.grid_size());
  label.id = nearest_by_curve(bank, fitted).id;
  return label;
}

inline std::vector<LabeledWindow> make_windows(const CellRecord& cell, const CurveBank& bank, const WindowConfig& cfg,
                                               std::vector<std::string>* warnings = nullptr,
                                               std::optional<std::uint64_t> known_positive = std::nullopt) {
  if (cfg.lengths.empty()) throw Error(ErrorKind::config, "window lengths must not be empty");
  std::vector<std::size_t> usable;
  for (auto len : cfg.lengths)
    if (len >= 1 && static_cast<double>(len) <= cell.lifetime()) usable.push_back(len);
  if (usable.empty()) {
    if (warnings) warnings->push_back("cell " + cell.cell_id + ": every window length exceeds its lifetime");
    return {};
  }
  const std::uint64_t positive = known_positive ? *known_positive : label_positive(cell, bank, cfg).id;
  std::vector<LabeledWindow> out;
  for (auto len : usable) out.push_back({window_from_cell(cell, len), positive, cell.cell_id, len});
  return out;
}

inline std::vector<TrainingPair> to_pairs(const std::vector<LabeledWindow>& windows) {
  std::vector<TrainingPair> out;
  for (const auto& w : windows) out.push_back({w.window, w.positive_id, w.cell_id});
  return out;
}

/// Channel statistics over every row of the given cells.
inline FeatureNormalizer fit_normalizer(const std::vector<CellRecord>& cells) {
  FeatureNormalizer n;
  std::array<double, 4> sum{}, sq{};
  double count = 0.0, cap = 0.0, cap_sq = 0.0;
  for (const auto& c : cells) {
    cap += c.initial_capacity_ah;
    cap_sq += c.initial_capacity_ah * c.initial_capacity_ah;
    for (const auto& r : c.rows) {
      const std::array<double, 4> v{r.temp_c, r.chg_current_a / c.initial_capacity_ah, r.dis_current_a / c.initial_capacity_ah,
                                    r.voltage_v};
      for (std::size_t i = 0; i < 4; ++i) {
        sum[i] += v[i];
        sq[i] += v[i] * v[i];
      }
      count += 1.0;
    }
  }
  if (count == 0.0) throw Error(ErrorKind::empty_input, "no rows to compute normalisation statistics");
  for (std::size_t i = 0; i < 4; ++i) {
    n.mean[i] = sum[i] / count;
    const double var = sq[i] / count - n.mean[i] * n.mean[i];
    n.stdev[i] = var > 1e-18 ? std::sqrt(var) : 1.0;
  }
  const auto nc = static_cast<double>(cells.size());
  n.capacity_mean = cap / nc;
  const double var = cap_sq / nc - n.capacity_mean * n.capacity_mean;
  n.capacity_std = var > 1e-18 ? std::sqrt(var) : 1.0;
  return n;
}

// ---------------------------------------------------------------------------
// Synthetic suite

struct SynthOptions {
  std::size_t n_cells = 60;
  double soh_noise = 0.002;
  std::uint64_t seed = 11;
  std::size_t min_life = 400;
  std::size_t max_life = 2000;
  std::string chemistry = "LFP";
  double initial_capacity_ah = 1.1;
  double temp_noise = 0.5;
  double current_noise = 0.05;  // in C-rate units
  double voltage_noise = 0.005;
};

struct SynthTruth {
  std::string cell_id;
  std::uint64_t entry_id = 0;
  std::size_t life_cycles = 0;  // cycle index at which the entry's curve ends
};

struct Split {
  std::vector<std::string> train, val, test;
};

struct SynthDataset {
  std::vector<CellRecord> cells;
  std::vector<SynthTruth> truth;
  Split split;
};

/// Mean operating point implied by a parameter set. Each parameter is first
/// scaled to [0, 1] within the bank bounds (n_x), then
///   charge C-rate    = 1.0 + 2.5 n_b0 + 1.0 (1 - n_tp)
///   temperature (C)  = 25 + 8 n_tp - 5 n_b0 + 6 n_k
///   discharge C-rate = 0.5 + 1.5 n_k + 0.5 n_a0
///   voltage (V)      = 3.25 + 0.15 n_a0 - 0.05 n_c
struct OperatingPoint {
  double chg_crate, temp_c, dis_crate, voltage_v;
};

inline OperatingPoint operating_point(const DegradationParams& p, const ParamBounds& b) {
  const auto v = p.to_array();
  auto n = [&](std::size_t i) { return b.span(i) > 0.0 ? (v[i] - b.lo[i]) / b.span(i) : 0.5; };
  const double nk = n(0), na0 = n(1), nb0 = n(2), nc = n(3), ntp = n(4);
  return {1.0 + 2.5 * nb0 + 1.0 * (1.0 - ntp), 25.0 + 8.0 * ntp - 5.0 * nb0 + 6.0 * nk, 0.5 + 1.5 * nk + 0.5 * na0,
          3.25 + 0.15 * na0 - 0.05 * nc};
}

/// One synthetic cell following bank entry `e`, whose curve end lands on cycle `life`.
inline CellRecord synth_cell(const BankEntry& e, const ParamBounds& bounds, std::string id, std::size_t life,
                             const SynthOptions& opt, Rng& rng) {
  CellRecord c;
  c.cell_id = std::move(id);
  c.chemistry = opt.chemistry;
  c.initial_capacity_ah = opt.initial_capacity_ah;
  const OperatingPoint op = operating_point(e.params, bounds);
  for (std::size_t n = 0; n <= life; ++n) {
    const double soh = interpolate_grid(e.capacity, static_cast<double>(n) / static_cast<double>(life)) +
                       opt.soh_noise * standard_normal(rng);
    CycleRow r;
    r.cycle = static_cast<double>(n);
    r.capacity_ah = std::max(1e-6, soh) * c.initial_capacity_ah;
    r.temp_c = op.temp_c + opt.temp_noise * standard_normal(rng);
    r.chg_current_a = (op.chg_crate + opt.current_noise * standard_normal(rng)) * c.initial_capacity_ah;
    r.dis_current_a = (op.dis_crate + opt.current_noise * standard_normal(rng)) * c.initial_capacity_ah;
    r.voltage_v = op.voltage_v + opt.voltage_noise * standard_normal(rng);
    c.rows.push_back(r);
  }
  return c;
}

/// 8/60 of the cells go to validation and 16/60 to test, the rest to training.
inline Split split_ids(const std::vector<std::string>& ids) {
  const std::size_t n = ids.size();
  std::size_t n_val = (n * 8 + 30) / 60, n_test = (n * 16 + 30) / 60;
  while (n_val + n_test >= n && n_val + n_test > 0) (n_test > n_val ? n_test : n_val) -= 1;
  Split s;
  for (std::size_t i = 0; i < n; ++i) (i < n - n_val - n_test ? s.train : i < n - n_test ? s.val : s.test).push_back(ids[i]);
  return s;
}

inline SynthDataset synth_dataset(const CurveBank& bank, const SynthOptions& opt) {
  if (opt.n_cells < 1) throw Error(ErrorKind::config, "n_cells must be at least 1");
  if (bank.empty()) throw Error(ErrorKind::empty_input, "bank is empty");
  if (opt.min_life < 1 || opt.max_life < opt.min_life) throw Error(ErrorKind::config, "invalid lifetime range");
  Rng rng(opt.seed);
  SynthDataset d;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < opt.n_cells; ++i) {
    const BankEntry& e = bank[static_cast<std::size_t>(uniform_index(rng, bank.size()))];
    const std::size_t life = opt.min_life + static_cast<std::size_t>(uniform_index(rng, opt.max_life - opt.min_life + 1));
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", i);
    Rng cell_rng(derive_seed(opt.seed, 0x100 + i));
    d.cells.push_back(synth_cell(e, bank.provenance().bounds, name, life, opt, cell_rng));
    d.truth.push_back({name, e.id, life});
    ids.push_back(name);
  }
  d.split = split_ids(ids);
  return d;
}

inline nlohmann::json manifest_json(const Split& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

inline Split split_from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("manifest: ") + e.what());
  }
}

inline std::string truth_to_csv(const std::vector<SynthTruth>& truth) {
  std::string out = "cell_id,entry_id,life_cycles\n";
  for (const auto& t : truth) out += t.cell_id + "," + std::to_string(t.entry_id) + "," + std::to_string(t.life_cycles) + "\n";
  return out;
}

inline std::vector<SynthTruth> truth_from_csv(std::string_view text) {
  std::vector<SynthTruth> out;
  std::size_t pos = 0, row = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    if (++row == 1 || line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 3) throw Error(ErrorKind::parse, "truth row " + std::to_string(row) + ": expected 3 columns");
    out.push_back({std::string(f[0]), static_cast<std::uint64_t>(detail::parse_number(f[1], row, "entry_id")),
                   static_cast<std::size_t>(detail::parse_number(f[2], row, "life_cycles"))});
  }
  return out;
}

inline void save_dataset(const SynthDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_cells(d.cells, dir / "cells.csv");
  io::write_file_atomic(dir / "truth.csv", truth_to_csv(d.truth));
  io::write_file_atomic(dir / "manifest.json", manifest_json(d.split).dump(2) + "\n");
}

inline SynthDataset load_dataset(const std::filesystem::path& dir) {
  SynthDataset d;
  d.cells = ingest(dir / "cells.csv");
  if (std::filesystem::exists(dir / "truth.csv")) d.truth = truth_from_csv(io::read_file(dir / "truth.csv"));
  try {
    d.split = split_from_json(nlohmann::json::parse(io::read_file(dir / "manifest.json")));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("manifest: ") + e.what());
  }
  return d;
}

inline std::vector<CellRecord> select(const std::vector<CellRecord>& cells, const std::vector<std::string>& ids) {
  std::map<std::string, const CellRecord*> by_id;
  for (const auto& c : cells) by_id[c.cell_id] = &c;
  std::vector<CellRecord> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorKind::validation, "manifest names unknown cell " + id);
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double mse = 0.0, mae = 0.0, mape = 0.0;
  std::size_t points = 0;
};

/// Pointwise errors over the common prefix of two aligned SoH series.
inline MetricsReport evaluate(const std::vector<double>& pred, const std::vector<double>& truth) {
  const std::size_t n = std::min(pred.size(), truth.size());
  if (n == 0) throw Error(ErrorKind::empty_input, "prediction and truth do not overlap");
  MetricsReport m;
  m.points = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(truth[i]) < 1e-9) throw Error(ErrorKind::validation, "true SoH too close to zero for MAPE");
    const double d = pred[i] - truth[i];
    m.mse += d * d;
    m.mae += std::abs(d);
    m.mape += std::abs(d) / std::abs(truth[i]);
  }
  m.mse /= static_cast<double>(n);
  m.mae /= static_cast<double>(n);
  m.mape /= static_cast<double>(n);
  return m;
}

struct AlignedSeries {
  std::vector<double> cycles, pred, truth;
};

/// Forecast and cell SoH on the cell's cycles after `from_cycle`, up to the
/// end of whichever series is shorter.
inline AlignedSeries forecast_horizon(const std::vector<CyclePoint>& forecast, const CellRecord& cell, double from_cycle) {
  AlignedSeries s;
  if (forecast.empty()) return s;
  const double last = forecast.back().cycle;
  for (std::size_t i = 0; i < cell.rows.size(); ++i) {
    const double c = cell.rows[i].cycle;
    if (c <= from_cycle) continue;
    if (c > last) break;
    const auto it = std::lower_bound(forecast.begin(), forecast.end(), c,
                                     [](const CyclePoint& p, double v) { return p.cycle < v; });
    double v = it->capacity;
    if (it != forecast.begin() && it->cycle != c) {
      const auto& a = *(it - 1);
      v = a.capacity + (c - a.cycle) / (it->cycle - a.cycle) * (it->capacity - a.capacity);
    }
    s.cycles.push_back(c);
    s.pred.push_back(v);
    s.truth.push_back(cell.soh(i));
  }
  return s;
}

}  // namespace accept
