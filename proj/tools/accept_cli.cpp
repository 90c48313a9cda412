// accept: command-line entry point for simulation, bank generation, training
// and retrieval-based forecasting.

#include <accept.hpp>

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace accept;

namespace {

constexpr std::uint64_t default_seed = 20240611;

// ---------------------------------------------------------------------------
// Small CSV helpers

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorKind::parse, "missing column '" + name + "'");
  }
  bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

/// Numeric CSV with a header row. `text_columns` are kept as strings in `labels`.
Table read_table(const fs::path& path, std::vector<std::string>* labels = nullptr) {
  const std::string text = io::read_file(path);
  Table t;
  std::size_t pos = 0, row = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view line(text.data() + pos, (nl == std::string::npos ? text.size() : nl) - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    if (t.header.empty()) {
      for (auto f : fields) t.header.emplace_back(f);
      continue;
    }
    if (fields.size() != t.header.size())
      throw Error(ErrorKind::parse, path.string() + " row " + std::to_string(row) + ": expected " +
                                        std::to_string(t.header.size()) + " columns");
    std::vector<double> r;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == 0 && labels) {
        labels->emplace_back(fields[0]);
        r.push_back(0.0);
        continue;
      }
      r.push_back(detail::parse_number(fields[i], row, t.header[i].c_str()));
    }
    t.rows.push_back(std::move(r));
  }
  if (t.header.empty()) throw Error(ErrorKind::parse, path.string() + " is empty");
  return t;
}

std::string csv_line(std::initializer_list<double> values) {
  std::string s;
  for (double v : values) {
    if (!s.empty()) s += ',';
    s += io::format_double(v);
  }
  return s + "\n";
}

fs::path with_suffix(const fs::path& base, const std::string& suffix) {
  fs::path p = base;
  p.replace_extension();
  p += suffix;
  return p;
}

void note(const std::string& msg) { std::cerr << msg << "\n"; }

// ---------------------------------------------------------------------------
// Shared inputs

struct WindowInput {
  std::string path;
  std::string cell;
  std::size_t cycles = 0;  // 0 = every row
};

void add_window_options(CLI::App* sub, WindowInput& w) {
  sub->add_option("--input", w.path, "Cell CSV holding the operational window")->required()->check(CLI::ExistingFile);
  sub->add_option("--cell", w.cell, "Cell id to read (default: the first cell in the file)");
  sub->add_option("--cycles", w.cycles, "Use only the first N rows of the cell (0 = all)")->capture_default_str();
}

CellRecord load_cell(const WindowInput& w) {
  const auto cells = ingest(w.path);
  if (cells.empty()) throw Error(ErrorKind::empty_input, w.path + " holds no cells");
  if (w.cell.empty()) return cells.front();
  for (const auto& c : cells)
    if (c.cell_id == w.cell) return c;
  throw Error(ErrorKind::validation, "cell '" + w.cell + "' not found in " + w.path);
}

OperationalWindow load_window(const WindowInput& w) {
  const CellRecord c = load_cell(w);
  return window_from_cell(c, w.cycles == 0 ? c.rows.size() : w.cycles);
}

ParamBounds read_bounds(const std::string& path) {
  ParamBounds b;
  if (path.empty()) return b;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, "bounds file: " + std::string(e.what()));
  }
  for (std::size_t i = 0; i < DegradationParams::size; ++i) {
    const char* name = DegradationParams::names[i];
    if (!j.contains(name)) continue;
    const auto& v = j.at(name);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw Error(ErrorKind::parse, std::string("bounds for ") + name + " must be [low, high]");
    b.lo[i] = v[0].get<double>();
    b.hi[i] = v[1].get<double>();
  }
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  DegradationParams p{0.002, 0.0005, 0.02, 2.0, 15.0};
  double step = 0.01, time_cap = 50.0;
  bool no_early_stop = false;
  std::string out;
};

void run_simulate(const SimulateArgs& a) {
  a.p.validate();
  SimulateOptions opt;
  opt.step = a.step;
  opt.time_cap = a.time_cap;
  opt.early_stop = !a.no_early_stop;
  const SimCurve c = simulate(a.p, opt);
  std::string out = "t,M,S,P,L,C\n";
  for (const auto& s : c.states) out += csv_line({s.t, s.M, s.S, s.P, s.L, s.C});
  io::write_file_atomic(a.out, out);
  note("simulated " + std::to_string(c.states.size()) + " states, terminated by " + to_string(c.terminated_by));
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string input, bounds, out;
  int restarts = 8;
  std::uint64_t seed = default_seed;
  int max_evals = 2500;
  bool fix_c = false;
  double fixed_c = 5.0;
};

void run_fit(const FitArgs& a) {
  const Table t = read_table(a.input);
  const std::size_t ti = t.column("t");
  const std::size_t ci = t.has("capacity") ? t.column("capacity") : t.column("C");
  ObservedCurve obs;
  for (const auto& r : t.rows) {
    obs.t.push_back(r[ti]);
    obs.capacity.push_back(r[ci]);
  }
  FitOptions opt;
  opt.restarts = a.restarts;
  opt.seed = a.seed;
  opt.max_evals = a.max_evals;
  opt.fit_c = !a.fix_c;
  opt.fixed_c = a.fixed_c;
  const FitResult r = fit(obs, read_bounds(a.bounds), opt);
  nlohmann::json j;
  for (std::size_t i = 0; i < DegradationParams::size; ++i) j["params"][DegradationParams::names[i]] = r.params.to_array()[i];
  j["objective"] = r.objective;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  io::write_file_atomic(a.out, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen-bank

struct GenBankArgs {
  std::string bounds, out, text_out;
  std::size_t count = 1000, grid = default_grid_size;
  std::uint64_t seed = default_seed;
  double step = 0.01, time_cap = 50.0;
};

void run_gen_bank(const GenBankArgs& a) {
  BankOptions opt;
  opt.grid_size = a.grid;
  opt.step = a.step;
  opt.time_cap = a.time_cap;
  const BankGeneration g = generate_bank(read_bounds(a.bounds), a.count, a.seed, opt);
  for (std::size_t i = 0; i < g.dropped.size(); ++i)
    note("dropped draw " + std::to_string(g.dropped[i]) + ": " + g.drop_reasons[i]);
  save_bank(g.bank, a.out);
  if (!a.text_out.empty()) {
    std::ostringstream os;
    write_bank_text(g.bank, os);
    io::write_file_atomic(a.text_out, os.str());
  }
  note("wrote " + std::to_string(g.bank.size()) + " curves to " + a.out);
}

// ---------------------------------------------------------------------------
// synth-data

struct SynthArgs {
  std::string bank, out;
  SynthOptions opt;
};

void run_synth(SynthArgs a) {
  const CurveBank bank = load_bank(a.bank);
  const SynthDataset d = synth_dataset(bank, a.opt);
  save_dataset(d, a.out);
  note("wrote " + std::to_string(d.cells.size()) + " cells (" + std::to_string(d.split.train.size()) + " train, " +
       std::to_string(d.split.val.size()) + " val, " + std::to_string(d.split.test.size()) + " test) to " + a.out);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string bank, data, out;
  TrainConfig cfg;
  std::string queue_source = "bank";
  std::size_t embed_dim = 64, hidden = 64, heads = 4;
  std::vector<std::size_t> lengths{50, 100, 200, 400};
  int fit_restarts = 1, fit_evals = 600;
  std::uint64_t init_seed = default_seed;
};

std::string train_snapshot(const TrainArgs& a) {
  std::ostringstream s;
  s << "bank=" << a.bank << "\ndata=" << a.data << "\nbatch=" << a.cfg.batch_size << "\nqueue-draw=" << a.cfg.queue_draw
    << "\nqueue-size=" << a.cfg.queue_size << "\nqueue-source=" << a.queue_source << "\nlr=" << io::format_double(a.cfg.learning_rate)
    << "\nepochs=" << a.cfg.max_epochs << "\npatience=" << a.cfg.patience << "\nseed=" << a.cfg.seed
    << "\ninit-seed=" << a.init_seed << "\nembed-dim=" << a.embed_dim << "\nhidden=" << a.hidden << "\nheads=" << a.heads
    << "\nfit-restarts=" << a.fit_restarts << "\nfit-evals=" << a.fit_evals << "\nwindow-lengths=";
  for (std::size_t i = 0; i < a.lengths.size(); ++i) s << (i ? " " : "") << a.lengths[i];
  s << "\n";
  return s.str();
}

void run_train(TrainArgs a) {
  if (a.queue_source == "bank") {
    a.cfg.queue_source = QueueSource::bank_curves;
  } else if (a.queue_source == "operational") {
    a.cfg.queue_source = QueueSource::operational_windows;
  } else {
    throw Error(ErrorKind::config, "queue-source must be 'bank' or 'operational'");
  }
  const CurveBank bank = load_bank(a.bank);
  const SynthDataset d = load_dataset(a.data);
  const auto train_cells = select(d.cells, d.split.train);
  const auto val_cells = select(d.cells, d.split.val);

  WindowConfig wc;
  wc.lengths = a.lengths;
  wc.fit.restarts = a.fit_restarts;
  wc.fit.max_evals = a.fit_evals;
  std::vector<LabeledWindow> train_w, val_w;
  std::string labels = "cell_id,split,positive_id\n";
  auto label = [&](const std::vector<CellRecord>& cells, std::vector<LabeledWindow>& into, const char* split) {
    std::vector<std::vector<LabeledWindow>> per(cells.size());
    std::vector<std::vector<std::string>> warn(cells.size());
    parallel_for(cells.size(), [&](std::size_t i) { per[i] = make_windows(cells[i], bank, wc, &warn[i]); });
    for (std::size_t i = 0; i < cells.size(); ++i) {
      for (const auto& w : warn[i]) note("warning: " + w);
      if (!per[i].empty()) labels += cells[i].cell_id + "," + split + "," + std::to_string(per[i][0].positive_id) + "\n";
      into.insert(into.end(), per[i].begin(), per[i].end());
    }
  };
  label(train_cells, train_w, "train");
  label(val_cells, val_w, "val");
  note("labelled " + std::to_string(train_w.size()) + " training and " + std::to_string(val_w.size()) + " validation windows");

  SimEncoderConfig sc;
  sc.input_length = bank.grid_size();
  sc.embed_dim = a.embed_dim;
  OpEncoderConfig oc;
  oc.hidden = a.hidden;
  oc.heads = a.heads;
  oc.embed_dim = a.embed_dim;
  std::set<std::string> chems;
  for (const auto& c : train_cells) chems.insert(c.chemistry);
  oc.chemistries.insert(oc.chemistries.end(), chems.begin(), chems.end());
  Model model = Model::create(sc, oc, a.init_seed);
  model.normalizer = fit_normalizer(train_cells);

  fs::create_directories(a.out);
  io::write_file_atomic(fs::path(a.out) / "config.txt", train_snapshot(a));
  io::write_file_atomic(fs::path(a.out) / "labels.csv", labels);
  std::string losses = "epoch,train_loss,val_loss,tau\n";
  const TrainResult r = train(to_pairs(train_w), to_pairs(val_w), bank, model, a.cfg, [&](const EpochRecord& e) {
    losses += std::to_string(e.epoch) + "," + io::format_double(e.train_loss) + "," + io::format_double(e.val_loss) + "," +
              io::format_double(e.tau) + "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d  train %.6f  val %.6f  tau %.5f", e.epoch, e.train_loss, e.val_loss, e.tau);
    note(buf);
  });
  if (r.diverged) {
    const auto& e = r.history.back();
    losses += std::to_string(e.epoch) + ",nan,nan," + io::format_double(e.tau) + "\n";
    note("warning: loss diverged; keeping the last good checkpoint");
  }
  io::write_file_atomic(fs::path(a.out) / "losses.csv", losses);
  save_checkpoint(r.best, fs::path(a.out) / "model.ckpt");
  note("best epoch " + std::to_string(r.best_epoch) + "; checkpoint written to " + (fs::path(a.out) / "model.ckpt").string());
}

// ---------------------------------------------------------------------------
// predict / uncertainty

struct PredictArgs {
  std::string bank, checkpoint, out, topk_out, paths_out, modes_out;
  WindowInput window;
  std::size_t k = 5;
};

struct Loaded {
  CurveBank bank;
  Model model;
  BankIndex index;
};

Loaded load_for_retrieval(const std::string& bank_path, const std::string& ckpt_path) {
  Loaded l{load_bank(bank_path), load_checkpoint(ckpt_path), {}};
  bool rebuilt = false;
  l.index = load_or_build_index(l.model, l.bank, bank_path, &rebuilt);
  if (rebuilt) note("embedded " + std::to_string(l.bank.size()) + " bank curves into " + sidecar_path(bank_path).string());
  return l;
}

void run_predict(const PredictArgs& a) {
  const Loaded l = load_for_retrieval(a.bank, a.checkpoint);
  const OperationalWindow w = load_window(a.window);
  PredictOptions opt;
  opt.k = a.k;
  const Forecast f = predict(w, l.bank, l.model, l.index, opt);

  std::string out = "cycle,capacity_pred\n";
  for (const auto& p : f.predicted_curve) out += csv_line({p.cycle, p.capacity});
  io::write_file_atomic(a.out, out);

  std::string topk = "rank,id,score\n", paths = "rank,id,score,cycle,capacity\n";
  const auto ranked = top_k_paths(f, l.bank, w);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    topk += std::to_string(r + 1) + "," + std::to_string(ranked[r].id) + "," + io::format_double(ranked[r].score) + "\n";
    for (const auto& p : ranked[r].curve)
      paths += std::to_string(r + 1) + "," + std::to_string(ranked[r].id) + "," + io::format_double(ranked[r].score) + "," +
               io::format_double(p.cycle) + "," + io::format_double(p.capacity) + "\n";
  }
  io::write_file_atomic(a.topk_out.empty() ? with_suffix(a.out, ".topk.csv") : fs::path(a.topk_out), topk);
  io::write_file_atomic(a.paths_out.empty() ? with_suffix(a.out, ".paths.csv") : fs::path(a.paths_out), paths);

  std::string modes = "cycle,lam_fade,lli_fade,capacity\n";
  for (std::size_t i = 0; i < f.modes.size(); ++i)
    modes += csv_line({f.predicted_curve[i].cycle, f.modes[i].lam_fade, f.modes[i].lli_fade, f.modes[i].capacity});
  io::write_file_atomic(a.modes_out.empty() ? with_suffix(a.out, ".modes.csv") : fs::path(a.modes_out), modes);
  char buf[200];
  std::snprintf(buf, sizeof buf, "best entry %llu (similarity %.6f), aligned life %.1f cycles",
                static_cast<unsigned long long>(f.best_entry), f.similarity, f.life_cycles);
  note(buf);
}

struct UncertaintyArgs {
  PredictArgs base;
  UncertaintyOptions opt;
};

void run_uncertainty(UncertaintyArgs a) {
  const Loaded l = load_for_retrieval(a.base.bank, a.base.checkpoint);
  const OperationalWindow w = load_window(a.base.window);
  PredictOptions po;
  po.k = 1;
  const Forecast f = predict(w, l.bank, l.model, l.index, po);
  a.opt.grid_size = l.bank.grid_size();
  a.opt.step = l.bank.provenance().step;
  a.opt.time_cap = l.bank.provenance().time_cap;
  const UncertaintyBand band = uncertainty(w, f, l.model, a.opt);
  std::string out = "cycle,capacity_pred,q05,q50,q95\n";
  for (std::size_t i = 0; i < band.cycles.size(); ++i) {
    const double pred = capacity_at_cycle(l.bank.at(f.best_entry).capacity, f.life_cycles, band.cycles[i]);
    out += csv_line({band.cycles[i], pred, band.q05[i], band.q50[i], band.q95[i]});
  }
  io::write_file_atomic(a.base.out, out);
  note("band from " + std::to_string(band.samples.size()) + " selected curves, mean width " +
       io::format_double(band.mean_width()));
}

// ---------------------------------------------------------------------------
// zero-shot

struct ZeroShotArgs {
  std::string checkpoint, candidates, out;
  WindowInput window;
};

void run_zero_shot(const ZeroShotArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  const OperationalWindow w = load_window(a.window);
  std::vector<std::string> labels;
  const Table t = read_table(a.candidates, &labels);
  const std::size_t vi = t.column("capacity");
  std::vector<std::string> names;
  std::vector<std::vector<double>> curves;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (names.empty() || names.back() != labels[r]) {
      if (std::find(names.begin(), names.end(), labels[r]) != names.end())
        throw Error(ErrorKind::parse, "candidate '" + labels[r] + "' rows are not contiguous");
      names.push_back(labels[r]);
      curves.emplace_back();
    }
    curves.back().push_back(t.rows[r][vi]);
  }
  const auto ranked = zero_shot_classify(w, curves, model);
  std::string out = "rank,candidate,score\n";
  for (std::size_t i = 0; i < ranked.size(); ++i)
    out += std::to_string(i + 1) + "," + names[ranked[i].index] + "," + io::format_double(ranked[i].score) + "\n";
  io::write_file_atomic(a.out, out);
  note("top candidate: " + names[ranked.front().index]);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string forecast, out;
  WindowInput truth;
  double from_cycle = -1.0;
};

void run_evaluate(const EvaluateArgs& a) {
  const Table t = read_table(a.forecast);
  const std::size_t ci = t.column("cycle"), pi = t.column("capacity_pred");
  std::vector<CyclePoint> f;
  for (const auto& r : t.rows) f.push_back({r[ci], r[pi]});
  const CellRecord cell = load_cell(a.truth);
  double from = a.from_cycle;
  if (from < 0.0) from = a.truth.cycles > 0 ? cell.rows[std::min(a.truth.cycles, cell.rows.size()) - 1].cycle : -1.0;
  const auto s = forecast_horizon(f, cell, from);
  const auto m = evaluate(s.pred, s.truth);
  io::write_file_atomic(a.out, "mse,mae,mape\n" + csv_line({m.mse, m.mae, m.mape}));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu points: mse %.6g  mae %.6g  mape %.6g", m.points, m.mse, m.mae, m.mape);
  note(buf);
}

// ---------------------------------------------------------------------------
// export-plot

struct PlotArgs {
  std::string forecast, paths, modes, band, out_dir;
  WindowInput observed;
};

void write_chart(const fs::path& dir, const std::string& stem, const Chart& chart) {
  io::write_file_atomic(dir / (stem + ".svg"), render_svg(chart));
  std::string csv = "series,x,y\n";
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) csv += s.label + "," + io::format_double(s.x[i]) + "," + io::format_double(s.y[i]) + "\n";
  io::write_file_atomic(dir / (stem + ".csv"), csv);
}

void run_export_plot(const PlotArgs& a) {
  fs::create_directories(a.out_dir);
  int written = 0;
  Series obs{"observed", {}, {}, "#000000"};
  if (!a.observed.path.empty()) {
    const CellRecord c = load_cell(a.observed);
    const std::size_t n = a.observed.cycles == 0 ? c.rows.size() : std::min(a.observed.cycles, c.rows.size());
    for (std::size_t i = 0; i < n; ++i) {
      obs.x.push_back(c.rows[i].cycle);
      obs.y.push_back(c.soh(i));
    }
  }
  if (!a.forecast.empty()) {
    const Table t = read_table(a.forecast);
    Chart ch{"Observed capacity and matched simulated curve", "cycle", "SoH", {}};
    if (!obs.x.empty()) ch.series.push_back(obs);
    Series s{"matched curve", {}, {}, palette()[1], true};
    for (const auto& r : t.rows) {
      s.x.push_back(r[t.column("cycle")]);
      s.y.push_back(r[t.column("capacity_pred")]);
    }
    ch.series.push_back(s);
    write_chart(a.out_dir, "forecast", ch);
    ++written;
  }
  if (!a.modes.empty()) {
    const Table t = read_table(a.modes);
    Chart ch{"Degradation modes", "cycle", "fraction", {}};
    const char* cols[] = {"capacity", "lam_fade", "lli_fade"};
    const char* names[] = {"capacity", "LAM (1 - M)", "LLI (L)"};
    for (int k = 0; k < 3; ++k) {
      Series s{names[k], {}, {}, palette()[static_cast<std::size_t>(k)]};
      for (const auto& r : t.rows) {
        s.x.push_back(r[t.column("cycle")]);
        s.y.push_back(r[t.column(cols[k])]);
      }
      ch.series.push_back(s);
    }
    write_chart(a.out_dir, "modes", ch);
    ++written;
  }
  if (!a.paths.empty()) {
    const Table t = read_table(a.paths);
    Chart ch{"Most likely degradation paths", "cycle", "SoH", {}};
    if (!obs.x.empty()) ch.series.push_back(obs);
    std::map<int, Series> by_rank;
    for (const auto& r : t.rows) {
      const int rank = static_cast<int>(r[t.column("rank")]);
      auto& s = by_rank[rank];
      if (s.label.empty()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "#%d id %d (%.3f)", rank, static_cast<int>(r[t.column("id")]), r[t.column("score")]);
        s.label = buf;
        s.colour = palette()[static_cast<std::size_t>(rank) % palette().size()];
      }
      s.x.push_back(r[t.column("cycle")]);
      s.y.push_back(r[t.column("capacity")]);
    }
    for (auto& [rank, s] : by_rank) ch.series.push_back(s);
    write_chart(a.out_dir, "topk", ch);
    ++written;
  }
  if (!a.band.empty()) {
    const Table t = read_table(a.band);
    Chart ch{"Perturbation uncertainty band", "cycle", "SoH", {}};
    if (!obs.x.empty()) ch.series.push_back(obs);
    const char* cols[] = {"q05", "q50", "q95", "capacity_pred"};
    for (int k = 0; k < 4; ++k) {
      Series s{cols[k], {}, {}, k == 3 ? palette()[1] : palette()[0], k != 1 && k != 3};
      for (const auto& r : t.rows) {
        s.x.push_back(r[t.column("cycle")]);
        s.y.push_back(r[t.column(cols[k])]);
      }
      ch.series.push_back(s);
    }
    write_chart(a.out_dir, "uncertainty", ch);
    ++written;
  }
  if (written == 0) throw Error(ErrorKind::config, "nothing to plot: pass --forecast, --modes, --paths or --band");
  note("wrote " + std::to_string(written) + " chart(s) to " + a.out_dir);
}

// ---------------------------------------------------------------------------
// Config files: key=value lines become flags placed before the command-line
// flags, so explicit flags win.

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> injected;
  std::size_t sub_pos = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      std::ifstream in(args[i + 1]);
      if (!in) throw CLI::ValidationError("--config", "cannot read " + args[i + 1]);
      std::string line;
      while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
          const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
          return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw CLI::ValidationError("--config", "line without '=': " + line);
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        if (value == "true") {
          injected.push_back("--" + key);
        } else if (value != "false") {
          injected.push_back("--" + key);
          std::istringstream vs(value);
          for (std::string v; vs >> v;) injected.push_back(v);
        }
      }
      ++i;
      continue;
    }
    if (sub_pos == args.size() && !args[i].empty() && args[i][0] != '-') sub_pos = i;
    out.push_back(args[i]);
  }
  if (!injected.empty() && sub_pos < out.size()) out.insert(out.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(), injected.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-based battery degradation forecasting with a contrastively trained curve bank."};
  app.name("accept");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  // Consumed by expand_config before parsing; declared so it shows in --help.
  std::string config_path;
  auto config_note = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file of flags for this command (flags on the command line win)");
  };

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Integrate the degradation model and write its state trajectory");
  s_sim->add_option("--k", sim.p.k, "Active-material loss rate")->capture_default_str();
  s_sim->add_option("--a0", sim.p.a0, "SEI growth rate")->capture_default_str();
  s_sim->add_option("--b0", sim.p.b0, "Plating growth rate")->capture_default_str();
  s_sim->add_option("--c", sim.p.c, "Knee sharpness")->capture_default_str();
  s_sim->add_option("--tp", sim.p.t_p, "Plating onset time")->capture_default_str();
  s_sim->add_option("--step", sim.step, "RK4 step size")->capture_default_str();
  s_sim->add_option("--time-cap", sim.time_cap, "Maximum simulated time")->capture_default_str();
  s_sim->add_flag("--no-early-stop", sim.no_early_stop, "Keep integrating below 70% capacity");
  s_sim->add_option("--out", sim.out, "Output CSV (t,M,S,P,L,C)")->required();
  config_note(s_sim);

  FitArgs fa;
  auto* s_fit = app.add_subcommand("fit", "Fit model parameters to an observed capacity curve");
  s_fit->add_option("--input", fa.input, "CSV with columns t and capacity (or C)")->required()->check(CLI::ExistingFile);
  s_fit->add_option("--bounds", fa.bounds, "JSON file of [low, high] per parameter");
  s_fit->add_option("--restarts", fa.restarts, "Random restarts")->capture_default_str();
  s_fit->add_option("--seed", fa.seed, "Restart seed")->capture_default_str();
  s_fit->add_option("--max-evals", fa.max_evals, "Objective evaluations per restart")->capture_default_str();
  s_fit->add_flag("--fix-c", fa.fix_c, "Hold c at --fixed-c instead of fitting it");
  s_fit->add_option("--fixed-c", fa.fixed_c, "Value of c when --fix-c is set")->capture_default_str();
  s_fit->add_option("--out", fa.out, "Output JSON")->required();
  config_note(s_fit);

  GenBankArgs gb;
  auto* s_bank = app.add_subcommand("gen-bank", "Generate a curve bank");
  s_bank->add_option("--bounds", gb.bounds, "JSON file of [low, high] per parameter (default bounds otherwise)");
  s_bank->add_option("--count", gb.count, "Number of curves")->capture_default_str();
  s_bank->add_option("--seed", gb.seed, "Sampling seed")->capture_default_str();
  s_bank->add_option("--grid", gb.grid, "Points per resampled curve")->capture_default_str();
  s_bank->add_option("--step", gb.step, "RK4 step size")->capture_default_str();
  s_bank->add_option("--time-cap", gb.time_cap, "Maximum simulated time")->capture_default_str();
  s_bank->add_option("--out", gb.out, "Binary bank file")->required();
  s_bank->add_option("--text-out", gb.text_out, "Optional lossless text export");
  config_note(s_bank);

  SynthArgs sy;
  auto* s_syn = app.add_subcommand("synth-data", "Generate a synthetic cell dataset from a bank");
  s_syn->add_option("--bank", sy.bank, "Bank file")->required()->check(CLI::ExistingFile);
  s_syn->add_option("--cells", sy.opt.n_cells, "Number of cells")->capture_default_str();
  s_syn->add_option("--noise", sy.opt.soh_noise, "SoH noise standard deviation")->capture_default_str();
  s_syn->add_option("--seed", sy.opt.seed, "Dataset seed")->capture_default_str();
  s_syn->add_option("--min-life", sy.opt.min_life, "Shortest cell life in cycles")->capture_default_str();
  s_syn->add_option("--max-life", sy.opt.max_life, "Longest cell life in cycles")->capture_default_str();
  s_syn->add_option("--out", sy.out, "Output directory (cells.csv, truth.csv, manifest.json)")->required();
  config_note(s_syn);

  TrainArgs ta;
  ta.cfg.seed = default_seed;
  auto* s_train = app.add_subcommand("train", "Train both encoders contrastively");
  s_train->add_option("--bank", ta.bank, "Bank file")->required()->check(CLI::ExistingFile);
  s_train->add_option("--data", ta.data, "Dataset directory with cells.csv and manifest.json")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--out", ta.out, "Run directory")->required();
  s_train->add_option("--batch", ta.cfg.batch_size, "Mini-batch size")->capture_default_str();
  s_train->add_option("--queue-draw", ta.cfg.queue_draw, "Negatives sampled per batch")->capture_default_str();
  s_train->add_option("--queue-size", ta.cfg.queue_size, "Entries held in the negative queue")->capture_default_str();
  s_train->add_option("--queue-source", ta.queue_source, "Queue contents: bank or operational")->capture_default_str();
  s_train->add_option("--lr", ta.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  s_train->add_option("--epochs", ta.cfg.max_epochs, "Maximum epochs")->capture_default_str();
  s_train->add_option("--patience", ta.cfg.patience, "Epochs without validation improvement before stopping")->capture_default_str();
  s_train->add_option("--seed", ta.cfg.seed, "Shuffling and sampling seed")->capture_default_str();
  s_train->add_option("--init-seed", ta.init_seed, "Weight initialisation seed")->capture_default_str();
  s_train->add_option("--embed-dim", ta.embed_dim, "Embedding dimension")->capture_default_str();
  s_train->add_option("--hidden", ta.hidden, "Operational encoder hidden size")->capture_default_str();
  s_train->add_option("--heads", ta.heads, "Attention heads")->capture_default_str();
  s_train->add_option("--window-lengths", ta.lengths, "Window lengths in cycles")->capture_default_str()->expected(1, -1);
  s_train->add_option("--fit-restarts", ta.fit_restarts, "Random restarts when labelling cells")->capture_default_str();
  s_train->add_option("--fit-evals", ta.fit_evals, "Objective evaluations per labelling restart")->capture_default_str();
  config_note(s_train);

  PredictArgs pa;
  auto* s_pred = app.add_subcommand("predict", "Forecast a cell from its operational window");
  s_pred->add_option("--bank", pa.bank, "Bank file")->required()->check(CLI::ExistingFile);
  s_pred->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  add_window_options(s_pred, pa.window);
  s_pred->add_option("--k", pa.k, "Ranked alternatives to report")->capture_default_str();
  s_pred->add_option("--out", pa.out, "Forecast CSV (cycle,capacity_pred)")->required();
  s_pred->add_option("--topk-out", pa.topk_out, "Ranked ids CSV (default: <out>.topk.csv)");
  s_pred->add_option("--paths-out", pa.paths_out, "Ranked curves CSV (default: <out>.paths.csv)");
  s_pred->add_option("--modes-out", pa.modes_out, "Mode report CSV (default: <out>.modes.csv)");
  config_note(s_pred);

  UncertaintyArgs ua;
  auto* s_unc = app.add_subcommand("uncertainty", "Perturbation band around the best-matching curve");
  s_unc->add_option("--bank", ua.base.bank, "Bank file")->required()->check(CLI::ExistingFile);
  s_unc->add_option("--checkpoint", ua.base.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  add_window_options(s_unc, ua.base.window);
  s_unc->add_option("--n", ua.opt.rounds, "Perturbation rounds")->capture_default_str();
  s_unc->add_option("--sigma", ua.opt.sigma_rel, "Relative perturbation size")->capture_default_str();
  s_unc->add_option("--set-size", ua.opt.set_size, "Perturbed candidates per round")->capture_default_str();
  s_unc->add_option("--seed", ua.opt.seed, "Perturbation seed")->capture_default_str();
  s_unc->add_option("--out", ua.base.out, "Band CSV (cycle,capacity_pred,q05,q50,q95)")->required();
  config_note(s_unc);

  ZeroShotArgs za;
  auto* s_zs = app.add_subcommand("zero-shot", "Rank externally supplied candidate curves for a window");
  s_zs->add_option("--checkpoint", za.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  add_window_options(s_zs, za.window);
  s_zs->add_option("--candidates", za.candidates, "CSV candidate,index,capacity with one grid curve per candidate")
      ->required()->check(CLI::ExistingFile);
  s_zs->add_option("--out", za.out, "Ranking CSV (rank,candidate,score)")->required();
  config_note(s_zs);

  EvaluateArgs ea;
  auto* s_eval = app.add_subcommand("evaluate", "Score a forecast against the cell's true future");
  s_eval->add_option("--forecast", ea.forecast, "Forecast CSV from predict")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--data", ea.truth.path, "Cell CSV with the true trajectory")->required()->check(CLI::ExistingFile);
  s_eval->add_option("--cell", ea.truth.cell, "Cell id (default: the first cell in the file)");
  s_eval->add_option("--cycles", ea.truth.cycles, "Length of the input window; the horizon starts after it")->capture_default_str();
  s_eval->add_option("--from-cycle", ea.from_cycle, "Explicit horizon start cycle (overrides --cycles)");
  s_eval->add_option("--out", ea.out, "Metrics CSV (mse,mae,mape)")->required();
  config_note(s_eval);

  PlotArgs pl;
  auto* s_plot = app.add_subcommand("export-plot", "Write SVG charts and their data from command outputs");
  s_plot->add_option("--forecast", pl.forecast, "Forecast CSV")->check(CLI::ExistingFile);
  s_plot->add_option("--paths", pl.paths, "Ranked curves CSV")->check(CLI::ExistingFile);
  s_plot->add_option("--modes", pl.modes, "Mode report CSV")->check(CLI::ExistingFile);
  s_plot->add_option("--band", pl.band, "Uncertainty band CSV")->check(CLI::ExistingFile);
  s_plot->add_option("--observed", pl.observed.path, "Cell CSV to overlay")->check(CLI::ExistingFile);
  s_plot->add_option("--cell", pl.observed.cell, "Cell id in --observed");
  s_plot->add_option("--cycles", pl.observed.cycles, "Overlay only the first N rows")->capture_default_str();
  s_plot->add_option("--out-dir", pl.out_dir, "Output directory")->required();
  config_note(s_plot);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s_sim) run_simulate(sim);
    else if (*s_fit) run_fit(fa);
    else if (*s_bank) run_gen_bank(gb);
    else if (*s_syn) run_synth(sy);
    else if (*s_train) run_train(ta);
    else if (*s_pred) run_predict(pa);
    else if (*s_unc) run_uncertainty(ua);
    else if (*s_zs) run_zero_shot(za);
    else if (*s_eval) run_evaluate(ea);
    else if (*s_plot) run_export_plot(pl);
  } catch (const Error& e) {
    std::cerr << "error: kind=" << to_string(e.kind()) << " message=" << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal message=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
