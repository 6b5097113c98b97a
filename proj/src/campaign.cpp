#include "dlcz/campaign.hpp"

#include "dlcz/config.hpp"
#include "dlcz/engine.hpp"
#include "dlcz/errors.hpp"
#include "dlcz/inference.hpp"
#include "dlcz/model.hpp"
#include "dlcz/presets.hpp"
#include "dlcz/records.hpp"
#include "dlcz/svg_plot.hpp"
#include "dlcz/tomography.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <thread>

namespace dlcz::cli {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using engine::Ensemble;
using engine::RunKind;
using engine::TrialRecord;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::string seed;
  int threads = 0;
  std::string out = "dlcz-out";
  std::string records;
  bool clip = false;
  bool infer = false;
  std::string target;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  int threads;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

Config resolve_config(const Options& o, const std::string& preset) {
  Config c;
  if (!preset.empty()) c.merge_text(preset_text(preset), "preset " + preset);
  if (!o.config_file.empty()) c.merge_file(o.config_file);
  for (const auto& s : o.sets) c.apply_override(s);
  if (!o.seed.empty()) c.set("run.seed", o.seed);
  if (o.clip) c.set("inference.policy", "clip");
  return c;
}

json config_json(const Config& c) {
  json doc = json::object();
  for (const auto& k : schema()) doc[k.section][k.key] = c.get(k.name());
  return doc;
}

const char* herald_name(std::size_t h) { return h == 0 ? "D1a" : "D1b"; }

json summary_json(const engine::RecordHeader& header, const engine::RunSummary& s, const Config& config) {
  json doc;
  doc["format_version"] = engine::kRecordFormatVersion;
  doc["kind"] = engine::to_string(s.kind);
  doc["seed"] = header.seed;
  doc["config_hash"] = header.config_hash;
  doc["n_trials"] = s.n_trials;
  if (s.kind == RunKind::entangle) {
    doc["phases"] = header.phases;
    doc["heralds"] = {{"D1a", s.n_heralds[0]}, {"D1b", s.n_heralds[1]}, {"total", s.total_heralds()}};
    doc["herald_probability"] = s.herald_probability();
    json settings = json::array();
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t k = 0; k < s.by_setting[h].size(); ++k) {
        const auto& c = s.by_setting[h][k];
        json row;
        row["herald"] = herald_name(h);
        row["mode"] = k == 0 ? "S" : "I";
        row["phase"] = k == 0 ? json(nullptr) : json(header.phases[k - 1]);
        row["heralds"] = c.heralds;
        row["clicks_2a"] = c.clicks_2a;
        row["clicks_2b"] = c.clicks_2b;
        row["coincidences"] = c.coincidences;
        settings.push_back(row);
      }
    }
    doc["settings"] = settings;
  } else {
    doc["ensemble"] = engine::to_string(s.ensemble);
    doc["n_field1"] = s.n_field1;
    doc["n_field2"] = s.n_field2;
    doc["n_joint"] = s.n_joint;
  }
  doc["config"] = config_json(config);
  return doc;
}

json rho_json(const model::RestrictedDensityMatrix& r) {
  return {{"p00", r.p00}, {"p01", r.p01}, {"p10", r.p10}, {"p11", r.p11}, {"d", std::abs(r.d)},
          {"d_re", r.d.real()}, {"d_im", r.d.imag()}, {"P", r.normalization()}};
}

json concurrence_json(const model::ConcurrenceResult& c) {
  json doc = {{"C", c.C}, {"C0", c.C0}};
  doc["sigma"] = c.sigma ? num_or_null(*c.sigma) : json(nullptr);
  return doc;
}

json correlations_json(const tomo::CorrelationStats& s) {
  return {{"p1", s.p1},         {"p2", s.p2},         {"p12", s.p12},       {"g12", s.g12},
          {"p_c", s.p_c},       {"se_p1", s.se_p1},   {"se_p2", s.se_p2},   {"se_p12", s.se_p12},
          {"se_g12", s.se_g12}, {"se_p_c", s.se_p_c}, {"n_trials", s.n_trials}};
}

void warn_clipped(const std::vector<std::string>& clipped, const char* column, std::ostream& err) {
  for (const auto& e : clipped) err << "warning: clipped " << e << " in " << column << " column\n";
}

json columns_json(const inference::TableColumns& t, const Config& c) {
  json doc;
  doc["policy"] = c.get("inference.policy");
  doc["efficiencies"] = {{"eta_path_u", c.real("inference.eta_path_u")},
                         {"eta_path_d", c.real("inference.eta_path_d")},
                         {"eta_readout", c.real("inference.eta_readout")}};
  doc["detected"] = rho_json(t.detected);
  doc["detected"]["concurrence"] = concurrence_json(t.c_detected);
  doc["output"] = rho_json(t.output);
  doc["output"]["concurrence"] = concurrence_json(t.c_output);
  doc["output"]["clipped"] = t.clipped_output;
  doc["atomic"] = rho_json(t.atomic);
  doc["atomic"]["concurrence"] = concurrence_json(t.c_atomic);
  doc["atomic"]["clipped"] = t.clipped_atomic;
  return doc;
}

struct EntangleAnalysis {
  json doc;
  std::optional<tomo::TomographyResult> tomography;
  tomo::DiagonalEstimate diagonals;
};

// Analysis of entangle records; shared by simulate-time and offline analysis
// so both produce identical documents.
EntangleAnalysis analyze_entangle_records(const Config& config, const engine::RecordHeader& header,
                                          std::span<const TrialRecord> records, bool infer, std::ostream& err) {
  EntangleAnalysis a;
  json& doc = a.doc;
  doc["format_version"] = engine::kRecordFormatVersion;
  doc["kind"] = "entangle-analysis";
  doc["seed"] = header.seed;
  doc["config_hash"] = header.config_hash;

  const auto counts = tomo::tabulate(records, header.phases);
  a.diagonals = tomo::estimate_diagonals(counts);
  const auto& d = a.diagonals;
  doc["diagonals"] = {{"p00", d.p00}, {"p01", d.p01}, {"p10", d.p10}, {"p11", d.p11}, {"se00", d.se00},
                      {"se01", d.se01}, {"se10", d.se10}, {"se11", d.se11}, {"n_heralds", d.n_heralds}};
  doc["p_c_herald"] = 1.0 - d.p00;
  doc["se_p_c_herald"] = d.se00;
  if (config.get("readout.mode") == "separate") return a;

  const auto resamples = config.uinteger("analysis.bootstrap_resamples");
  a.tomography = tomo::analyze_entangle(counts, resamples, config.uinteger("analysis.bootstrap_seed"));
  const auto& t = *a.tomography;
  const auto& vis = t.pipeline.visibility;
  json fits = json::array();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t det = 0; det < 2; ++det) {
      const auto& f = vis.fits[h][det];
      if (!f) continue;
      fits.push_back({{"herald", herald_name(h)},
                      {"detector", det == 0 ? "D2a" : "D2b"},
                      {"amplitude", f->amplitude},
                      {"visibility", f->visibility},
                      {"sigma_visibility", f->sigma_visibility},
                      {"phase_offset", f->phase_offset},
                      {"sigma_phase", f->sigma_phase}});
    }
  }
  doc["visibility"] = {{"V", vis.V}, {"sigma", vis.sigma}};
  doc["visibility"]["herald_offset"] = vis.herald_offset ? json(*vis.herald_offset) : json(nullptr);
  doc["visibility"]["herald_offset_sigma"] = vis.herald_offset_sigma;
  doc["visibility"]["fits"] = fits;
  doc["rho"] = rho_json(t.pipeline.assembled.rho);
  doc["rho"]["repaired"] = t.pipeline.assembled.repaired;
  doc["concurrence"] = concurrence_json(t.pipeline.concurrence);
  doc["concurrence"]["n_bootstrap"] = t.bootstrap.n_resamples;
  doc["concurrence"]["failed_resamples"] = t.bootstrap.failed_resamples;
  doc["concurrence"]["few_heralds"] = t.bootstrap.few_heralds;
  if (t.bootstrap.few_heralds) err << "warning: fewer than 100 heralds; bootstrap sigma is unreliable\n";
  if (t.pipeline.assembled.repaired) err << "warning: |d| exceeded sqrt(p01 p10) and was clamped\n";

  if (infer) {
    const auto cols = inference::correct_chain(t.pipeline.assembled.rho, to_chain(config), to_policy(config));
    warn_clipped(cols.clipped_output, "output", err);
    warn_clipped(cols.clipped_atomic, "atomic", err);
    doc["inference"] = columns_json(cols, config);
  }
  return a;
}

json characterize_analysis(const engine::RecordHeader& header, const engine::RunSummary& s) {
  json doc;
  doc["format_version"] = engine::kRecordFormatVersion;
  doc["kind"] = "characterize-analysis";
  doc["seed"] = header.seed;
  doc["config_hash"] = header.config_hash;
  doc["ensemble"] = engine::to_string(s.ensemble);
  doc["correlations"] = correlations_json(tomo::estimate_correlations(s.n_trials, s.n_field1, s.n_field2, s.n_joint));
  return doc;
}

struct Simulation {
  engine::RecordHeader header;
  engine::RunSummary summary;
  engine::Diagnostics diagnostics;
  std::vector<TrialRecord> records;
  int threads = 1;
};

Simulation simulate(RunKind kind, const Config& config, const fs::path& dir, int threads) {
  Simulation sim;
  sim.threads = threads;
  const auto exp = to_experiment(config);
  sim.header.kind = kind;
  sim.header.seed = exp.seed;
  sim.header.n_trials = exp.n_trials;
  sim.header.config_hash = config.hash();
  sim.header.ensemble = config.get("run.ensemble") == "D" ? Ensemble::D : Ensemble::U;
  sim.header.phases = kind == RunKind::entangle ? exp.phases : std::vector<double>{};
  sim.header.config_text = config.canonical_text();

  fs::create_directories(dir);
  std::ofstream file(dir / "records.csv", std::ios::binary);
  if (!file) throw std::runtime_error("cannot write " + (dir / "records.csv").string());
  engine::RecordWriter writer(file, sim.header);
  auto sink = [&](const TrialRecord& r) {
    writer.write(r);
    sim.records.push_back(r);
  };
  sim.summary = kind == RunKind::entangle
                    ? engine::run_entangle(exp, sink, threads, &sim.diagnostics)
                    : engine::run_characterize(exp, sim.header.ensemble, sink, threads, &sim.diagnostics);
  writer.finish();
  if (!file) throw std::runtime_error("write failed for records.csv");

  write_text(dir / "config.ini", config.canonical_text());
  write_json(dir / "summary.json", summary_json(sim.header, sim.summary, config));
  return sim;
}

json storage_json(const engine::StoragePoint& sp) {
  return {{"survival_factor", sp.survival_factor},
          {"background_mean", sp.background_mean},
          {"target_p_c", sp.target_p_c},
          {"target_g12", sp.target_g12}};
}

void write_run_info(const fs::path& dir, const std::string& command, const Simulation& sim) {
  const auto& d = sim.diagnostics;
  json doc;
  doc["command"] = command;
  doc["threads"] = sim.threads;
  doc["wall_seconds"] = d.wall_seconds;
  doc["trials_per_second"] = d.trials_per_second;
  doc["effective_trial_rate_hz"] = d.effective_trial_rate;
  doc["preparation_rate_hz"] = d.preparation_rate;
  doc["double_herald_trials"] = d.double_herald_trials;
  doc["truncation_tail"] = d.truncation_tail;
  doc["storage"] = storage_json(d.storage);
  write_json(dir / "run_info.json", doc);
}

void print_entangle(const Simulation& sim, const EntangleAnalysis& a, std::ostream& out) {
  out << "heralds " << sim.summary.total_heralds() << " (p = " << fmt("%.4g", sim.summary.herald_probability())
      << ")\n";
  out << "p00 " << fmt("%.5f", a.diagonals.p00) << "  p10 " << fmt("%.5f", a.diagonals.p10) << "  p01 "
      << fmt("%.5f", a.diagonals.p01) << "  p11 " << fmt("%.3e", a.diagonals.p11) << '\n';
  if (a.tomography) {
    const auto& t = *a.tomography;
    out << "V " << fmt("%.4f", t.pipeline.visibility.V) << " +- " << fmt("%.4f", t.pipeline.visibility.sigma)
        << "  C " << fmt("%.4f", t.pipeline.concurrence.C) << " +- "
        << fmt("%.4f", t.pipeline.concurrence.sigma.value_or(kNaN)) << "  (C0 "
        << fmt("%.4f", t.pipeline.concurrence.C0) << ")\n";
  }
}

int cmd_entangle(const Options& o, Io& io) {
  const Config config = resolve_config(o, "");
  const fs::path dir = o.out;
  const auto sim = simulate(RunKind::entangle, config, dir, io.threads);
  write_run_info(dir, "entangle", sim);
  const auto a = analyze_entangle_records(config, sim.header, sim.records, o.infer, io.err);
  write_json(dir / "analysis.json", a.doc);
  print_entangle(sim, a, io.out);
  return kExitOk;
}

int cmd_characterize(const Options& o, Io& io) {
  const Config config = resolve_config(o, "");
  const fs::path dir = o.out;
  const auto sim = simulate(RunKind::characterize, config, dir, io.threads);
  write_run_info(dir, "characterize", sim);
  const auto doc = characterize_analysis(sim.header, sim.summary);
  write_json(dir / "analysis.json", doc);
  const auto& c = doc["correlations"];
  io.out << "ensemble " << engine::to_string(sim.summary.ensemble) << "  g12 " << fmt("%.3f", c["g12"].get<double>())
         << " +- " << fmt("%.3f", c["se_g12"].get<double>()) << "  p_c " << fmt("%.4f", c["p_c"].get<double>())
         << " +- " << fmt("%.4f", c["se_p_c"].get<double>()) << '\n';
  return kExitOk;
}

int cmd_analyze(const Options& o, Io& io) {
  if (o.records.empty()) throw UsageError("analyze needs --records FILE");
  if (!o.config_file.empty()) throw UsageError("analyze takes its config from the record file; use --set for analysis keys");
  const auto set = engine::read_records_file(o.records);
  Config config = parse_config(set.header.config_text, o.records + " (config echo)");
  if (config.hash() != set.header.config_hash) {
    throw RecordFormatError("config echo does not match config_hash " + set.header.config_hash);
  }
  const Config recorded = config;
  for (const auto& s : o.sets) {
    const auto section = s.substr(0, s.find('.'));
    if (section != "analysis" && section != "inference") {
      throw ConfigError("analyze only accepts overrides in [analysis] and [inference]", s);
    }
    config.apply_override(s);
  }
  if (o.clip) config.set("inference.policy", "clip");

  const auto& h = set.header;
  const auto summary = engine::summarize_records(h.kind, h.n_trials, h.seed, h.phases.size(), h.ensemble, set.records);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_json(dir / "summary.json", summary_json(h, summary, recorded));
  if (h.kind == RunKind::entangle) {
    const auto a = analyze_entangle_records(config, h, set.records, o.infer, io.err);
    write_json(dir / "analysis.json", a.doc);
    Simulation view;
    view.summary = summary;
    print_entangle(view, a, io.out);
  } else {
    const auto doc = characterize_analysis(h, summary);
    write_json(dir / "analysis.json", doc);
    io.out << "g12 " << fmt("%.3f", doc["correlations"]["g12"].get<double>()) << '\n';
  }
  return kExitOk;
}

struct SweepRow {
  std::string value_text;
  double value = kNaN;
  double g12 = kNaN, se_g12 = kNaN, p_c = kNaN, se_p_c = kNaN;
  double V = kNaN, C = kNaN, C_sigma = kNaN, C0 = kNaN;
  std::uint64_t heralds = 0;
  bool ok = false;
  std::string error;
};

std::string point_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "point_%03zu", i);
  return buf;
}

std::vector<SweepRow> run_sweep(const Config& config, const fs::path& dir, Io& io) {
  const auto values = config.real_list("sweep.values");
  if (values.empty()) throw ConfigError("sweep needs at least one value", "sweep.values");
  const bool chi = config.get("sweep.parameter") == "chi";
  const auto base_seed = config.uinteger("run.seed");
  std::uint64_t char_trials = config.uinteger("analysis.characterize_trials");
  if (char_trials == 0) char_trials = config.uinteger("run.n_trials");

  std::vector<SweepRow> rows;
  json points = json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    SweepRow row;
    row.value = values[i];
    row.value_text = shortest(values[i]);
    Config point = config;
    point.set(chi ? "model.chi" : "storage.time_us", row.value_text);
    point.set("run.seed", std::to_string(engine::derive_seed(base_seed, i)));
    const fs::path pdir = dir / point_name(i);
    io.out << point_name(i) << ": " << config.get("sweep.parameter") << " = " << row.value_text << '\n';

    const auto sim = simulate(RunKind::entangle, point, pdir, io.threads);
    write_run_info(pdir, "sweep", sim);
    row.heralds = sim.summary.total_heralds();
    json analysis;
    try {
      auto a = analyze_entangle_records(point, sim.header, sim.records, false, io.err);
      analysis = a.doc;
      if (a.tomography) {
        const auto& t = *a.tomography;
        row.V = t.pipeline.visibility.V;
        row.C = t.pipeline.concurrence.C;
        row.C0 = t.pipeline.concurrence.C0;
        row.C_sigma = t.pipeline.concurrence.sigma.value_or(kNaN);
      }
      row.ok = true;
    } catch (const EstimationError& e) {
      row.error = e.what();
    } catch (const FitError& e) {
      row.error = e.what();
    }

    auto exp = to_experiment(point);
    exp.n_trials = char_trials;
    json chars = json::object();
    double g_sum = 0, g_var = 0, p_sum = 0, p_var = 0;
    for (Ensemble e : {Ensemble::U, Ensemble::D}) {
      auto ce = exp;
      ce.seed = engine::derive_seed(exp.seed, e == Ensemble::U ? 1 : 2);
      const auto s = engine::run_characterize(ce, e, {}, io.threads);
      try {
        const auto stats = tomo::estimate_correlations(s.n_trials, s.n_field1, s.n_field2, s.n_joint);
        chars[engine::to_string(e)] = correlations_json(stats);
        g_sum += stats.g12;
        g_var += stats.se_g12 * stats.se_g12;
        p_sum += stats.p_c;
        p_var += stats.se_p_c * stats.se_p_c;
      } catch (const EstimationError& err) {
        row.ok = false;
        row.error = err.what();
        g_sum = p_sum = kNaN;
      }
    }
    row.g12 = g_sum / 2;
    row.se_g12 = std::sqrt(g_var) / 2;
    row.p_c = p_sum / 2;
    row.se_p_c = std::sqrt(p_var) / 2;
    analysis["characterization"] = chars;
    analysis["characterization"]["n_trials"] = char_trials;
    if (!row.error.empty()) analysis["error"] = row.error;
    write_json(pdir / "analysis.json", analysis);

    io.out << "  g12 " << fmt("%.2f", row.g12) << "  p_c " << fmt("%.4f", row.p_c) << "  V " << fmt("%.4f", row.V)
           << "  C " << fmt("%.4f", row.C) << " +- " << fmt("%.4f", row.C_sigma) << '\n';
    if (!row.error.empty()) io.err << "error: " << point_name(i) << ": " << row.error << '\n';
    points.push_back({{"point", point_name(i)},
                      {"sweep_value", row.value},
                      {"seed", sim.header.seed},
                      {"heralds", row.heralds},
                      {"g12", num_or_null(row.g12)},
                      {"se_g12", num_or_null(row.se_g12)},
                      {"p_c", num_or_null(row.p_c)},
                      {"se_p_c", num_or_null(row.se_p_c)},
                      {"V", num_or_null(row.V)},
                      {"C", num_or_null(row.C)},
                      {"C_sigma", num_or_null(row.C_sigma)},
                      {"C0", num_or_null(row.C0)}});
    rows.push_back(row);
  }

  std::string csv = "sweep_value,g12,p_c,V,C,C_sigma,C0\n";
  for (const auto& r : rows) {
    csv += r.value_text;
    for (double v : {r.g12, r.p_c, r.V, r.C, r.C_sigma, r.C0}) csv += "," + fmt("%.10g", v);
    csv += '\n';
  }
  write_text(dir / "sweep.csv", csv);
  json doc;
  doc["format_version"] = engine::kRecordFormatVersion;
  doc["kind"] = "sweep";
  doc["parameter"] = config.get("sweep.parameter");
  doc["seed"] = base_seed;
  doc["config_hash"] = config.hash();
  doc["points"] = points;
  doc["config"] = config_json(config);
  write_json(dir / "sweep.json", doc);
  write_text(dir / "config.ini", config.canonical_text());
  return rows;
}

bool all_ok(const std::vector<SweepRow>& rows) {
  for (const auto& r : rows) {
    if (!r.ok) return false;
  }
  return true;
}

int cmd_sweep(const Options& o, Io& io) {
  const Config config = resolve_config(o, "");
  const auto rows = run_sweep(config, o.out, io);
  return all_ok(rows) ? kExitOk : kExitFit;
}

Series mc_series(const std::vector<SweepRow>& rows, bool x_is_g12) {
  Series s;
  s.label = "Monte Carlo";
  s.style = SeriesStyle::points;
  s.color = "#c0392b";
  for (const auto& r : rows) {
    s.x.push_back(x_is_g12 ? r.g12 : r.value);
    s.y.push_back(r.C);
    s.err.push_back(r.C_sigma);
  }
  return s;
}

int reproduce_fig2(const Options& o, Io& io) {
  const Config config = resolve_config(o, "fig2");
  const fs::path dir = o.out;
  const auto rows = run_sweep(config, dir, io);

  const double p_c = config.real("decay.pc0");
  const double xi = config.real("model.xi");
  model::ModelParams params;
  params.p_c = p_c;
  params.xi = xi;
  Series c_line{"C analytic", SeriesStyle::solid, {}, {}, {}, "#1f4e9c"};
  Series c0_line{"C0 analytic", SeriesStyle::dotted, {}, {}, {}, "#1f4e9c"};
  std::string curve = "g12,C,C0\n";
  for (int k = 0; k <= 160; ++k) {
    params.g12 = std::pow(10.0, 0.1 + 3.0 * k / 160.0);
    const auto c = model::concurrence_analytic(params);
    c_line.x.push_back(params.g12);
    c_line.y.push_back(c.C);
    c0_line.x.push_back(params.g12);
    c0_line.y.push_back(c.C0);
    curve += fmt("%.10g", params.g12) + "," + fmt("%.10g", c.C) + "," + fmt("%.10g", c.C0) + "\n";
  }
  write_text(dir / "fig2_curve.csv", curve);

  const double threshold = model::threshold_g12(p_c, xi);
  params.g12 = 1e6;
  const double plateau = model::concurrence_analytic(params).C;

  Plot plot;
  plot.title = "Concurrence vs cross-correlation (p_c = " + fmt("%.3f", p_c) + ", xi = " + fmt("%.2f", xi) + ")";
  plot.x_label = "g12";
  plot.y_label = "C";
  plot.log_x = true;
  plot.series = {c_line, c0_line, mc_series(rows, true)};
  write_text(dir / "fig2.svg", render_svg(plot));

  json report;
  report["target"] = "fig2";
  report["p_c"] = p_c;
  report["xi"] = xi;
  report["threshold_g12"] = threshold;
  report["plateau_C"] = plateau;
  report["xi_p_c"] = xi * p_c;
  report["config_hash"] = config.hash();
  write_json(dir / "report.json", report);
  io.out << "threshold g12 " << fmt("%.3f", threshold) << "  plateau C " << fmt("%.5f", plateau) << " (xi p_c "
         << fmt("%.5f", xi * p_c) << ")\n";
  return all_ok(rows) ? kExitOk : kExitFit;
}

int reproduce_fig3(const Options& o, Io& io) {
  const Config config = resolve_config(o, "fig3");
  const fs::path dir = o.out;
  const auto rows = run_sweep(config, dir, io);

  const auto exp = to_experiment(config);
  const double xi = config.real("model.xi");
  const double tau_sep = model::separability_time(exp.decay, xi);

  Series c_line{"C analytic", SeriesStyle::solid, {}, {}, {}, "#1f4e9c"};
  Series c0_line{"C0 analytic", SeriesStyle::dotted, {}, {}, {}, "#1f4e9c"};
  std::string curve = "tau_us,p_c,g12,C,C0\n";
  for (int k = 0; k <= 175; ++k) {
    const double tau = exp.decay.tau0 + k * 0.2e-6;
    const double tau_us = tau * 1e6;
    const auto pt = model::decay_curves(exp.decay, tau);
    model::ModelParams params;
    params.p_c = pt.p_c;
    params.g12 = pt.g12;
    params.xi = xi;
    const auto c = model::concurrence_analytic(params);
    c_line.x.push_back(tau_us);
    c_line.y.push_back(c.C);
    c0_line.x.push_back(tau_us);
    c0_line.y.push_back(c.C0);
    curve += fmt("%.10g", tau_us) + "," + fmt("%.10g", pt.p_c) + "," + fmt("%.10g", pt.g12) + "," +
             fmt("%.10g", c.C) + "," + fmt("%.10g", c.C0) + "\n";
  }
  write_text(dir / "fig3_curve.csv", curve);

  // Zero crossing of the simulated C0 by linear interpolation.
  double mc_crossing = kNaN;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[i + 1];
    if (a.C0 > 0 && b.C0 <= 0) {
      mc_crossing = a.value + (b.value - a.value) * a.C0 / (a.C0 - b.C0);
      break;
    }
  }

  Plot plot;
  plot.title = "Concurrence vs storage time (tau_d = " + fmt("%.3g", exp.decay.tau_d_pc * 1e6) + " us)";
  plot.x_label = "storage time (us)";
  plot.y_label = "C";
  plot.series = {c_line, c0_line, mc_series(rows, false)};
  write_text(dir / "fig3.svg", render_svg(plot));

  json report;
  report["target"] = "fig3";
  report["separability_time_us"] = num_or_null(tau_sep * 1e6);
  report["mc_zero_crossing_us"] = num_or_null(mc_crossing);
  report["config_hash"] = config.hash();
  write_json(dir / "report.json", report);
  io.out << "separability time " << fmt("%.2f", tau_sep * 1e6) << " us (simulated crossing "
         << fmt("%.1f", mc_crossing) << " us)\n";
  return all_ok(rows) ? kExitOk : kExitFit;
}

// Reference detected column and its quoted one-sigma errors; d follows from
// the quoted concurrence.
constexpr double kRefP00 = 0.864, kRefP10 = 6.47e-2, kRefP01 = 7.07e-2, kRefP11 = 2.8e-4, kRefC = 0.092;
constexpr inference::ElementErrors kRefErrors{1e-3, 2e-4, 2e-4, 2e-5, 1e-3};

model::RestrictedDensityMatrix reference_detected() {
  model::RestrictedDensityMatrix r;
  r.p00 = kRefP00;
  r.p10 = kRefP10;
  r.p01 = kRefP01;
  r.p11 = kRefP11;
  r.d = inference::coherence_from_concurrence(kRefP00, kRefP01, kRefP10, kRefP11, kRefC);
  return r;
}

int reproduce_table1(const Options& o, Io& io) {
  const Config config = resolve_config(o, "table1");
  const fs::path dir = o.out;
  const auto policy = to_policy(config);
  const auto prop_policy = to_policy(config, "inference.propagation_policy");
  const auto chain = to_chain(config);
  const auto chain_sigma = to_chain_sigma(config);
  const auto samples = config.uinteger("inference.propagation_samples");
  const auto seed = config.uinteger("run.seed");

  const auto sim = simulate(RunKind::entangle, config, dir / "entangle", io.threads);
  write_run_info(dir / "entangle", "reproduce table1", sim);
  const auto a = analyze_entangle_records(config, sim.header, sim.records, false, io.err);
  write_json(dir / "entangle" / "analysis.json", a.doc);
  if (!a.tomography) throw EstimationError("table1 needs interference readout");
  const auto& t = *a.tomography;

  std::uint64_t char_trials = config.uinteger("analysis.characterize_trials");
  if (char_trials == 0) char_trials = config.uinteger("run.n_trials");
  auto exp = to_experiment(config);
  exp.n_trials = char_trials;
  json chars;
  for (Ensemble e : {Ensemble::U, Ensemble::D}) {
    auto ce = exp;
    ce.seed = engine::derive_seed(exp.seed, e == Ensemble::U ? 1 : 2);
    const auto s = engine::run_characterize(ce, e, {}, io.threads);
    chars[engine::to_string(e)] =
        correlations_json(tomo::estimate_correlations(s.n_trials, s.n_field1, s.n_field2, s.n_joint));
  }

  // Reference chain.
  const auto ref = reference_detected();
  const auto ref_cols = inference::correct_chain(ref, chain, policy);
  warn_clipped(ref_cols.clipped_output, "reference output", io.err);
  warn_clipped(ref_cols.clipped_atomic, "reference atomic", io.err);
  const auto ref_prop =
      inference::propagate_uncertainty({ref, kRefErrors, chain, chain_sigma}, prop_policy, samples, seed);

  // Simulated chain, with errors from the counting statistics.
  const auto& rho = t.pipeline.assembled.rho;
  const auto& dg = t.pipeline.diagonals;
  const inference::ElementErrors sim_errors{dg.se00, dg.se01, dg.se10, dg.se11,
                                            t.pipeline.visibility.sigma * (dg.p10 + dg.p01) / 2.0};
  const auto sim_cols = inference::correct_chain(rho, chain, policy);
  warn_clipped(sim_cols.clipped_output, "simulated output", io.err);
  warn_clipped(sim_cols.clipped_atomic, "simulated atomic", io.err);
  const auto sim_prop = inference::propagate_uncertainty({rho, sim_errors, chain, chain_sigma}, prop_policy, samples,
                                                         engine::derive_seed(seed, 1));

  const double ref_sig[3] = {0.002, *ref_prop.output.sigma, *ref_prop.atomic.sigma};
  const double sim_sig[3] = {t.pipeline.concurrence.sigma.value_or(kNaN), *sim_prop.output.sigma,
                             *sim_prop.atomic.sigma};
  const model::RestrictedDensityMatrix* ref_rho[3] = {&ref_cols.detected, &ref_cols.output, &ref_cols.atomic};
  const model::RestrictedDensityMatrix* sim_rho[3] = {&sim_cols.detected, &sim_cols.output, &sim_cols.atomic};
  const model::ConcurrenceResult* ref_c[3] = {&ref_cols.c_detected, &ref_cols.c_output, &ref_cols.c_atomic};
  const model::ConcurrenceResult* sim_c[3] = {&sim_cols.c_detected, &sim_cols.c_output, &sim_cols.c_atomic};

  std::string csv = "quantity,reference_detected,reference_output,reference_atomic,"
                    "simulated_detected,simulated_output,simulated_atomic\n";
  auto row = [&](const char* name, auto get) {
    csv += name;
    for (auto* r : ref_rho) csv += "," + fmt("%.6g", get(*r));
    for (auto* r : sim_rho) csv += "," + fmt("%.6g", get(*r));
    csv += '\n';
  };
  row("p00", [](const auto& r) { return r.p00; });
  row("p10", [](const auto& r) { return r.p10; });
  row("p01", [](const auto& r) { return r.p01; });
  row("p11", [](const auto& r) { return r.p11; });
  row("d", [](const auto& r) { return std::abs(r.d); });
  csv += "C";
  for (auto* c : ref_c) csv += "," + fmt("%.6g", c->C);
  for (auto* c : sim_c) csv += "," + fmt("%.6g", c->C);
  csv += "\nC_sigma";
  for (double s : ref_sig) csv += "," + fmt("%.6g", s);
  for (double s : sim_sig) csv += "," + fmt("%.6g", s);
  csv += '\n';
  write_text(dir / "table1.csv", csv);

  Plot plot;
  plot.title = "Concurrence through the correction chain";
  plot.x_label = "column (1 detected, 2 ensemble output, 3 atomic)";
  plot.y_label = "C";
  Series ref_pts{"reference", SeriesStyle::points, {}, {}, {}, "#1f4e9c"};
  Series sim_pts{"Monte Carlo", SeriesStyle::points, {}, {}, {}, "#c0392b"};
  for (int k = 0; k < 3; ++k) {
    ref_pts.x.push_back(k + 0.95);
    ref_pts.y.push_back(ref_c[k]->C);
    ref_pts.err.push_back(ref_sig[k]);
    sim_pts.x.push_back(k + 1.05);
    sim_pts.y.push_back(sim_c[k]->C);
    sim_pts.err.push_back(sim_sig[k]);
  }
  plot.series = {ref_pts, sim_pts};
  write_text(dir / "table1.svg", render_svg(plot));

  json report;
  report["target"] = "table1";
  report["config_hash"] = config.hash();
  report["herald_probability"] = sim.summary.herald_probability();
  report["heralds"] = sim.summary.total_heralds();
  report["characterization"] = chars;
  json ref_doc = columns_json(ref_cols, config);
  ref_doc["output"]["concurrence"]["sigma"] = ref_sig[1];
  ref_doc["atomic"]["concurrence"]["sigma"] = ref_sig[2];
  ref_doc["propagation"] = {{"policy", config.get("inference.propagation_policy")},
                            {"samples", ref_prop.n_samples},
                            {"unphysical", ref_prop.n_unphysical},
                            {"mean_output_C0", ref_prop.mean_output_c0},
                            {"mean_atomic_C0", ref_prop.mean_atomic_c0}};
  report["reference"] = ref_doc;
  json sim_doc = columns_json(sim_cols, config);
  sim_doc["detected"]["concurrence"]["sigma"] = num_or_null(sim_sig[0]);
  sim_doc["output"]["concurrence"]["sigma"] = sim_sig[1];
  sim_doc["atomic"]["concurrence"]["sigma"] = sim_sig[2];
  sim_doc["propagation"] = {{"policy", config.get("inference.propagation_policy")},
                            {"samples", sim_prop.n_samples},
                            {"unphysical", sim_prop.n_unphysical},
                            {"mean_output_C0", sim_prop.mean_output_c0},
                            {"mean_atomic_C0", sim_prop.mean_atomic_c0}};
  report["simulated"] = sim_doc;
  write_json(dir / "report.json", report);

  io.out << "                 detected          output            atomic\n";
  auto line = [&](const char* name, const model::ConcurrenceResult* const* c, const double* s) {
    io.out << name;
    for (int k = 0; k < 3; ++k) io.out << "  " << fmt("%.4f", c[k]->C) << " +- " << fmt("%-7.4f", s[k]);
    io.out << '\n';
  };
  line("reference  C  ", ref_c, ref_sig);
  line("simulated  C  ", sim_c, sim_sig);
  io.out << "heralds " << sim.summary.total_heralds() << " (p = " << fmt("%.3g", sim.summary.herald_probability())
         << ")  g12 U " << fmt("%.1f", chars["U"]["g12"].get<double>()) << "  D "
         << fmt("%.1f", chars["D"]["g12"].get<double>()) << '\n';
  return kExitOk;
}

int cmd_reproduce(const Options& o, Io& io) {
  if (o.target == "fig2") return reproduce_fig2(o, io);
  if (o.target == "fig3") return reproduce_fig3(o, io);
  if (o.target == "table1") return reproduce_table1(o, io);
  throw UsageError("reproduce target must be fig2, fig3 or table1");
}

int dispatch(const std::string& command, const Options& o, Io& io) {
  if (command == "entangle") return cmd_entangle(o, io);
  if (command == "characterize") return cmd_characterize(o, io);
  if (command == "analyze") return cmd_analyze(o, io);
  if (command == "sweep") return cmd_sweep(o, io);
  if (command == "reproduce") return cmd_reproduce(o, io);
  throw UsageError("unknown command " + command);
}

}  // namespace

std::vector<std::string> preset_names() { return {"table1", "fig2", "fig3"}; }

std::string preset_text(const std::string& name) {
  if (name == "table1") return presets::kTable1;
  if (name == "fig2") return presets::kFig2;
  if (name == "fig3") return presets::kFig3;
  throw ConfigError("unknown preset '" + name + "'");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Heralded ensemble-entanglement simulator", "dlcz-lab"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_file, "config file");
    sub->add_option("--set", o.sets, "override, section.key=value (repeatable)")->allow_extra_args(false);
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--threads", o.threads, "worker threads (default: hardware concurrency)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("--clip", o.clip, "clip unphysical inversions instead of failing");
  };
  auto* entangle = app.add_subcommand("entangle", "simulate heralded entanglement and analyze it");
  auto* characterize = app.add_subcommand("characterize", "single-ensemble g12 and p_c run");
  auto* sweep = app.add_subcommand("sweep", "entangle and characterize over sweep.values");
  auto* analyze = app.add_subcommand("analyze", "re-analyze a record file");
  auto* reproduce = app.add_subcommand("reproduce", "run a bundled campaign (fig2, fig3, table1)");
  for (auto* sub : {entangle, characterize, sweep, analyze, reproduce}) common(sub);
  for (auto* sub : {entangle, analyze}) sub->add_flag("--infer", o.infer, "add loss-corrected columns");
  analyze->add_option("--records", o.records, "record file")->required();
  reproduce->add_option("target", o.target, "fig2 | fig3 | table1")->required()->check(
      CLI::IsMember({"fig2", "fig3", "table1"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  int threads = o.threads;
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  Io io{out, err, threads};
  try {
    return dispatch(command, o, io);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnphysicalInversion& e) {
    err << "error: " << e.what() << " (use --clip to clamp)\n";
    return kExitUnphysical;
  } catch (const FitError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFit;
  } catch (const EstimationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dlcz-lab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dlcz::cli
