#include "dlcz/engine.hpp"

#include "dlcz/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

namespace dlcz::engine {

namespace {

using fock::DetectorLayout;
using fock::DetectorModel;
using fock::FockDensity;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::array<double, 4> normalized_outcomes(const std::vector<fock::ClickPattern>& patterns) {
  std::array<double, 4> p{};
  double total = 0.0;
  for (const auto& cp : patterns) {
    p[cp.clicks] = cp.probability;
    total += cp.probability;
  }
  for (auto& v : p) v /= total;
  return p;
}

std::size_t sample_outcome(const std::array<double, 4>& p, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    acc += p[k];
    if (u < acc) return k;
  }
  return 3;
}

DetectorModel with_background(DetectorModel det, double extra) {
  det.dark_mean += extra;
  return det;
}

struct BatchResult {
  std::vector<TrialRecord> records;
  std::uint64_t double_heralds = 0;
};

// Runs fn(batch_index, result) over all batches with `threads` workers and
// hands results to `emit` in batch order.
template <class BatchFn, class EmitFn>
void run_batches(std::uint64_t n_batches, int threads, BatchFn fn, EmitFn emit) {
  const auto workers = static_cast<std::uint64_t>(std::max(1, threads));
  if (workers == 1) {
    for (std::uint64_t b = 0; b < n_batches; ++b) {
      BatchResult result;
      fn(b, result);
      emit(result);
    }
    return;
  }
  const std::uint64_t wave = workers * 8;
  std::vector<BatchResult> results;
  for (std::uint64_t start = 0; start < n_batches; start += wave) {
    const std::uint64_t count = std::min(wave, n_batches - start);
    results.assign(count, BatchResult{});
    std::atomic<std::uint64_t> next{0};
    {
      std::vector<std::jthread> pool;
      for (std::uint64_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
          for (std::uint64_t k = next++; k < count; k = next++) fn(start + k, results[k]);
        });
      }
    }
    for (auto& r : results) emit(r);
  }
}

void tally(RunSummary& summary, const TrialRecord& rec) {
  if (summary.kind == RunKind::characterize) {
    const bool f1 = rec.herald != Herald::none;
    summary.n_field1 += f1;
    summary.n_field2 += rec.click_2a;
    summary.n_joint += (f1 && rec.click_2a);
    return;
  }
  const auto h = static_cast<std::size_t>(rec.herald);
  ++summary.n_heralds[h];
  const std::size_t setting = rec.mode == 'S' ? 0 : rec.phase_index + 1;
  auto& c = summary.by_setting[h].at(setting);
  ++c.heralds;
  c.clicks_2a += rec.click_2a;
  c.clicks_2b += rec.click_2b;
  c.coincidences += (rec.click_2a && rec.click_2b);
}

RunSummary empty_summary(RunKind kind, std::uint64_t n_trials, std::uint64_t seed, std::size_t n_phases,
                         Ensemble ensemble) {
  RunSummary s;
  s.kind = kind;
  s.n_trials = n_trials;
  s.seed = seed;
  s.ensemble = ensemble;
  if (kind == RunKind::entangle) {
    s.n_phases = n_phases;
    for (auto& v : s.by_setting) v.assign(n_phases + 1, SettingCounts{});
  }
  return s;
}

void finish_diagnostics(Diagnostics* diag, const ExperimentConfig& config, const RunSummary& summary,
                        std::chrono::steady_clock::time_point start) {
  if (diag == nullptr) return;
  diag->wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  diag->trials_per_second = diag->wall_seconds > 0.0 ? static_cast<double>(summary.n_trials) / diag->wall_seconds : 0.0;
  diag->effective_trial_rate = config.trial_rate * config.duty_factor;
  const double p = summary.kind == RunKind::entangle
                       ? summary.herald_probability()
                       : static_cast<double>(summary.n_field1) / static_cast<double>(summary.n_trials);
  diag->preparation_rate = p * diag->effective_trial_rate;
}

// Average single-ensemble (p_c, g12) over U and D.
std::pair<double, double> mean_pc_g12(const ExperimentConfig& config, const StoragePoint& sp) {
  const auto u = characterization_probabilities(config, Ensemble::U, sp);
  const auto d = characterization_probabilities(config, Ensemble::D, sp);
  return {0.5 * (u.p_c() + d.p_c()), 0.5 * (u.g12() + d.g12())};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!(model.chi >= 0.0 && model.chi < 1.0)) throw DomainError("chi must lie in [0,1)");
  if (!is_probability(model.xi)) throw DomainError("xi must lie in [0,1]");
  for (double e : {field1_efficiency_u, field1_efficiency_d, readout_efficiency, field2_efficiency_u,
                   field2_efficiency_d}) {
    if (!is_probability(e)) throw DomainError("efficiencies must lie in [0,1]");
  }
  for (const auto& det : detectors) det.validate();
  if (n_trials == 0) throw DomainError("n_trials must be positive");
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  if (n_max < 2 || n_max > 6) throw DomainError("n_max must lie in [2,6]");
  if (readout != ReadoutMode::separate && phases.empty()) {
    throw DomainError("interference readout needs at least one fringe phase");
  }
  if (apply_decay) {
    decay.validate();
    if (storage_time < decay.tau0) throw DomainError("storage time is shorter than the decay reference tau0");
  }
}

double ExperimentConfig::field2_survival(Ensemble e) const {
  return readout_efficiency * (e == Ensemble::U ? field2_efficiency_u : field2_efficiency_d);
}

std::vector<double> equally_spaced_phases(int count) {
  if (count < 1) throw DomainError("phase count must be positive");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = 2.0 * std::numbers::pi * k / count;
  return out;
}

double RunSummary::herald_probability() const noexcept {
  return n_trials == 0 ? 0.0 : static_cast<double>(total_heralds()) / static_cast<double>(n_trials);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

std::size_t setting_of(const ExperimentConfig& config, std::uint64_t trial_index) {
  const std::uint64_t n_phases = config.phases.size();
  switch (config.readout) {
    case ReadoutMode::separate:
      return 0;
    case ReadoutMode::interfere:
      return 1 + static_cast<std::size_t>(trial_index % n_phases);
    case ReadoutMode::both:
      return (trial_index % 2 == 0) ? 0 : 1 + static_cast<std::size_t>((trial_index / 2) % n_phases);
  }
  return 0;
}

CharacterizationProbabilities characterization_probabilities(const ExperimentConfig& config,
                                                             Ensemble ensemble,
                                                             const StoragePoint& storage) {
  const bool u = ensemble == Ensemble::U;
  FockDensity state = fock::make_tmsv(config.model.chi, config.n_max);
  state = fock::apply_loss(state, 0, u ? config.field1_efficiency_u : config.field1_efficiency_d);
  state = fock::apply_loss(state, 1, config.field2_survival(ensemble) * storage.survival_factor);
  const std::array<DetectorModel, 2> dets{
      config.detectors[u ? kD1a : kD1b],
      with_background(config.detectors[u ? kD2a : kD2b], storage.background_mean)};
  CharacterizationProbabilities out;
  out.outcome = normalized_outcomes(fock::click_distribution(state, dets));
  return out;
}

StoragePoint storage_point(const ExperimentConfig& config) {
  StoragePoint sp;
  const auto [pc_ref, g_ref] = mean_pc_g12(config, sp);
  sp.target_p_c = pc_ref;
  sp.target_g12 = g_ref;
  if (!config.apply_decay || config.storage_time <= config.decay.tau0) return sp;

  const auto& dm = config.decay;
  const auto now = model::decay_curves(dm, config.storage_time);
  // Decay is applied relative to this configuration's own p_c and g12 at tau0.
  sp.target_p_c = pc_ref * now.p_c / dm.pc0;
  sp.target_g12 = g_ref > dm.g_floor
                      ? dm.g_floor + (g_ref - dm.g_floor) * (now.g12 - dm.g_floor) / (dm.g0 - dm.g_floor)
                      : g_ref;

  // Survival factor that puts p_c on target at a given background.
  auto survival_for = [&](double background) {
    StoragePoint trial{1.0, background, 0, 0};
    if (mean_pc_g12(config, trial).first <= sp.target_p_c) return 1.0;
    trial.survival_factor = 0.0;
    if (mean_pc_g12(config, trial).first >= sp.target_p_c) return 0.0;
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      trial.survival_factor = 0.5 * (lo + hi);
      (mean_pc_g12(config, trial).first < sp.target_p_c ? lo : hi) = trial.survival_factor;
    }
    return 0.5 * (lo + hi);
  };
  auto g_excess = [&](double background) {
    const StoragePoint trial{survival_for(background), background, 0, 0};
    return mean_pc_g12(config, trial).second - sp.target_g12;
  };

  double lo = 0.0;
  double hi = 0.0;
  if (g_excess(0.0) > 0.0) {
    hi = 1e-4;
    while (g_excess(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (hi > 10.0) throw DomainError("storage decay target g12 unreachable with added background");
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g_excess(mid) > 0.0 ? lo : hi) = mid;
    }
  }
  sp.background_mean = 0.5 * (lo + hi);
  sp.survival_factor = survival_for(sp.background_mean);
  return sp;
}

EntangleTables build_entangle_tables(const ExperimentConfig& config) {
  config.validate();
  EntangleTables tables;
  tables.storage = storage_point(config);
  const auto& sp = tables.storage;
  const int cutoff = config.n_max;

  // Modes: 0 = field 1U, 1 = field 1D, 2 = ensemble U, 3 = ensemble D.
  const FockDensity source = fock::make_tmsv(config.model.chi, cutoff);
  const int order[4] = {0, 2, 1, 3};
  FockDensity state = source.tensor(source).reorder(order);
  state = fock::apply_phase(state, 0, config.model.theta);
  state = fock::apply_loss(state, 0, config.field1_efficiency_u);
  state = fock::apply_loss(state, 1, config.field1_efficiency_d);
  state = fock::apply_beamsplitter(state, 0, 1, 0.5, 0.0);

  DetectorLayout herald_layout;
  herald_layout.detectors = {config.detectors[kD1a], config.detectors[kD1b]};
  herald_layout.mode_to_detector = {0, 1, -1, -1};
  const auto herald = normalized_outcomes(fock::click_distribution(state, herald_layout));
  tables.p_d1a = herald[1];
  tables.p_d1b = herald[2];
  tables.p_double = herald[3];
  tables.truncation_tail = state.truncation_tail();

  const std::array<DetectorModel, 2> field2_dets{with_background(config.detectors[kD2a], sp.background_mean),
                                                 with_background(config.detectors[kD2b], sp.background_mean)};
  DetectorLayout interfere_layout;
  interfere_layout.detectors = {field2_dets[0], field2_dets[1]};
  // Output ports of the U/D mixer and the two halves of the non-overlapping
  // component of field 2D.
  interfere_layout.mode_to_detector = {0, 1, 0, 1};

  const int keep[2] = {2, 3};
  double field2_tail = 0.0;
  for (std::uint32_t h = 0; h < 2; ++h) {
    auto& table = tables.field2[h];
    table.clear();
    const std::uint32_t pattern = h == 0 ? 0b01u : 0b10u;
    if (herald[pattern] <= 0.0) {
      // Never sampled; keep the table shape.
      table.assign(1 + config.phases.size(), std::array<double, 4>{1.0, 0.0, 0.0, 0.0});
      continue;
    }
    FockDensity retrieved = fock::condition_on_pattern(state, herald_layout, pattern, keep);
    retrieved = fock::apply_loss(retrieved, 0, config.field2_survival(Ensemble::U) * sp.survival_factor);
    retrieved = fock::apply_loss(retrieved, 1, config.field2_survival(Ensemble::D) * sp.survival_factor);

    table.push_back(normalized_outcomes(fock::click_distribution(retrieved, field2_dets)));

    // Mode 2D is split into a part overlapping 2U (amplitude xi) and an
    // orthogonal part that reaches the same detectors without interfering.
    FockDensity split = fock::apply_beamsplitter(retrieved.tensor(fock::vacuum(2, cutoff)), 1, 2,
                                                 config.model.xi * config.model.xi, 0.0);
    split = fock::apply_beamsplitter(split, 2, 3, 0.5, 0.0);
    for (double phi : config.phases) {
      const FockDensity mixed = fock::apply_beamsplitter(split, 0, 1, 0.5, phi);
      field2_tail = std::max(field2_tail, mixed.truncation_tail());
      table.push_back(normalized_outcomes(fock::click_distribution(mixed, interfere_layout)));
    }
  }
  tables.truncation_tail += field2_tail;
  return tables;
}

CharacterizationProbabilities build_characterize_table(const ExperimentConfig& config, Ensemble ensemble) {
  config.validate();
  return characterization_probabilities(config, ensemble, storage_point(config));
}

RunSummary run_entangle(const ExperimentConfig& config, const RecordSink& sink, int threads,
                        Diagnostics* diagnostics) {
  const auto start = std::chrono::steady_clock::now();
  const EntangleTables tables = build_entangle_tables(config);
  const double cut_a = tables.p_d1a;
  const double cut_b = cut_a + tables.p_d1b;
  const double cut_double = cut_b + tables.p_double;

  const std::uint64_t n_batches = (config.n_trials + config.batch_size - 1) / config.batch_size;
  auto batch = [&](std::uint64_t b, BatchResult& out) {
    std::mt19937_64 rng(derive_seed(config.seed, b));
    const std::uint64_t first = b * config.batch_size;
    const std::uint64_t last = std::min(config.n_trials, first + config.batch_size);
    for (std::uint64_t t = first; t < last; ++t) {
      const double u = uniform01(rng);
      if (u >= cut_b) {
        if (u < cut_double) ++out.double_heralds;
        continue;
      }
      const std::size_t h = u < cut_a ? 0 : 1;
      const std::size_t setting = setting_of(config, t);
      const std::size_t outcome = sample_outcome(tables.field2[h][setting], uniform01(rng));
      TrialRecord rec;
      rec.trial_index = t;
      rec.herald = static_cast<Herald>(h);
      rec.mode = setting == 0 ? 'S' : 'I';
      rec.phase_index = setting == 0 ? 0 : static_cast<std::uint32_t>(setting - 1);
      rec.click_2a = (outcome & 1u) != 0;
      rec.click_2b = (outcome & 2u) != 0;
      out.records.push_back(rec);
    }
  };

  RunSummary summary = empty_summary(RunKind::entangle, config.n_trials, config.seed, config.phases.size(), Ensemble::U);
  std::uint64_t doubles = 0;
  run_batches(n_batches, threads, batch, [&](const BatchResult& r) {
    doubles += r.double_heralds;
    for (const auto& rec : r.records) {
      tally(summary, rec);
      if (sink) sink(rec);
    }
  });

  if (diagnostics != nullptr) {
    diagnostics->double_herald_trials = doubles;
    diagnostics->truncation_tail = tables.truncation_tail;
    diagnostics->storage = tables.storage;
  }
  finish_diagnostics(diagnostics, config, summary, start);
  return summary;
}

RunSummary run_characterize(const ExperimentConfig& config, Ensemble ensemble, const RecordSink& sink, int threads,
                            Diagnostics* diagnostics) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const StoragePoint sp = storage_point(config);
  const auto probs = characterization_probabilities(config, ensemble, sp);
  const Herald field1_detector = ensemble == Ensemble::U ? Herald::d1a : Herald::d1b;

  const std::uint64_t n_batches = (config.n_trials + config.batch_size - 1) / config.batch_size;
  auto batch = [&](std::uint64_t b, BatchResult& out) {
    std::mt19937_64 rng(derive_seed(config.seed, b));
    const std::uint64_t first = b * config.batch_size;
    const std::uint64_t last = std::min(config.n_trials, first + config.batch_size);
    for (std::uint64_t t = first; t < last; ++t) {
      const std::size_t outcome = sample_outcome(probs.outcome, uniform01(rng));
      if (outcome == 0) continue;
      TrialRecord rec;
      rec.trial_index = t;
      rec.herald = (outcome & 1u) ? field1_detector : Herald::none;
      rec.mode = 'C';
      rec.click_2a = (outcome & 2u) != 0;
      out.records.push_back(rec);
    }
  };

  RunSummary summary = empty_summary(RunKind::characterize, config.n_trials, config.seed, 0, ensemble);
  run_batches(n_batches, threads, batch, [&](const BatchResult& r) {
    for (const auto& rec : r.records) {
      tally(summary, rec);
      if (sink) sink(rec);
    }
  });
  if (diagnostics != nullptr) {
    diagnostics->truncation_tail = fock::make_tmsv(config.model.chi, config.n_max).truncation_tail();
    diagnostics->storage = sp;
  }
  finish_diagnostics(diagnostics, config, summary, start);
  return summary;
}

ExperimentConfig sweep_point(const ExperimentConfig& config_template, SweepParameter parameter, double value,
                             std::size_t index) {
  ExperimentConfig config = config_template;
  if (parameter == SweepParameter::chi) {
    config.model.chi = value;
  } else {
    config.storage_time = value;
  }
  config.seed = derive_seed(config_template.seed, index);
  return config;
}

std::vector<RunSummary> sweep(const ExperimentConfig& config_template, SweepParameter parameter,
                              std::span<const double> values, int threads) {
  if (values.empty()) throw DomainError("sweep needs at least one value");
  std::vector<RunSummary> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.push_back(run_entangle(sweep_point(config_template, parameter, values[i], i), {}, threads));
  }
  return out;
}

RunSummary summarize_records(RunKind kind, std::uint64_t n_trials, std::uint64_t seed, std::size_t n_phases,
                             Ensemble ensemble, std::span<const TrialRecord> records) {
  RunSummary summary = empty_summary(kind, n_trials, seed, n_phases, ensemble);
  for (const auto& rec : records) {
    if (kind == RunKind::entangle && rec.herald == Herald::none) {
      throw RecordFormatError("entangle records must carry a herald");
    }
    if (kind == RunKind::entangle && rec.mode == 'I' && rec.phase_index >= n_phases) {
      throw RecordFormatError("phase index " + std::to_string(rec.phase_index) + " out of range");
    }
    tally(summary, rec);
  }
  return summary;
}

}  // namespace dlcz::engine
