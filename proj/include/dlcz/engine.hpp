#pragma once

// Seeded Monte Carlo of write / herald / store / read trials.
//
// Physics is evaluated once per campaign with fock-core: the herald click
// distribution, and for each herald and readout setting the distribution of
// field-2 click pairs. Trials then cost one or two uniform draws each. Trials
// are cut into fixed-size batches whose RNG streams derive from
// (seed, batch index), so results do not depend on the thread count.

#include "dlcz/fock.hpp"
#include "dlcz/model.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dlcz::engine {

enum class ReadoutMode { separate, interfere, both };
enum class Ensemble { U, D };
enum class Herald : std::int8_t { none = -1, d1a = 0, d1b = 1 };
enum class RunKind { entangle, characterize };

// Detector slots.
inline constexpr std::size_t kD1a = 0;
inline constexpr std::size_t kD1b = 1;
inline constexpr std::size_t kD2a = 2;
inline constexpr std::size_t kD2b = 3;

struct ExperimentConfig {
  model::ModelParams model;  // chi, xi and theta drive the simulation
  model::DecayModel decay;
  bool apply_decay = true;
  double storage_time = 0.2e-6;  // s

  // Transmission from ensemble to detector, excluding detector efficiency.
  double field1_efficiency_u = 1.0;
  double field1_efficiency_d = 1.0;
  // Conditional retrieval of a stored excitation into field 2.
  double readout_efficiency = 1.0;
  double field2_efficiency_u = 1.0;
  double field2_efficiency_d = 1.0;

  std::array<fock::DetectorModel, 4> detectors{};  // D1a, D1b, D2a, D2b

  ReadoutMode readout = ReadoutMode::both;
  std::vector<double> phases;  // fringe phases for interfere readout

  std::uint64_t n_trials = 1'000'000;
  std::uint64_t seed = 1;
  int n_max = fock::kDefaultCutoff;
  std::uint64_t batch_size = 65'536;
  double trial_rate = 1.7e6;                  // Hz, metadata
  double duty_factor = 180e3 / 1.7e6;         // metadata

  void validate() const;
  double field2_survival(Ensemble e) const;
};

std::vector<double> equally_spaced_phases(int count);

struct TrialRecord {
  std::uint64_t trial_index = 0;
  Herald herald = Herald::none;
  char mode = 'S';  // S separate, I interfere, C characterization
  std::uint32_t phase_index = 0;
  bool click_2a = false;
  bool click_2b = false;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

// Readout setting 0 is separate detection; setting k >= 1 is interference at
// phases[k-1].
struct SettingCounts {
  std::uint64_t heralds = 0;
  std::uint64_t clicks_2a = 0;
  std::uint64_t clicks_2b = 0;
  std::uint64_t coincidences = 0;

  friend bool operator==(const SettingCounts&, const SettingCounts&) = default;
};

struct RunSummary {
  RunKind kind = RunKind::entangle;
  std::uint64_t n_trials = 0;
  std::uint64_t seed = 0;
  std::size_t n_phases = 0;
  // entangle
  std::array<std::uint64_t, 2> n_heralds{};
  std::array<std::vector<SettingCounts>, 2> by_setting;  // [herald][setting]
  // characterize
  Ensemble ensemble = Ensemble::U;
  std::uint64_t n_field1 = 0;
  std::uint64_t n_field2 = 0;
  std::uint64_t n_joint = 0;

  std::uint64_t total_heralds() const noexcept { return n_heralds[0] + n_heralds[1]; }
  double herald_probability() const noexcept;

  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

// Operating point of the storage decay: field-2 survival scaling and extra
// field-2 background that reproduce p_c(tau) and g12(tau).
struct StoragePoint {
  double survival_factor = 1.0;
  double background_mean = 0.0;
  double target_p_c = 0.0;
  double target_g12 = 0.0;
};

// Exact single-ensemble statistics: bit 0 field-1 click, bit 1 field-2 click.
struct CharacterizationProbabilities {
  std::array<double, 4> outcome{};
  double p1() const noexcept { return outcome[1] + outcome[3]; }
  double p2() const noexcept { return outcome[2] + outcome[3]; }
  double p12() const noexcept { return outcome[3]; }
  double g12() const noexcept { return p12() / (p1() * p2()); }
  double p_c() const noexcept { return p12() / p1(); }
};

struct EntangleTables {
  double p_d1a = 0.0;  // exactly D1a clicks
  double p_d1b = 0.0;
  double p_double = 0.0;
  // [herald][setting] -> probabilities of (2a,2b) click pairs, bit 0 = 2a.
  std::array<std::vector<std::array<double, 4>>, 2> field2;
  double truncation_tail = 0.0;
  StoragePoint storage;
};

struct Diagnostics {
  double wall_seconds = 0.0;
  double trials_per_second = 0.0;
  double effective_trial_rate = 0.0;   // trial_rate * duty_factor
  double preparation_rate = 0.0;       // heralds per second at that rate
  std::uint64_t double_herald_trials = 0;
  double truncation_tail = 0.0;
  StoragePoint storage;
};

using RecordSink = std::function<void(const TrialRecord&)>;

CharacterizationProbabilities characterization_probabilities(const ExperimentConfig& config,
                                                             Ensemble ensemble,
                                                             const StoragePoint& storage);
StoragePoint storage_point(const ExperimentConfig& config);
EntangleTables build_entangle_tables(const ExperimentConfig& config);
CharacterizationProbabilities build_characterize_table(const ExperimentConfig& config, Ensemble ensemble);

/// Readout setting used by a trial (0 separate, k >= 1 phase k-1).
std::size_t setting_of(const ExperimentConfig& config, std::uint64_t trial_index);

/// splitmix64-based stream splitting: independent sub-seed for `stream`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

RunSummary run_entangle(const ExperimentConfig& config, const RecordSink& sink = {}, int threads = 1,
                        Diagnostics* diagnostics = nullptr);
RunSummary run_characterize(const ExperimentConfig& config, Ensemble ensemble, const RecordSink& sink = {},
                            int threads = 1, Diagnostics* diagnostics = nullptr);

enum class SweepParameter { chi, storage_time };

/// One independent run per value, run i seeded with derive_seed(seed, i).
ExperimentConfig sweep_point(const ExperimentConfig& config_template, SweepParameter parameter, double value,
                             std::size_t index);
std::vector<RunSummary> sweep(const ExperimentConfig& config_template, SweepParameter parameter,
                              std::span<const double> values, int threads = 1);

/// Tally records the way the engine does; used to rebuild a summary offline.
RunSummary summarize_records(RunKind kind, std::uint64_t n_trials, std::uint64_t seed, std::size_t n_phases,
                             Ensemble ensemble, std::span<const TrialRecord> records);

}  // namespace dlcz::engine
