#pragma once

#include "fodkit/csd.hpp"
#include "fodkit/fod_analysis.hpp"
#include "fodkit/forward_model.hpp"
#include "fodkit/metrics.hpp"
#include "fodkit/regressor.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fodkit {

/// Synthetic cohort: subject i gets a phantom drawn from `phantom` with its
/// own seed and an age uniform in [age_min, age_max]. Subjects [0, n_train)
/// train, the next n_val validate, the last n_test test.
struct CohortSpec {
  int n_train = 20;
  int n_val = 5;
  int n_test = 5;
  PhantomSpec phantom;
  double age_min = 40.0;
  double age_max = 40.0;
  std::uint64_t seed = 1;

  int n_subjects() const { return n_train + n_val + n_test; }
  void validate() const;
};

/// Phantom spec and age of subject i.
PhantomSpec subject_spec(const CohortSpec& cohort, int i);

enum class ExperimentKind { consistency, ablation, ageshift };
std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::consistency;
  CsdMethod method = CsdMethod::msmt;  // split-half method or ground-truth method
  CohortSpec cohort;
  /// Age ranges of the two groups for the age-shift experiment; the rest of
  /// each group's cohort comes from `cohort`.
  std::pair<double, double> early_age{33.3, 37.9};
  std::pair<double, double> late_age{41.0, 45.1};
  std::vector<int> n_sig{6, 15, 28, 45};
  int ageshift_n_sig = 15;
  double input_shell = 1000.0;
  double lb_lambda = kDefaultLbLambda;
  ModelSpec model;
  TrainConfig train;
  SolverConfig solver;
  PeakOptions peaks;
  int peak_mesh_subdivisions = 3;
  std::uint64_t seed = 1;  // direction subsampling and training
  int threads = 1;

  void validate() const;
};

/// Small but complete defaults that finish in minutes on one core.
ExperimentConfig default_experiment_config(ExperimentKind kind);

struct ExperimentReport {
  nlohmann::ordered_json json;
  /// Flat metric table: experiment, condition, method, class, metric, value.
  std::vector<std::vector<std::string>> csv_rows;
  /// Plot data (x = n_sig) for the ablation, empty otherwise.
  std::vector<std::vector<std::string>> plot_rows;
};

/// Disjoint halves of a table: per shell the first half is chosen by
/// condition-number subsampling and the second is its complement; b=0
/// measurements alternate. SS3T halves keep only b=0 and `ss3t_shell`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> consistency_split(const GradientTable& table,
                                                                                CsdMethod method,
                                                                                std::uint64_t seed,
                                                                                double ss3t_shell = 1000.0);

ExperimentReport run_consistency(const ExperimentConfig& cfg);
ExperimentReport run_ablation(const ExperimentConfig& cfg);
ExperimentReport run_age_shift(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Writes report.json, metrics.csv and (when present) plot.csv.
void write_report(const ExperimentReport& report, const std::string& dir);

nlohmann::ordered_json metrics_to_json(const MetricsReport& m);

// Building blocks shared with the command-line tool.

/// Table rows for b=0 and one shell.
std::vector<std::size_t> single_shell_rows(const GradientTable& table, double shell);

/// SH coefficients (order max_order_for(n), at most 8) of the b0-normalised
/// signal on the given table rows, one column per voxel. Unmasked voxels are zero.
Volume project_to_sh(const SignalVolume& vol, const std::vector<std::size_t>& rows, const Mask& mask,
                     double lb_lambda = kDefaultLbLambda);

}  // namespace fodkit
