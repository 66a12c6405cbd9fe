#pragma once

#include "fodkit/fod_analysis.hpp"
#include "fodkit/volume.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace fodkit {

/// Fiber-count agreement between two peak fields: entry (i, j) is the fraction
/// of eligible voxels where side A reports i+1 peaks and side B j+1.
struct FiberCountConfusion {
  Eigen::Matrix3d fractions = Eigen::Matrix3d::Zero();
  std::size_t population = 0;  // voxels with 1..3 peaks on both sides

  static FiberCountConfusion from_fractions(const Eigen::Matrix3d& m);
};

enum class Side { a, b };

FiberCountConfusion confusion_matrix(const std::vector<PeakSet>& a, const std::vector<PeakSet>& b,
                                     const Mask& mask);

/// Class-k Jaccard agreement in percent; nullopt when the class is absent on
/// both sides.
std::optional<double> agreement_rate(const FiberCountConfusion& cm, int k);

/// Percentage of the given side's voxels with more than one peak.
double multi_fiber_fraction(const FiberCountConfusion& cm, Side side);

struct AngularErrors {
  std::array<std::optional<double>, 3> mean_deg;  // per class k = 1..3
  std::array<std::size_t, 3> voxels{0, 0, 0};
};

/// Smallest total antipodal angle over all pairings of equally sized peak sets.
/// Returns the matched angles in degrees, in the order of `a`.
std::vector<double> match_peaks(const PeakSet& a, const PeakSet& b);

AngularErrors angular_error(const std::vector<PeakSet>& a, const std::vector<PeakSet>& b, const Mask& mask);

struct MapeResult {
  double percent = 0.0;
  std::size_t voxels = 0;
  std::size_t excluded_zero_reference = 0;
};

/// 100 * mean |ref - test| / ref over masked voxels with ref > 0.
MapeResult afd_mape(const Eigen::VectorXd& ref, const Eigen::VectorXd& test, const Mask& mask);

struct MetricsReport {
  FiberCountConfusion confusion;
  std::array<std::optional<double>, 3> agreement;  // percent
  AngularErrors angular;
  MapeResult afd;
  double multi_fiber_a = 0.0;
  double multi_fiber_b = 0.0;
};

/// All metrics between a reference (A) and a test (B) FOD field.
MetricsReport compare_fields(const std::vector<PeakSet>& ref_peaks, const std::vector<PeakSet>& test_peaks,
                             const Eigen::VectorXd& ref_afd, const Eigen::VectorXd& test_afd,
                             const Mask& mask);

}  // namespace fodkit
