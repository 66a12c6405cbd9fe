#include "fodkit/metrics.hpp"

#include "fodkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fodkit {

FiberCountConfusion FiberCountConfusion::from_fractions(const Eigen::Matrix3d& m) {
  FiberCountConfusion cm;
  cm.fractions = m;
  return cm;
}

namespace {

void check_sizes(const std::vector<PeakSet>& a, const std::vector<PeakSet>& b, const Mask& mask) {
  if (a.size() != b.size() || a.size() != mask.size())
    throw std::invalid_argument("metrics: peak fields and mask differ in size");
}

bool eligible(const PeakSet& p) { return p.size() >= 1 && p.size() <= 3; }

}  // namespace

FiberCountConfusion confusion_matrix(const std::vector<PeakSet>& a, const std::vector<PeakSet>& b,
                                     const Mask& mask) {
  check_sizes(a, b, mask);
  Eigen::Matrix3d counts = Eigen::Matrix3d::Zero();
  std::size_t n = 0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (!mask[v] || !eligible(a[v]) || !eligible(b[v])) continue;
    counts(static_cast<Eigen::Index>(a[v].size() - 1), static_cast<Eigen::Index>(b[v].size() - 1)) += 1.0;
    ++n;
  }
  if (n == 0) throw EmptyPopulationError("confusion matrix: no voxel has 1-3 peaks on both sides");
  FiberCountConfusion cm;
  cm.fractions = counts / static_cast<double>(n);
  cm.population = n;
  return cm;
}

std::optional<double> agreement_rate(const FiberCountConfusion& cm, int k) {
  if (k < 1 || k > 3) throw std::invalid_argument("agreement_rate: class must be 1, 2 or 3");
  const Eigen::Index i = k - 1;
  const double hit = cm.fractions(i, i);
  const double denom = cm.fractions.row(i).sum() + cm.fractions.col(i).sum() - hit;
  if (!(denom > 0.0)) return std::nullopt;
  return 100.0 * hit / denom;
}

double multi_fiber_fraction(const FiberCountConfusion& cm, Side side) {
  const double single = side == Side::a ? cm.fractions.row(0).sum() : cm.fractions.col(0).sum();
  return 100.0 * (1.0 - single);
}

std::vector<double> match_peaks(const PeakSet& a, const PeakSet& b) {
  if (a.size() != b.size()) throw std::invalid_argument("match_peaks: peak counts differ");
  const std::size_t k = a.size();
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> best;
  double best_total = INFINITY;
  // At most 3! = 6 pairings.
  do {
    std::vector<double> angles(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      angles[i] = axis_angle_deg(a.peaks[i].axis, b.peaks[perm[i]].axis);
      total += angles[i];
    }
    if (total < best_total) {
      best_total = total;
      best = angles;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

AngularErrors angular_error(const std::vector<PeakSet>& a, const std::vector<PeakSet>& b, const Mask& mask) {
  check_sizes(a, b, mask);
  std::array<double, 3> sum{0, 0, 0};
  std::array<std::size_t, 3> pairs{0, 0, 0};
  AngularErrors out;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (!mask[v] || !eligible(a[v]) || a[v].size() != b[v].size()) continue;
    const std::size_t c = a[v].size() - 1;
    for (double ang : match_peaks(a[v], b[v])) {
      sum[c] += ang;
      ++pairs[c];
    }
    ++out.voxels[c];
  }
  for (std::size_t c = 0; c < 3; ++c)
    if (pairs[c] > 0) out.mean_deg[c] = sum[c] / static_cast<double>(pairs[c]);
  return out;
}

MapeResult afd_mape(const Eigen::VectorXd& ref, const Eigen::VectorXd& test, const Mask& mask) {
  if (ref.size() != test.size() || static_cast<std::size_t>(ref.size()) != mask.size())
    throw std::invalid_argument("afd_mape: volumes and mask differ in size");
  MapeResult r;
  double sum = 0.0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (!mask[v]) continue;
    const double x = ref(static_cast<Eigen::Index>(v));
    if (!(x > 0.0)) {
      ++r.excluded_zero_reference;
      continue;
    }
    sum += std::abs(x - test(static_cast<Eigen::Index>(v))) / x;
    ++r.voxels;
  }
  if (r.voxels == 0) throw EmptyPopulationError("afd_mape: no masked voxel with positive reference");
  r.percent = 100.0 * sum / static_cast<double>(r.voxels);
  return r;
}

MetricsReport compare_fields(const std::vector<PeakSet>& ref_peaks, const std::vector<PeakSet>& test_peaks,
                             const Eigen::VectorXd& ref_afd, const Eigen::VectorXd& test_afd,
                             const Mask& mask) {
  MetricsReport rep;
  rep.confusion = confusion_matrix(ref_peaks, test_peaks, mask);
  for (int k = 1; k <= 3; ++k) rep.agreement[static_cast<std::size_t>(k - 1)] = agreement_rate(rep.confusion, k);
  rep.angular = angular_error(ref_peaks, test_peaks, mask);
  rep.afd = afd_mape(ref_afd, test_afd, mask);
  rep.multi_fiber_a = multi_fiber_fraction(rep.confusion, Side::a);
  rep.multi_fiber_b = multi_fiber_fraction(rep.confusion, Side::b);
  return rep;
}

}  // namespace fodkit
