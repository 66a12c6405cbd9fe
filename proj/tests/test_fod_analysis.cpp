#include "fodkit/fod_analysis.hpp"
#include "fodkit/random.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fodkit;

namespace {

// Brute-force maximum: best vertex of a fine mesh, then a shrinking pattern
// search around it. Independent of the Newton refinement being tested.
std::pair<Direction, double> dense_max(const ShCoefficients& fod, const SphereMesh& fine) {
  const Eigen::VectorXd amp = sh_basis_matrix(fine.vertices, {fod.basis.order}) * fod.values;
  Eigen::Index best = 0;
  amp.maxCoeff(&best);
  Direction u = fine.vertices[static_cast<std::size_t>(best)];
  double value = amp(best);
  for (double step = 0.02; step > 1e-7; step *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      const Direction e1 = u.unitOrthogonal(), e2 = u.cross(e1);
      for (const Direction& d : {e1, Direction(-e1), e2, Direction(-e2)}) {
        const Direction c = (u + step * d).normalized();
        const double v = sh_eval(fod, c);
        if (v > value) {
          u = c;
          value = v;
          moved = true;
        }
      }
    }
  }
  return {u, value};
}

}  // namespace

TEST(CanonicalAxis, PicksUpperHemisphere) {
  EXPECT_TRUE(canonical_axis(Direction(0, 0, -1)).isApprox(Direction(0, 0, 1)));
  EXPECT_TRUE(canonical_axis(Direction(0, -1, 0)).isApprox(Direction(0, 1, 0)));
  EXPECT_TRUE(canonical_axis(Direction(-1, 0, 0)).isApprox(Direction(1, 0, 0)));
  EXPECT_TRUE(canonical_axis(Direction(1, 2, -2)).isApprox(Direction(-1, -2, 2) / 3.0));
  auto rng = make_rng(3, 1);
  for (int t = 0; t < 100; ++t) {
    const Direction d = testutil::random_direction(rng);
    EXPECT_TRUE(canonical_axis(d).isApprox(canonical_axis(-d)));
    EXPECT_GE(canonical_axis(d).z(), 0.0);
  }
}

TEST(Peaks, TopPeakMatchesDenseSearch) {
  const SphereMesh coarse = tessellate_sphere(3);
  const SphereMesh fine = tessellate_sphere(6);
  const PeakExtractor ex(coarse, 8);
  auto rng = make_rng(21, 1);
  for (int t = 0; t < 30; ++t) {
    const Direction a = testutil::random_direction(rng);
    Direction b = testutil::random_direction(rng);
    while (axis_angle_deg(a, b) < 60.0) b = testutil::random_direction(rng);
    const double w = 0.5 + 0.5 * uniform01(rng);
    const ShCoefficients fod = testutil::power_lobes({{a, 1.0}, {b, w}});
    const auto [u, value] = dense_max(fod, fine);
    const PeakSet ps = ex.extract(fod);
    ASSERT_FALSE(ps.empty());
    EXPECT_NEAR(ps.peaks[0].amplitude, value, 1e-6 * value) << "trial " << t;
    EXPECT_LT(axis_angle_deg(ps.peaks[0].axis, u), 0.05) << "trial " << t;
  }
}

TEST(Peaks, SingleLobeIsExact) {
  const PeakExtractor ex(tessellate_sphere(3), 8);
  auto rng = make_rng(22, 1);
  for (int t = 0; t < 20; ++t) {
    const Direction a = testutil::random_direction(rng);
    const PeakSet ps = ex.extract(testutil::power_lobes({{a, 1.0}}));
    ASSERT_EQ(ps.size(), 1u);
    EXPECT_LT(axis_angle_deg(ps.peaks[0].axis, a), 1e-3);
    EXPECT_GE(ps.peaks[0].axis.z(), 0.0);
  }
}

TEST(Peaks, OrthogonalCrossingGivesTwoSortedPeaks) {
  const PeakExtractor ex(tessellate_sphere(3), 8);
  const Direction a = Direction(1, 1, 0).normalized(), b = Direction(0, 0, 1);
  const PeakSet ps = ex.extract(testutil::power_lobes({{a, 0.6}, {b, 0.4}}));
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_GT(ps.peaks[0].amplitude, ps.peaks[1].amplitude);
  EXPECT_LT(axis_angle_deg(ps.peaks[0].axis, a), 0.5);
  EXPECT_LT(axis_angle_deg(ps.peaks[1].axis, b), 0.5);
}

TEST(Peaks, RelativeThresholdDropsWeakLobe) {
  const PeakExtractor ex(tessellate_sphere(3), 8);
  const Direction a(1, 0, 0), b(0, 1, 0);
  // At 0.4 of the main lobe the second one falls below the 0.5 threshold.
  EXPECT_EQ(ex.extract(testutil::power_lobes({{a, 1.0}, {b, 0.4}})).size(), 1u);
  PeakOptions loose;
  loose.relative_threshold = 0.2;
  const PeakExtractor ex2(tessellate_sphere(3), 8, loose);
  EXPECT_EQ(ex2.extract(testutil::power_lobes({{a, 1.0}, {b, 0.4}})).size(), 2u);
}

TEST(Peaks, MinimumSeparationMergesCloseLobes) {
  PeakOptions opts;
  opts.relative_threshold = 0.1;
  opts.min_separation_deg = 80.0;
  const PeakExtractor ex(tessellate_sphere(3), 8, opts);
  const Direction a(1, 0, 0), b = Direction(2, 1, 0).normalized();  // about 27 degrees apart
  const auto fod = testutil::power_lobes({{Direction(0, 0, 1), 1.0}, {a, 0.8}, {b, 0.8}});
  const PeakSet ps = ex.extract(fod);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = i + 1; j < ps.size(); ++j)
      EXPECT_GE(axis_angle_deg(ps.peaks[i].axis, ps.peaks[j].axis), 80.0);
  EXPECT_GE(ps.size(), 2u);
}

TEST(Peaks, MaxPeaksCapsOutput) {
  PeakOptions opts;
  opts.max_peaks = 2;
  opts.relative_threshold = 0.1;
  const PeakExtractor ex(tessellate_sphere(3), 8, opts);
  const auto fod = testutil::power_lobes({{Direction(0, 0, 1), 1.0}, {Direction(1, 0, 0), 0.9}, {Direction(0, 1, 0), 0.8}});
  EXPECT_EQ(ex.extract(fod).size(), 2u);
  opts.max_peaks = 3;
  EXPECT_EQ(PeakExtractor(tessellate_sphere(3), 8, opts).extract(fod).size(), 3u);
}

TEST(Peaks, NonPositiveFodHasNoPeaks) {
  const PeakExtractor ex(tessellate_sphere(2), 8);
  EXPECT_TRUE(ex.extract(ShCoefficients(8, Eigen::VectorXd::Zero(45))).empty());
  Eigen::VectorXd neg = Eigen::VectorXd::Zero(45);
  neg(0) = -1.0;
  EXPECT_TRUE(ex.extract(ShCoefficients(8, neg)).empty());
}

TEST(Peaks, RejectsWrongOrderAndBadOptions) {
  const PeakExtractor ex(tessellate_sphere(2), 8);
  EXPECT_THROW(ex.extract(ShCoefficients(4, Eigen::VectorXd::Zero(15))), std::invalid_argument);
  PeakOptions bad;
  bad.max_peaks = -1;
  EXPECT_THROW(PeakExtractor(tessellate_sphere(2), 8, bad), std::invalid_argument);
}

TEST(Afd, TotalIsSphereIntegral) {
  const auto rule = testutil::product_rule(12, 24);
  const ShCoefficients fod = testutil::power_lobes({{Direction(0, 0, 1), 0.7}, {Direction(1, 0, 0), 0.2}});
  double integral = 0.0;
  for (std::size_t i = 0; i < rule.points.size(); ++i) integral += rule.weights[i] * sh_eval(fod, rule.points[i]);
  EXPECT_NEAR(afd_total(fod), integral, 1e-12);
  EXPECT_NEAR(afd_total(fod), 0.9, 1e-12);
}

TEST(PeaksVolume, RoundTripAndMask) {
  const Dims dims{3, 2, 2};
  Volume fod(dims, 45);
  Mask mask(dims.voxels(), 1);
  mask[4] = 0;
  auto rng = make_rng(23, 1);
  std::vector<std::vector<std::pair<Direction, double>>> lobes(dims.voxels());
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    const Direction a = testutil::random_direction(rng);
    lobes[v].push_back({a, 1.0});
    if (v % 2) lobes[v].push_back({a.unitOrthogonal(), 0.8});
    fod.voxel(v) = testutil::power_lobes(lobes[v]).values;
  }
  const PeakExtractor ex(tessellate_sphere(3), 8);
  const Volume pv = peaks_volume(fod, 8, ex, mask, 2);
  EXPECT_EQ(pv.channels(), kPeakChannels);
  EXPECT_EQ(pv.dims, dims);
  const auto sets = peaks_from_volume(pv);
  for (std::size_t v = 0; v < dims.voxels(); ++v) {
    if (!mask[v]) {
      EXPECT_TRUE(sets[v].empty());
      EXPECT_EQ(pv.voxel(v).cwiseAbs().maxCoeff(), 0.0);
      continue;
    }
    const PeakSet direct = ex.extract(ShCoefficients(8, fod.voxel(v)));
    ASSERT_EQ(sets[v].size(), direct.size());
    ASSERT_EQ(sets[v].size(), lobes[v].size());
    for (std::size_t k = 0; k < direct.size(); ++k) {
      EXPECT_EQ(sets[v].peaks[k].axis, direct.peaks[k].axis);
      EXPECT_EQ(sets[v].peaks[k].amplitude, direct.peaks[k].amplitude);
    }
  }
  const Volume afd = afd_volume(fod);
  EXPECT_NEAR(afd.data(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(afd.data(0, 1), 1.8, 1e-12);
  EXPECT_THROW(peaks_volume(fod, 6, ex, mask), std::invalid_argument);
}
