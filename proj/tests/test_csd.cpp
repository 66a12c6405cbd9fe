#include "fodkit/csd.hpp"
#include "fodkit/errors.hpp"
#include "fodkit/fod_analysis.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fodkit;

namespace {

struct Fixture {
  GradientTable table = default_multishell_table();
  TissueParams params = tissue_params_at_age(40);
  ResponseSet responses = responses_from_tissue(params, table.shells(), 8);
  GradientTable single = table.subset(testutil::b0_and_shell(table, 1000));
  PeakExtractor peaks{tessellate_sphere(3), 8};
};

}  // namespace

TEST(Constraints, HemisphereOfTessellation) {
  const Directions d = constraint_directions(3);
  EXPECT_EQ(d.size(), 321u);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) EXPECT_GT((d[i] + d[j]).norm(), 1e-6);
}

TEST(Msmt, RecoversSelfConsistentFractionsAndPeaks) {
  Fixture f;
  const MsmtCsd msmt(f.table, f.responses, {8});
  auto rng = make_rng(41, 1);
  for (int t = 0; t < 20; ++t) {
    const Direction a = testutil::random_direction(rng);
    const double f_wm = uniform(rng, 0.5, 0.9), f_gm = uniform(rng, 0.0, 1.0 - f_wm), f_csf = 1.0 - f_wm - f_gm;
    const ShCoefficients fod = testutil::power_lobes({{a, f_wm}});
    const CsdResult r = msmt.fit(testutil::matched_signal(f.table, f.params, fod, f_gm, f_csf));
    const Eigen::Vector3d fr = r.decomposition.signal_fractions();
    EXPECT_NEAR(fr(0), f_wm, 1e-3);
    EXPECT_NEAR(fr(1), f_gm, 1e-3);
    EXPECT_NEAR(fr(2), f_csf, 1e-3);
    EXPECT_LT((r.decomposition.wm.values - fod.values).norm(), 1e-6);
    const PeakSet p = f.peaks.extract(r.decomposition.wm);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_LT(axis_angle_deg(p.peaks[0].axis, a), 1.0);
    EXPECT_LE(r.diagnostics.max_kkt, 1e-6);
  }
}

TEST(Msmt, TensorDataSingleFibersAndCrossings) {
  Fixture f;
  const MsmtCsd msmt(f.table, f.responses, {8});
  auto rng = make_rng(42, 1);
  for (int t = 0; t < 10; ++t) {
    const Direction a = testutil::random_direction(rng);
    Direction b = testutil::random_direction(rng);
    b = (b - b.dot(a) * a).normalized();
    FiberConfig one{{{a, 1.0}}, 0.7, 0.2, 0.1};
    FiberConfig two{{{a, 0.5}, {b, 0.5}}, 0.7, 0.2, 0.1};
    const PeakSet p1 = f.peaks.extract(msmt.fit(simulate_voxel(one, f.table, f.params)).decomposition.wm);
    ASSERT_EQ(p1.size(), 1u);
    EXPECT_LT(testutil::worst_match(p1, {a}), 1.0);
    const PeakSet p2 = f.peaks.extract(msmt.fit(simulate_voxel(two, f.table, f.params)).decomposition.wm);
    ASSERT_EQ(p2.size(), 2u);
    EXPECT_LT(testutil::worst_match(p2, {a, b}), 2.0);
  }
}

TEST(Msmt, FodIsNonNegativeOnConstraintSet) {
  Fixture f;
  const MsmtCsd msmt(f.table, f.responses, {8});
  PhantomSpec spec;
  spec.dims = Dims{4, 4, 3};
  spec.snr = 10;
  const SignalVolume v = generate_phantom(spec, f.table);
  const Directions dirs = constraint_directions(3);
  for (std::size_t i = 0; i < spec.dims.voxels(); ++i) {
    const CsdResult r = msmt.fit(v.volume.voxel(i));
    EXPECT_GE(sh_eval(r.decomposition.wm, dirs).minCoeff(), -1e-8);
    EXPECT_GE(r.decomposition.gm, -1e-10);
    EXPECT_GE(r.decomposition.csf, -1e-10);
  }
}

TEST(Msmt, NeedsThreeBValues) {
  Fixture f;
  EXPECT_THROW(MsmtCsd(f.single, f.responses, {8}), InvalidModelError);
}

TEST(SingleShell, TensorDataSingleFibersAndCrossings) {
  Fixture f;
  const auto rows = f.table.shell_indices(1000);
  const SingleShellCsd csd(f.table.directions(rows), f.responses.get(Tissue::wm, 1000), {8});
  auto rng = make_rng(43, 1);
  for (int t = 0; t < 10; ++t) {
    const Direction a = testutil::random_direction(rng);
    Direction b = testutil::random_direction(rng);
    b = (b - b.dot(a) * a).normalized();
    FiberConfig one{{{a, 1.0}}, 1.0, 0.0, 0.0};
    FiberConfig two{{{a, 0.5}, {b, 0.5}}, 1.0, 0.0, 0.0};
    const GradientTable shell = f.table.subset(rows);
    const PeakSet p1 = f.peaks.extract(csd.fit(simulate_voxel(one, shell, f.params)).decomposition.wm);
    ASSERT_EQ(p1.size(), 1u);
    EXPECT_LT(testutil::worst_match(p1, {a}), 1.0);
    const PeakSet p2 = f.peaks.extract(csd.fit(simulate_voxel(two, shell, f.params)).decomposition.wm);
    ASSERT_EQ(p2.size(), 2u);
    EXPECT_LT(testutil::worst_match(p2, {a, b}), 2.0);
  }
}

TEST(Ss3t, SelfConsistentCrossingAndFractions) {
  Fixture f;
  const Ss3tCsd ss3t(f.single, f.responses, {8});
  const Direction a = Direction(1, 1, 0).normalized(), b = Direction(0, 0, 1);
  const ShCoefficients fod = testutil::power_lobes({{a, 0.35}, {b, 0.35}});
  const CsdResult r = ss3t.fit(testutil::matched_signal(f.single, f.params, fod, 0.2, 0.1));
  const PeakSet p = f.peaks.extract(r.decomposition.wm);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_LT(testutil::worst_match(p, {a, b}), 2.0);
  EXPECT_LE(r.diagnostics.outer_iterations, 20);
  // Two b-values determine only two isotropic-like components, so the
  // three-way split is not exact; the total is.
  EXPECT_NEAR(r.decomposition.signal_fractions().sum(), 1.0, 1e-3);
}

TEST(Ss3t, ObjectiveTraceNeverIncreases) {
  Fixture f;
  const Ss3tCsd ss3t(f.single, f.responses, {8});
  PhantomSpec spec;
  spec.dims = Dims{5, 5, 2};
  spec.snr = 20;
  const SignalVolume v = generate_phantom(spec, f.single);
  int converged = 0;
  for (std::size_t i = 0; i < spec.dims.voxels(); ++i) {
    std::vector<double> trace;
    try {
      const CsdResult r = ss3t.fit(v.volume.voxel(i));
      trace = r.diagnostics.objective_trace;
      ++converged;
    } catch (const NonConvergedError& e) {
      trace = e.trace();
      EXPECT_EQ(e.best().size(), 47);
    }
    ASSERT_GE(trace.size(), 2u);
    for (std::size_t k = 1; k < trace.size(); ++k) EXPECT_LE(trace[k], trace[k - 1] * (1 + 1e-12) + 1e-15);
  }
  EXPECT_GE(converged, 45);
}

TEST(Ss3t, RejectsMultiShellTable) {
  Fixture f;
  EXPECT_THROW(Ss3tCsd(f.table, f.responses, {8}), InvalidModelError);
}

TEST(FitVolume, MaskThreadsAndFailures) {
  Fixture f;
  PhantomSpec spec;
  spec.dims = Dims{4, 4, 3};
  spec.snr = 25;
  const SignalVolume v = generate_phantom(spec, f.table);
  const Mask mask = wm_mask(v);
  const VolumeFit a = fit_volume(v, CsdMethod::msmt, f.responses, {8}, {}, mask, 1);
  const VolumeFit b = fit_volume(v, CsdMethod::msmt, f.responses, {8}, {}, mask, 3);
  EXPECT_EQ(a.fod.data, b.fod.data);
  EXPECT_EQ(a.tissue.data, b.tissue.data);
  EXPECT_EQ(a.fitted_voxels, mask_count(mask));
  EXPECT_TRUE(a.failures.empty());
  EXPECT_EQ(a.fod.channels(), 45);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) EXPECT_TRUE(a.fod.voxel(i).isZero());
  EXPECT_THROW(fit_volume(v, CsdMethod::ss3t, f.responses, {8}, {}, mask, 1), InvalidModelError);
  EXPECT_THROW(fit_volume(v, CsdMethod::msmt, f.responses, {8}, {}, Mask(3, 1), 1), std::invalid_argument);
}

TEST(FitVolume, SingleShellMethodPicksConfiguredShell) {
  Fixture f;
  PhantomSpec spec;
  spec.dims = Dims{3, 3, 2};
  const SignalVolume v = generate_phantom(spec, f.table);
  const VolumeFit fit = fit_volume(v, CsdMethod::csd, f.responses, {8}, {}, wm_mask(v), 1);
  EXPECT_TRUE(fit.failures.empty());
  EXPECT_GT(fit.fitted_voxels, 0u);
}

TEST(Methods, ParseAndPrint) {
  EXPECT_EQ(parse_csd_method("msmt"), CsdMethod::msmt);
  EXPECT_EQ(parse_csd_method("ss3t"), CsdMethod::ss3t);
  EXPECT_EQ(parse_csd_method("csd"), CsdMethod::csd);
  EXPECT_EQ(to_string(CsdMethod::ss3t), "ss3t");
  EXPECT_THROW(parse_csd_method("dti"), std::invalid_argument);
}
