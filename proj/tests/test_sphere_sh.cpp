#include "fodkit/errors.hpp"
#include "fodkit/forward_model.hpp"
#include "fodkit/sphere_sh.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace fodkit;

namespace {

// Real symmetric basis built from the C++17 special functions, which carry
// the Condon-Shortley phase.
double oracle_y(int l, int m, const Direction& d) {
  const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  const double phi = std::atan2(d.y(), d.x());
  const int am = std::abs(m);
  const double p = std::sph_legendre(static_cast<unsigned>(l), static_cast<unsigned>(am), theta);
  if (m == 0) return p;
  if (m > 0) return std::numbers::sqrt2 * p * std::cos(m * phi);
  const double sign = (am % 2 == 0) ? 1.0 : -1.0;
  return std::numbers::sqrt2 * sign * p * std::sin(am * phi);
}

}  // namespace

TEST(ShIndexing, CountsAndOrders) {
  EXPECT_EQ(n_coeffs(0), 1);
  EXPECT_EQ(n_coeffs(2), 6);
  EXPECT_EQ(n_coeffs(4), 15);
  EXPECT_EQ(n_coeffs(6), 28);
  EXPECT_EQ(n_coeffs(8), 45);
  EXPECT_EQ(max_order_for(6), 2);
  EXPECT_EQ(max_order_for(14), 2);
  EXPECT_EQ(max_order_for(15), 4);
  EXPECT_EQ(max_order_for(28), 6);
  EXPECT_EQ(max_order_for(45), 8);
  EXPECT_EQ(max_order_for(44), 6);
  EXPECT_EQ(max_order_for(1), 0);
  const auto deg = sh_degrees(4);
  ASSERT_EQ(deg.size(), 15u);
  EXPECT_EQ(deg[0], 0);
  EXPECT_EQ(deg[sh_index(2, -2)], 2);
  EXPECT_EQ(deg[sh_index(4, 4)], 4);
}

TEST(ShBasis, MatchesSpecialFunctionOracle) {
  auto rng = make_rng(11, 1);
  for (int t = 0; t < 50; ++t) {
    const Direction d = testutil::random_direction(rng);
    const Eigen::VectorXd row = sh_basis_row(d, 8);
    for (int l = 0; l <= 8; l += 2)
      for (int m = -l; m <= l; ++m) EXPECT_NEAR(row(sh_index(l, m)), oracle_y(l, m, d), 1e-12) << l << " " << m;
  }
}

TEST(ShBasis, OrthonormalUnderQuadrature) {
  const auto rule = testutil::product_rule(12, 24);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(45, 45);
  for (std::size_t i = 0; i < rule.points.size(); ++i) {
    const Eigen::VectorXd y = sh_basis_row(rule.points[i], 8);
    gram += rule.weights[i] * y * y.transpose();
  }
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(45, 45)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ShBasis, RotationPreservesDegreePower) {
  // Rotating a function mixes coefficients only within a degree.
  auto rng = make_rng(12, 1);
  const auto dirs = hemisphere_directions(200);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(45);
  for (int i = 0; i < 45; ++i) c(i) = standard_normal(rng);
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(0.7, testutil::random_direction(rng)).toRotationMatrix();
  Directions rotated;
  for (const auto& d : dirs) rotated.push_back(rot.transpose() * d);
  const Eigen::VectorXd values = sh_basis_matrix(rotated, {8}) * c;
  const ShCoefficients cr = sh_fit(values, dirs, {8}, 0.0);
  const auto deg = sh_degrees(8);
  for (int l = 0; l <= 8; l += 2) {
    double p0 = 0, p1 = 0;
    for (int i = 0; i < 45; ++i)
      if (deg[i] == l) {
        p0 += c(i) * c(i);
        p1 += cr.values(i) * cr.values(i);
      }
    EXPECT_NEAR(p0, p1, 1e-9 * (1 + p0));
  }
}

TEST(ShFit, FitOfEvalIsIdentity) {
  auto rng = make_rng(13, 1);
  const auto table = default_multishell_table();
  Directions dirs;
  for (std::size_t i = 0; i < table.size(); ++i) dirs.push_back(testutil::random_direction(rng));
  ASSERT_EQ(dirs.size(), 300u);
  Eigen::VectorXd c(45);
  for (int i = 0; i < 45; ++i) c(i) = standard_normal(rng);
  const ShCoefficients coeffs(8, c);
  const ShCoefficients back = sh_fit(sh_eval(coeffs, dirs), dirs, {8}, 0.0);
  EXPECT_LT((back.values - c).norm() / c.norm(), 1e-10);
}

TEST(ShFit, RegularisationShrinksHighDegrees) {
  auto rng = make_rng(14, 1);
  const auto dirs = hemisphere_directions(60);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(45);
  c(sh_index(8, 3)) = 1.0;
  c(0) = 1.0;
  const ShCoefficients f(8, c);
  const ShCoefficients reg = sh_fit(sh_eval(f, dirs), dirs, {8}, kDefaultLbLambda);
  EXPECT_NEAR(reg.values(0), 1.0, 2e-2);  // l = 0 is not penalised, only leaks through the sampling
  EXPECT_LT(std::abs(reg.values(sh_index(8, 3))), 1.0);
}

TEST(ShFit, TooFewDirectionsIsIllConditioned) {
  const auto dirs = hemisphere_directions(20);
  try {
    ShProjector p(dirs, {8}, 0.0);
    FAIL() << "expected IllConditionedError";
  } catch (const IllConditionedError& e) {
    EXPECT_FALSE(e.condition() < 1e12);
  }
}

TEST(ShEval, ZonalValuesAtPole) {
  const Eigen::VectorXd row = sh_basis_row(Direction::UnitZ(), 8);
  for (int l = 0; l <= 8; l += 2)
    for (int m = -l; m <= l; ++m) {
      const double expect = m == 0 ? std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi)) : 0.0;
      EXPECT_NEAR(row(sh_index(l, m)), expect, 1e-13);
    }
}

TEST(ShBasis, RejectsOddOrderAndNonUnitDirections) {
  EXPECT_THROW(sh_basis_row(Direction::UnitZ(), 3), std::invalid_argument);
  EXPECT_THROW(sh_basis_row(Direction(0, 0, 2), 4), std::invalid_argument);
}

TEST(Mesh, TessellationProperties) {
  for (int s : {0, 1, 2, 3}) {
    const SphereMesh m = tessellate_sphere(s);
    const std::size_t expect = 10u * (1u << (2 * s)) + 2u;
    EXPECT_EQ(m.vertices.size(), expect);
    EXPECT_NEAR(m.vertex_areas().sum(), 4.0 * std::numbers::pi, 1e-9);
    EXPECT_EQ(m.hemisphere().size(), expect / 2);
    for (const auto& v : m.vertices) {
      EXPECT_NEAR(v.norm(), 1.0, 1e-12);
      bool found = false;
      for (const auto& w : m.vertices) found = found || (v + w).norm() < 1e-9;
      EXPECT_TRUE(found) << "mesh is not antipodally symmetric";
    }
  }
}

TEST(Mesh, NeighborsAreSymmetric) {
  const SphereMesh m = tessellate_sphere(2);
  for (std::size_t i = 0; i < m.neighbors.size(); ++i) {
    EXPECT_GE(m.neighbors[i].size(), 5u);
    for (int j : m.neighbors[i]) {
      const auto& back = m.neighbors[static_cast<std::size_t>(j)];
      EXPECT_NE(std::find(back.begin(), back.end(), static_cast<int>(i)), back.end());
    }
  }
}

TEST(Angles, AxisAngleIsAntipodal) {
  const Direction a(1, 0, 0), b(0, 1, 0);
  EXPECT_NEAR(axis_angle_deg(a, -a), 0.0, 1e-6);
  EXPECT_NEAR(axis_angle_deg(a, b), 90.0, 1e-12);
  EXPECT_NEAR(axis_angle_deg(a, Direction(-1, 1, 0).normalized()), 45.0, 1e-9);
}

TEST(Subsample, ReturnsSortedSubsetOfShell) {
  const auto table = default_multishell_table();
  const auto shell = table.shell_indices(1000);
  const std::set<std::size_t> pool(shell.begin(), shell.end());
  const auto idx = subsample_directions(table, 1000, 28, {6}, {.seed = 5, .restarts = 2});
  ASSERT_EQ(idx.size(), 28u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 28u);
  for (auto i : idx) EXPECT_TRUE(pool.count(i));
  EXPECT_EQ(idx, subsample_directions(table, 1000, 28, {6}, {.seed = 5, .restarts = 2}));
}

TEST(Subsample, BeatsRandomSubsets) {
  const auto table = default_multishell_table();
  const auto shell = table.shell_indices(1000);
  const auto idx = subsample_directions(table, 1000, 15, {4}, {.seed = 1, .restarts = 2});
  const double chosen = condition_number(sh_basis_matrix(table.directions(idx), {4}));
  auto rng = make_rng(99, 1);
  int worse = 0;
  for (int t = 0; t < 50; ++t) {
    auto copy = shell;
    std::shuffle(copy.begin(), copy.end(), rng);
    copy.resize(15);
    if (condition_number(sh_basis_matrix(table.directions(copy), {4})) >= chosen) ++worse;
  }
  EXPECT_EQ(worse, 50);
}

TEST(Subsample, Errors) {
  const auto table = default_multishell_table();
  EXPECT_THROW(subsample_directions(table, 1000, 10, {4}), InfeasibleError);   // 10 < 15 coefficients
  EXPECT_THROW(subsample_directions(table, 400, 80, {4}), InfeasibleError);    // shell has 64
  EXPECT_THROW(subsample_directions(table, 0, 6, {2}), std::invalid_argument);
}

TEST(GradientTable, ShellsAndSubsets) {
  const auto table = default_multishell_table();
  EXPECT_EQ(table.size(), 300u);
  EXPECT_EQ(table.b0_indices().size(), 20u);
  EXPECT_EQ(table.shell_indices(400).size(), 64u);
  EXPECT_EQ(table.shell_indices(1000).size(), 88u);
  EXPECT_EQ(table.shell_indices(2600).size(), 128u);
  EXPECT_EQ(table.shells(), (std::vector<double>{0, 400, 1000, 2600}));
  EXPECT_EQ(shell_of(1020), 1000);
  EXPECT_EQ(shell_of(3), 0);
  const auto sub = table.subset({0, 1, 2});
  EXPECT_EQ(sub.size(), 3u);
}
