#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace fodkit {

using Direction = Eigen::Vector3d;
using Directions = std::vector<Direction>;

/// b-values below this are treated as b=0.
inline constexpr double kB0Threshold = 10.0;

struct GradientEntry {
  Direction direction = Direction::Zero();
  double bvalue = 0.0;  // s/mm^2
};

struct GradientTable {
  std::vector<GradientEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool is_b0(std::size_t i) const { return entries[i].bvalue < kB0Threshold; }
  std::vector<std::size_t> b0_indices() const;
  /// Indices whose b-value rounds to the given shell.
  std::vector<std::size_t> shell_indices(double shell_bvalue) const;
  /// Distinct shells in ascending order, b=0 included as 0 when present.
  std::vector<double> shells() const;
  Directions directions(const std::vector<std::size_t>& indices) const;
  GradientTable subset(const std::vector<std::size_t>& indices) const;
  /// Throws std::invalid_argument when a weighted entry is not unit length.
  void validate() const;
};

/// Shell b-value that `bvalue` belongs to, with b-values rounded to the nearest 50.
double shell_of(double bvalue);

/// Real, symmetric (even-order) orthonormal SH basis.
struct ShBasisSpec {
  int order = 8;
};

struct ShCoefficients {
  ShBasisSpec basis;
  Eigen::VectorXd values;

  ShCoefficients() = default;
  ShCoefficients(int order, Eigen::VectorXd v);
  static ShCoefficients zero(int order);
};

int n_coeffs(int order);
int max_order_for(int n_meas);
/// Packed index of (l, m) for even l, m in [-l, l].
int sh_index(int l, int m);
/// Degree l of each packed coefficient.
std::vector<int> sh_degrees(int order);

/// One row of the basis matrix. `dir` must be unit length.
Eigen::VectorXd sh_basis_row(const Direction& dir, int order);
Eigen::MatrixXd sh_basis_matrix(const Directions& dirs, const ShBasisSpec& basis);
Eigen::MatrixXd sh_basis_matrix(const Eigen::Matrix3Xd& dirs, const ShBasisSpec& basis);

/// Ratio of largest to smallest singular value (infinity when rank deficient).
double condition_number(const Eigen::MatrixXd& m);

inline constexpr double kDefaultLbLambda = 0.006;

/// Regularised least-squares projector for a fixed set of directions. Fitting
/// many signals against the same directions reuses the factorisation.
class ShProjector {
 public:
  ShProjector(const Directions& dirs, const ShBasisSpec& basis, double lb_lambda);
  ShCoefficients fit(const Eigen::VectorXd& values) const;
  Eigen::MatrixXd fit_many(const Eigen::MatrixXd& values) const;  // one column per signal
  double condition() const { return condition_; }
  const Eigen::MatrixXd& pseudo_inverse() const { return pinv_; }

 private:
  ShBasisSpec basis_;
  Eigen::MatrixXd pinv_;  // R x n
  double condition_ = 0.0;
};

ShCoefficients sh_fit(const Eigen::VectorXd& values, const Directions& dirs,
                      const ShBasisSpec& basis, double lb_lambda);
Eigen::VectorXd sh_eval(const ShCoefficients& coeffs, const Directions& dirs);
double sh_eval(const ShCoefficients& coeffs, const Direction& dir);

struct SubsampleOptions {
  std::uint64_t seed = 0;
  int restarts = 10;
};

/// Picks `n` measurements of a shell whose SH design matrix is well conditioned.
/// Returns table indices in ascending order.
std::vector<std::size_t> subsample_directions(const GradientTable& table, double shell_bvalue,
                                              int n, const ShBasisSpec& basis,
                                              const SubsampleOptions& opts = {});

struct SphereMesh {
  Directions vertices;
  std::vector<std::vector<int>> neighbors;
  std::vector<std::array<int, 3>> faces;

  /// One vertex per antipodal pair (the mesh is antipodally symmetric).
  std::vector<int> hemisphere() const;
  /// Area of the spherical Voronoi-like cell around each vertex (one third of
  /// the incident spherical triangles). Sums to 4*pi.
  Eigen::VectorXd vertex_areas() const;
};

SphereMesh tessellate_sphere(int subdivisions);

/// Shorter angle between two axes in degrees, treating v and -v as the same axis.
double axis_angle_deg(const Direction& a, const Direction& b);

/// Quasi-uniform half-sphere directions (spherical Fibonacci lattice on z >= 0),
/// rotated about z by `twist` radians.
Directions hemisphere_directions(int n, double twist = 0.0);

}  // namespace fodkit
