#include "fodkit/sphere_sh.hpp"

#include "fodkit/errors.hpp"
#include "fodkit/random.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace fodkit {

namespace {

constexpr double kUnitTolerance = 1e-12;

void require_unit(const Direction& d) {
  if (std::abs(d.squaredNorm() - 1.0) > 2 * kUnitTolerance)
    throw std::invalid_argument("non-unit direction (norm " + std::to_string(d.norm()) + ")");
}

void require_even_order(int order) {
  if (order < 0 || order % 2 != 0)
    throw std::invalid_argument("SH order must be even and >= 0, got " + std::to_string(order));
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradient tables

double shell_of(double bvalue) {
  if (bvalue < kB0Threshold) return 0.0;
  return std::round(bvalue / 50.0) * 50.0;
}

std::vector<std::size_t> GradientTable::b0_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (is_b0(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> GradientTable::shell_indices(double shell_bvalue) const {
  const double target = shell_of(shell_bvalue);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (shell_of(entries[i].bvalue) == target) out.push_back(i);
  return out;
}

std::vector<double> GradientTable::shells() const {
  std::set<double> s;
  for (const auto& e : entries) s.insert(shell_of(e.bvalue));
  return {s.begin(), s.end()};
}

Directions GradientTable::directions(const std::vector<std::size_t>& indices) const {
  Directions out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(entries.at(i).direction);
  return out;
}

GradientTable GradientTable::subset(const std::vector<std::size_t>& indices) const {
  GradientTable t;
  t.entries.reserve(indices.size());
  for (auto i : indices) t.entries.push_back(entries.at(i));
  return t;
}

void GradientTable::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].bvalue < 0) throw std::invalid_argument("negative b-value");
    if (!is_b0(i)) require_unit(entries[i].direction);
  }
}

// ---------------------------------------------------------------------------
// Basis

ShCoefficients::ShCoefficients(int order, Eigen::VectorXd v) : basis{order}, values(std::move(v)) {
  if (values.size() != n_coeffs(order))
    throw std::invalid_argument("coefficient count " + std::to_string(values.size()) +
                                " does not match order " + std::to_string(order));
}

ShCoefficients ShCoefficients::zero(int order) {
  return ShCoefficients(order, Eigen::VectorXd::Zero(n_coeffs(order)));
}

int n_coeffs(int order) {
  require_even_order(order);
  return (order + 1) * (order + 2) / 2;
}

int max_order_for(int n_meas) {
  int order = 0;
  while (n_coeffs(order + 2) <= n_meas) order += 2;
  return order;
}

int sh_index(int l, int m) { return l * (l + 1) / 2 + m; }

std::vector<int> sh_degrees(int order) {
  std::vector<int> out;
  out.reserve(n_coeffs(order));
  for (int l = 0; l <= order; l += 2)
    for (int m = -l; m <= l; ++m) out.push_back(l);
  return out;
}

Eigen::VectorXd sh_basis_row(const Direction& dir, int order) {
  require_even_order(order);
  require_unit(dir);
  const double x = std::clamp(dir.z(), -1.0, 1.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  const double phi = std::atan2(dir.y(), dir.x());

  // Orthonormalised associated Legendre functions without the Condon-Shortley
  // phase, p(l, m) for 0 <= m <= l <= order.
  const int L = order;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(L + 1, L + 1);
  p(0, 0) = 0.5 / std::sqrt(std::numbers::pi);
  for (int m = 1; m <= L; ++m) p(m, m) = std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * p(m - 1, m - 1);
  for (int m = 0; m < L; ++m) p(m + 1, m) = std::sqrt(2.0 * m + 3.0) * x * p(m, m);
  for (int m = 0; m <= L; ++m) {
    for (int l = m + 2; l <= L; ++l) {
      const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
      const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
      p(l, m) = a * (x * p(l - 1, m) - b * p(l - 2, m));
    }
  }

  Eigen::VectorXd row(n_coeffs(order));
  for (int l = 0; l <= L; l += 2) {
    row(sh_index(l, 0)) = p(l, 0);
    for (int m = 1; m <= l; ++m) {
      const double scale = std::numbers::sqrt2 * p(l, m);
      const double sign = (m % 2 == 0) ? 1.0 : -1.0;
      row(sh_index(l, m)) = sign * scale * std::cos(m * phi);
      row(sh_index(l, -m)) = scale * std::sin(m * phi);
    }
  }
  return row;
}

Eigen::MatrixXd sh_basis_matrix(const Directions& dirs, const ShBasisSpec& basis) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(dirs.size()), n_coeffs(basis.order));
  for (std::size_t i = 0; i < dirs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = sh_basis_row(dirs[i], basis.order).transpose();
  return out;
}

Eigen::MatrixXd sh_basis_matrix(const Eigen::Matrix3Xd& dirs, const ShBasisSpec& basis) {
  Eigen::MatrixXd out(dirs.cols(), n_coeffs(basis.order));
  for (Eigen::Index i = 0; i < dirs.cols(); ++i)
    out.row(i) = sh_basis_row(dirs.col(i), basis.order).transpose();
  return out;
}

double condition_number(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (m.rows() < m.cols() || smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

// ---------------------------------------------------------------------------
// Fitting

ShProjector::ShProjector(const Directions& dirs, const ShBasisSpec& basis, double lb_lambda)
    : basis_(basis) {
  if (lb_lambda < 0) throw std::invalid_argument("lb_lambda must be >= 0");
  const Eigen::MatrixXd B = sh_basis_matrix(dirs, basis);
  const Eigen::Index n = B.rows();
  const Eigen::Index R = B.cols();

  // Stack [B; sqrt(lambda) * Lambda] and solve through the SVD of the stack.
  Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(n + R, R);
  stacked.topRows(n) = B;
  const auto degrees = sh_degrees(basis.order);
  for (Eigen::Index j = 0; j < R; ++j) {
    const double l = degrees[j];
    stacked(n + j, j) = std::sqrt(lb_lambda) * l * (l + 1.0);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  condition_ = smin > 0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(condition_ < 1e12)) {
    throw IllConditionedError("SH fit design is rank deficient (condition " +
                                  std::to_string(condition_) + ")",
                              condition_);
  }
  // Only the data rows of U contribute; the regulariser rows have zero targets.
  const Eigen::MatrixXd U = svd.matrixU().topRows(n);
  pinv_ = svd.matrixV() * sv.cwiseInverse().asDiagonal() * U.transpose();
}

ShCoefficients ShProjector::fit(const Eigen::VectorXd& values) const {
  if (values.size() != pinv_.cols()) throw std::invalid_argument("ShProjector::fit: size mismatch");
  return ShCoefficients(basis_.order, pinv_ * values);
}

Eigen::MatrixXd ShProjector::fit_many(const Eigen::MatrixXd& values) const {
  if (values.rows() != pinv_.cols()) throw std::invalid_argument("ShProjector::fit_many: size mismatch");
  return pinv_ * values;
}

ShCoefficients sh_fit(const Eigen::VectorXd& values, const Directions& dirs,
                      const ShBasisSpec& basis, double lb_lambda) {
  if (static_cast<std::size_t>(values.size()) != dirs.size())
    throw std::invalid_argument("sh_fit: values and directions differ in length");
  return ShProjector(dirs, basis, lb_lambda).fit(values);
}

Eigen::VectorXd sh_eval(const ShCoefficients& coeffs, const Directions& dirs) {
  return sh_basis_matrix(dirs, coeffs.basis) * coeffs.values;
}

double sh_eval(const ShCoefficients& coeffs, const Direction& dir) {
  return sh_basis_row(dir, coeffs.basis.order).dot(coeffs.values);
}

// ---------------------------------------------------------------------------
// Direction subsampling

namespace {

// Condition number of the subset design matrix, evaluated through the Gram
// matrix eigenvalues: cond(B) = sqrt(lambda_max / lambda_min) of B^T B.
class SubsetConditioner {
 public:
  explicit SubsetConditioner(const Eigen::MatrixXd& rows) : rows_(rows) {}

  Eigen::MatrixXd gram(const std::vector<int>& subset) const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(rows_.cols(), rows_.cols());
    for (int i : subset) g.noalias() += rows_.row(i).transpose() * rows_.row(i);
    return g;
  }

  double condition(const Eigen::MatrixXd& gram) const {
    solver_.compute(gram, Eigen::EigenvaluesOnly);
    const auto& ev = solver_.eigenvalues();
    const double lo = ev(0);
    if (lo <= ev(ev.size() - 1) * 1e-28) return std::numeric_limits<double>::infinity();
    return std::sqrt(ev(ev.size() - 1) / lo);
  }

  double swapped(const Eigen::MatrixXd& gram, int out, int in) const {
    scratch_ = gram;
    scratch_.noalias() -= rows_.row(out).transpose() * rows_.row(out);
    scratch_.noalias() += rows_.row(in).transpose() * rows_.row(in);
    return condition(scratch_);
  }

  const Eigen::MatrixXd& rows() const { return rows_; }

 private:
  const Eigen::MatrixXd& rows_;
  mutable Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver_;
  mutable Eigen::MatrixXd scratch_;
};

// Pairwise exchange descent: swap a selected and an unselected direction
// whenever that lowers the condition number, until a full pass finds nothing.
double exchange_descent(const SubsetConditioner& cond, std::vector<int>& subset, int pool) {
  std::vector<char> chosen(pool, 0);
  for (int i : subset) chosen[i] = 1;
  Eigen::MatrixXd gram = cond.gram(subset);
  double best = cond.condition(gram);
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t a = 0; a < subset.size(); ++a) {
      for (int j = 0; j < pool; ++j) {
        if (chosen[j]) continue;
        const double c = cond.swapped(gram, subset[a], j);
        if (c < best * (1.0 - 1e-12)) {
          gram.noalias() -= cond.rows().row(subset[a]).transpose() * cond.rows().row(subset[a]);
          gram.noalias() += cond.rows().row(j).transpose() * cond.rows().row(j);
          chosen[subset[a]] = 0;
          chosen[j] = 1;
          subset[a] = j;
          best = c;
          improved = true;
        }
      }
    }
    // Refresh to avoid drift from repeated rank-one updates.
    gram = cond.gram(subset);
    best = cond.condition(gram);
  }
  return best;
}

std::vector<int> farthest_point_start(const Directions& dirs, int n) {
  const int pool = static_cast<int>(dirs.size());
  std::vector<int> subset{0};
  std::vector<double> closest(pool, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(pool, 0);
  chosen[0] = 1;
  while (static_cast<int>(subset.size()) < n) {
    const Direction& last = dirs[subset.back()];
    int pick = -1;
    for (int j = 0; j < pool; ++j) {
      if (chosen[j]) continue;
      closest[j] = std::min(closest[j], axis_angle_deg(dirs[j], last));
      if (pick < 0 || closest[j] > closest[pick]) pick = j;
    }
    chosen[pick] = 1;
    subset.push_back(pick);
  }
  return subset;
}

}  // namespace

std::vector<std::size_t> subsample_directions(const GradientTable& table, double shell_bvalue,
                                              int n, const ShBasisSpec& basis,
                                              const SubsampleOptions& opts) {
  const int R = n_coeffs(basis.order);
  if (n < R)
    throw InfeasibleError("cannot fit " + std::to_string(R) + " SH coefficients from " +
                          std::to_string(n) + " directions");
  if (shell_of(shell_bvalue) == 0.0) throw std::invalid_argument("subsample_directions: b=0 shell");
  const auto shell = table.shell_indices(shell_bvalue);
  const int pool = static_cast<int>(shell.size());
  if (pool < n)
    throw InfeasibleError("shell b=" + std::to_string(shell_bvalue) + " has only " +
                          std::to_string(pool) + " directions");
  if (pool == n) return shell;

  const Directions dirs = table.directions(shell);
  const Eigen::MatrixXd rows = sh_basis_matrix(dirs, basis);
  const SubsetConditioner cond(rows);

  std::vector<int> best = farthest_point_start(dirs, n);
  double best_cond = exchange_descent(cond, best, pool);

  auto rng = make_rng(opts.seed, 0x5b5b);
  for (int r = 0; r < opts.restarts; ++r) {
    std::vector<int> perm(pool);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = pool - 1; i > 0; --i)
      std::swap(perm[i], perm[uniform_index(rng, static_cast<std::uint64_t>(i) + 1)]);
    std::vector<int> candidate(perm.begin(), perm.begin() + n);
    const double c = exchange_descent(cond, candidate, pool);
    if (c < best_cond) {
      best_cond = c;
      best = candidate;
    }
  }

  std::vector<std::size_t> out;
  out.reserve(n);
  for (int i : best) out.push_back(shell[i]);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sphere tessellation

SphereMesh tessellate_sphere(int subdivisions) {
  if (subdivisions < 0 || subdivisions > 6)
    throw std::invalid_argument("subdivisions must be in [0, 6]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  SphereMesh mesh;
  const double base[12][3] = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0},
                              {0, -1, t}, {0, 1, t},   {0, -1, -t}, {0, 1, -t},
                              {t, 0, -1}, {t, 0, 1},   {-t, 0, -1}, {-t, 0, 1}};
  for (const auto& v : base) mesh.vertices.push_back(Direction(v[0], v[1], v[2]).normalized());
  mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const int idx = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back((mesh.vertices[a] + mesh.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
      const int ab = midpoint(f[0], f[1]);
      const int bc = midpoint(f[1], f[2]);
      const int ca = midpoint(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(next);
  }

  std::vector<std::set<int>> adj(mesh.vertices.size());
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      adj[f[k]].insert(f[(k + 1) % 3]);
      adj[f[k]].insert(f[(k + 2) % 3]);
    }
  }
  mesh.neighbors.reserve(adj.size());
  for (const auto& a : adj) mesh.neighbors.emplace_back(a.begin(), a.end());
  return mesh;
}

std::vector<int> SphereMesh::hemisphere() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(vertices.size()); ++i) {
    const Direction& v = vertices[i];
    const bool upper = v.z() > 1e-12 ||
                       (std::abs(v.z()) <= 1e-12 &&
                        (v.y() > 1e-12 || (std::abs(v.y()) <= 1e-12 && v.x() > 0)));
    if (upper) out.push_back(i);
  }
  return out;
}

Eigen::VectorXd SphereMesh::vertex_areas() const {
  Eigen::VectorXd area = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vertices.size()));
  for (const auto& f : faces) {
    const Direction& a = vertices[f[0]];
    const Direction& b = vertices[f[1]];
    const Direction& c = vertices[f[2]];
    // Solid angle of the spherical triangle (Van Oosterom & Strackee).
    const double num = std::abs(a.dot(b.cross(c)));
    const double den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    const double omega = 2.0 * std::atan2(num, den);
    for (int k : f) area(k) += omega / 3.0;
  }
  return area;
}

double axis_angle_deg(const Direction& a, const Direction& b) {
  const double c = std::min(1.0, std::abs(a.dot(b)) / (a.norm() * b.norm()));
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Directions hemisphere_directions(int n, double twist) {
  Directions out;
  out.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (i + 0.5) / n;  // (0, 1]
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i + twist;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    out.back().normalize();
  }
  return out;
}

}  // namespace fodkit
