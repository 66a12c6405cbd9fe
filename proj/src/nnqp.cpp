#include "fodkit/nnqp.hpp"

#include "fodkit/errors.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fodkit {

namespace {

// QR factorization of the passive columns of E, kept up to date with Givens
// rotations as columns enter and leave. E has few rows (n_vars + 1), so the
// full orthogonal factor is stored explicitly.
class PassiveQr {
 public:
  PassiveQr(const Eigen::MatrixXd& E, const Eigen::VectorXd& f)
      : E_(E), Qt_(Eigen::MatrixXd::Identity(E.rows(), E.rows())), R_(E.rows(), E.rows()), qtf_(f) {
    R_.setZero();
    scale_ = std::max(1.0, E.cwiseAbs().maxCoeff());
  }

  const std::vector<Eigen::Index>& columns() const { return cols_; }
  bool contains(Eigen::Index j) const { return std::find(cols_.begin(), cols_.end(), j) != cols_.end(); }

  // False if E.col(j) is numerically dependent on the passive set.
  bool append(Eigen::Index j) {
    const Eigen::Index k = static_cast<Eigen::Index>(cols_.size());
    const Eigen::Index r = E_.rows();
    if (k >= r) return false;
    Eigen::VectorXd v = Qt_ * E_.col(j);
    for (Eigen::Index i = r - 1; i > k; --i) {
      if (v(i) == 0.0) continue;
      Eigen::JacobiRotation<double> g;
      g.makeGivens(v(i - 1), v(i));
      v.applyOnTheLeft(i - 1, i, g.adjoint());
      Qt_.applyOnTheLeft(i - 1, i, g.adjoint());
      qtf_.applyOnTheLeft(i - 1, i, g.adjoint());
      v(i) = 0.0;
    }
    // Rotations so far only touched rows >= k, which hold no passive data,
    // so a rejected column leaves the factorization valid.
    if (std::abs(v(k)) <= 1e-12 * std::max(scale_, v.norm())) return false;
    R_.col(k) = v;
    cols_.push_back(j);
    return true;
  }

  void remove(Eigen::Index j) {
    const auto it = std::find(cols_.begin(), cols_.end(), j);
    if (it == cols_.end()) return;
    const Eigen::Index pos = it - cols_.begin();
    const Eigen::Index k = static_cast<Eigen::Index>(cols_.size());
    cols_.erase(it);
    for (Eigen::Index c = pos; c + 1 < k; ++c) R_.col(c) = R_.col(c + 1);
    R_.col(k - 1).setZero();
    for (Eigen::Index c = pos; c + 1 < k; ++c) {
      // Column c now has a subdiagonal entry at row c + 1.
      Eigen::JacobiRotation<double> g;
      g.makeGivens(R_(c, c), R_(c + 1, c));
      R_.applyOnTheLeft(c, c + 1, g.adjoint());
      Qt_.applyOnTheLeft(c, c + 1, g.adjoint());
      qtf_.applyOnTheLeft(c, c + 1, g.adjoint());
      R_(c + 1, c) = 0.0;
    }
  }

  // Least-squares solution on the passive columns, scattered to full length.
  Eigen::VectorXd solve() const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(E_.cols());
    const Eigen::Index k = static_cast<Eigen::Index>(cols_.size());
    if (k == 0) return z;
    const Eigen::VectorXd zp =
        R_.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(qtf_.head(k));
    for (Eigen::Index i = 0; i < k; ++i) z(cols_[static_cast<std::size_t>(i)]) = zp(i);
    return z;
  }

 private:
  const Eigen::MatrixXd& E_;
  Eigen::MatrixXd Qt_;
  Eigen::MatrixXd R_;
  Eigen::VectorXd qtf_;
  std::vector<Eigen::Index> cols_;
  double scale_ = 1.0;
};

// Moves u towards the passive least-squares solution until it is feasible
// (Lawson-Hanson inner loop). Returns false if `entering` was rejected on the
// first solve; it is then removed from the passive set again.
bool inner_loop(PassiveQr& qr, Eigen::VectorXd& u, Eigen::Index entering) {
  const Eigen::Index m = u.size();
  bool first = true;
  for (int guard = 0; guard < 10 * static_cast<int>(m) + 10; ++guard) {
    const Eigen::VectorXd z = qr.solve();
    if (first && entering >= 0 && z(entering) <= 0.0) {
      qr.remove(entering);
      return false;
    }
    first = false;
    double alpha = std::numeric_limits<double>::infinity();
    Eigen::Index limiting = -1;
    for (Eigen::Index j : qr.columns()) {
      if (z(j) > 0.0) continue;
      const double denom = u(j) - z(j);
      const double a = denom > 0.0 ? u(j) / denom : 0.0;
      if (a < alpha) {
        alpha = a;
        limiting = j;
      }
    }
    if (limiting < 0) {
      u = z;
      return true;
    }
    u += alpha * (z - u);
    u(limiting) = 0.0;
    std::vector<Eigen::Index> drop;
    for (Eigen::Index j : qr.columns())
      if (u(j) <= 0.0) drop.push_back(j);
    for (Eigen::Index j : drop) {
      qr.remove(j);
      u(j) = 0.0;
    }
  }
  return true;
}

}  // namespace

bool nnls_active_set(const Eigen::MatrixXd& E, const Eigen::VectorXd& f, Eigen::VectorXd& u,
                     int max_iterations, int& iterations, const std::vector<int>* warm) {
  const Eigen::Index m = E.cols();
  u = Eigen::VectorXd::Zero(m);
  std::vector<char> blocked(static_cast<std::size_t>(m), 0);
  iterations = 0;
  if (m == 0) return true;

  const double tol = 1e-13 * std::max(1.0, E.cwiseAbs().maxCoeff()) * std::max(1.0, f.norm()) *
                     static_cast<double>(std::max<Eigen::Index>(E.rows(), 10));

  PassiveQr qr(E, f);
  if (warm && !warm->empty()) {
    for (int j : *warm)
      if (j >= 0 && j < m && !qr.contains(j)) qr.append(j);
    // Start from a feasible point: drop warm columns whose least-squares
    // coefficient is not positive until the rest is.
    for (;;) {
      const Eigen::VectorXd z = qr.solve();
      std::vector<Eigen::Index> drop;
      for (Eigen::Index j : qr.columns())
        if (z(j) <= 0.0) drop.push_back(j);
      if (drop.empty()) {
        u = z;
        break;
      }
      for (Eigen::Index j : drop) qr.remove(j);
    }
  }

  Eigen::VectorXd w = E.transpose() * (f - E * u);
  for (;;) {
    Eigen::Index pick = -1;
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      if (blocked[sj] || w(j) <= tol || u(j) > 0.0 || qr.contains(j)) continue;
      if (pick < 0 || w(j) > w(pick)) pick = j;  // lowest index wins ties
    }
    if (pick < 0) return true;
    if (iterations >= max_iterations) return false;
    ++iterations;
    if (!qr.append(pick) || !inner_loop(qr, u, pick)) {
      blocked[static_cast<std::size_t>(pick)] = 1;
      continue;
    }
    std::fill(blocked.begin(), blocked.end(), 0);
    w = E.transpose() * (f - E * u);
  }
}

void nnls_projected_gradient(const Eigen::MatrixXd& E, const Eigen::VectorXd& f, Eigen::VectorXd& u,
                             int iterations) {
  if (E.cols() == 0) return;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(E);
  const double lip = std::max(1e-300, svd.singularValues()(0) * svd.singularValues()(0));
  if (u.size() != E.cols()) u = Eigen::VectorXd::Zero(E.cols());
  Eigen::VectorXd y = u;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd grad = E.transpose() * (E * y - f);
    Eigen::VectorXd next = (y - grad / lip).cwiseMax(0.0);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - u);
    u = std::move(next);
    t = t_next;
  }
}

// ---------------------------------------------------------------------------

NonNegQpSolver::NonNegQpSolver(const Eigen::MatrixXd& data_matrix, const Eigen::MatrixXd& constraints,
                               QpConfig cfg)
    : cfg_(cfg), B_(data_matrix), A_(constraints), n_vars_(data_matrix.cols()) {
  if (B_.rows() < 1 || n_vars_ < 1) throw std::invalid_argument("nnqp: data matrix must be non-empty");
  if (A_.rows() > 0 && A_.cols() != n_vars_)
    throw std::invalid_argument("nnqp: constraint matrix has wrong column count");
  if (A_.rows() == 0) A_.resize(0, n_vars_);

  bool full_rank = B_.rows() >= n_vars_;
  if (full_rank) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B_);
    const auto& sv = svd.singularValues();
    full_rank = sv(sv.size() - 1) > 1e-10 * sv(0);
  }
  Eigen::MatrixXd aug = B_;
  if (!full_rank) {
    regularized_ = true;
    ridge_ = cfg_.rank_ridge * std::max(1e-300, B_.squaredNorm()) / static_cast<double>(n_vars_);
    aug.resize(B_.rows() + n_vars_, n_vars_);
    aug.topRows(B_.rows()) = B_;
    aug.bottomRows(n_vars_) = std::sqrt(ridge_) * Eigen::MatrixXd::Identity(n_vars_, n_vars_);
  }
  n_rows_ = aug.rows();

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(aug);
  R_ = qr.matrixQR().topRows(n_vars_).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n_rows_, n_vars_);
  QtB_ = Q.topRows(B_.rows()).transpose();

  // G = A R^-1, so G^T = R^-T A^T.
  Eigen::MatrixXd Gt = R_.transpose().triangularView<Eigen::Lower>().solve(A_.transpose());
  row_norms_ = Eigen::VectorXd::Zero(A_.rows());
  for (Eigen::Index i = 0; i < Gt.cols(); ++i) {
    const double n = Gt.col(i).norm();
    row_norms_(i) = n;
    if (n > 0.0) Gt.col(i) /= n;
  }
  Gt_ = std::move(Gt);
}

QpSolution NonNegQpSolver::solve(const Eigen::VectorXd& data, const std::vector<int>* warm_active) const {
  if (data.size() != B_.rows()) throw std::invalid_argument("nnqp: data vector has wrong length");
  const Eigen::Index n = n_vars_;
  const Eigen::Index m = A_.rows();
  const Eigen::VectorXd c = QtB_ * data;

  // Least-distance program: min ||z|| s.t. G z >= h with h = -G c.
  // Its dual is NNLS on E = [G^T; h^T], f = e_{n+1}.
  Eigen::MatrixXd E(n + 1, m);
  E.topRows(n) = Gt_;
  E.row(n) = -(Gt_.transpose() * c).transpose();
  for (Eigen::Index i = 0; i < m; ++i)
    if (row_norms_(i) == 0.0) E.col(i).setZero();  // 0 >= 0 always holds
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n + 1);
  f(n) = 1.0;

  QpSolution sol;
  QpDiagnostics& diag = sol.diagnostics;
  diag.regularized = regularized_;
  const int cap = cfg_.max_iterations > 0 ? cfg_.max_iterations : static_cast<int>(3 * m + 50);

  Eigen::VectorXd u;
  int iterations = 0;
  bool ok = nnls_active_set(E, f, u, cap, iterations, warm_active);
  diag.iterations = iterations;
  if (!ok) {
    diag.used_fallback = true;
    nnls_projected_gradient(E, f, u, cfg_.fallback_iterations);
    std::vector<int> support;
    for (Eigen::Index j = 0; j < m; ++j)
      if (u(j) > 0.0) support.push_back(static_cast<int>(j));
    int polish = 0;
    nnls_active_set(E, f, u, cap, polish, &support);
    diag.iterations += polish;
  }

  const Eigen::VectorXd r = E * u - f;
  const double scale = -r(n);  // 1 - h^T u, positive for feasible problems
  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  if (scale > 1e-14) {
    z = r.head(n) / scale;
    for (Eigen::Index i = 0; i < m; ++i)
      if (row_norms_(i) > 0.0) mu(i) = u(i) / scale / row_norms_(i);
  }
  // x = R^-1 (z + c); the sign follows from z := R x - c and z = -r/r_{n+1}.
  sol.x = R_.triangularView<Eigen::Upper>().solve(z + c);
  sol.multipliers = mu;
  for (Eigen::Index i = 0; i < m; ++i)
    if (u(i) > 0.0) sol.active.push_back(static_cast<int>(i));

  // KKT certificate against the (possibly ridge-augmented) objective.
  const Eigen::VectorXd resid = B_ * sol.x - data;
  Eigen::VectorXd grad = B_.transpose() * resid;
  if (regularized_) grad += ridge_ * sol.x;
  const Eigen::VectorXd Ax = A_ * sol.x;
  diag.objective = resid.squaredNorm();
  diag.stationarity = (grad - A_.transpose() * mu).norm();
  diag.primal_violation = m > 0 ? std::max(0.0, -Ax.minCoeff()) : 0.0;
  diag.dual_violation = m > 0 ? std::max(0.0, -mu.minCoeff()) : 0.0;
  diag.complementarity = std::abs(mu.dot(Ax));
  diag.tolerance = cfg_.kkt_tolerance * (1.0 + (B_.transpose() * data).norm());
  diag.converged = diag.stationarity <= diag.tolerance && diag.primal_violation <= diag.tolerance &&
                   diag.dual_violation <= diag.tolerance && diag.complementarity <= diag.tolerance;
  if (!diag.converged) {
    throw NonConvergedError("nnqp: KKT residuals above tolerance (stationarity " +
                                std::to_string(diag.stationarity) + ", primal " +
                                std::to_string(diag.primal_violation) + ", complementarity " +
                                std::to_string(diag.complementarity) + ")",
                            sol.x);
  }
  return sol;
}

QpSolution nnqp_solve(const QpProblem& problem, const QpConfig& cfg) {
  return NonNegQpSolver(problem.data_matrix, problem.constraints, cfg).solve(problem.data);
}

}  // namespace fodkit
