#pragma once

#include <Eigen/Dense>

#include <vector>

namespace fodkit {

/// minimize ||B x - s||^2 subject to A x >= 0
struct QpProblem {
  Eigen::MatrixXd data_matrix;  // B, n_meas x n_vars
  Eigen::VectorXd data;         // s
  Eigen::MatrixXd constraints;  // A, n_con x n_vars (may have zero rows)
};

struct QpConfig {
  /// KKT residuals must not exceed kkt_tolerance * (1 + ||B^T s||).
  double kkt_tolerance = 1e-8;
  /// Active-set iteration cap; 0 selects 3 * n_con + 50.
  int max_iterations = 0;
  /// Iterations of the projected-gradient fallback.
  int fallback_iterations = 20000;
  /// Relative ridge applied when B does not have full column rank, as a
  /// fraction of ||B||_F^2 / n_vars. Solutions are then KKT-certified for the
  /// ridge-augmented objective.
  double rank_ridge = 1e-12;
};

struct QpDiagnostics {
  int iterations = 0;
  double objective = 0.0;          // ||Bx - s||^2 with the original B
  double stationarity = 0.0;       // ||B^T(Bx - s) - A^T mu||_2
  double primal_violation = 0.0;   // max(0, -min(Ax))
  double dual_violation = 0.0;     // max(0, -min(mu))
  double complementarity = 0.0;    // |mu^T A x|
  double tolerance = 0.0;          // absolute threshold the residuals were checked against
  bool used_fallback = false;
  bool regularized = false;
  bool converged = false;
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // mu, one per constraint row
  QpDiagnostics diagnostics;
  std::vector<int> active;      // constraint rows in the final active set
};

/// Non-negatively constrained least squares with fixed B and A, solved for
/// many right-hand sides. The problem is mapped to a least-distance program
/// (z = R x - Q^T s) whose dual is a non-negative least-squares problem in the
/// constraint multipliers; that NNLS is solved with the Lawson-Hanson
/// active-set method. A projected-gradient pass takes over if the active-set
/// iteration cap is hit.
class NonNegQpSolver {
 public:
  NonNegQpSolver(const Eigen::MatrixXd& data_matrix, const Eigen::MatrixXd& constraints,
                 QpConfig cfg = {});

  /// Throws NonConvergedError (best iterate attached) when KKT residuals stay
  /// above tolerance.
  QpSolution solve(const Eigen::VectorXd& data, const std::vector<int>* warm_active = nullptr) const;

  Eigen::Index n_vars() const { return n_vars_; }
  bool regularized() const { return regularized_; }

 private:
  QpConfig cfg_;
  Eigen::MatrixXd B_;          // original data matrix
  Eigen::MatrixXd A_;          // original constraints
  Eigen::Index n_vars_ = 0;
  Eigen::Index n_rows_ = 0;    // rows of (possibly augmented) B
  double ridge_ = 0.0;
  bool regularized_ = false;
  Eigen::MatrixXd R_;          // upper triangular factor, n_vars x n_vars
  Eigen::MatrixXd QtB_;        // maps s to the first n_vars entries of Q^T [s; 0]
  Eigen::MatrixXd Gt_;         // (A R^-1)^T with unit-norm columns, n_vars x n_con
  Eigen::VectorXd row_norms_;  // ||(A R^-1)_i|| (0 for trivially satisfied rows)
};

QpSolution nnqp_solve(const QpProblem& problem, const QpConfig& cfg = {});

/// Lawson-Hanson NNLS: minimize ||E u - f|| subject to u >= 0. Returns false
/// when the iteration cap is reached (u then holds the last iterate).
bool nnls_active_set(const Eigen::MatrixXd& E, const Eigen::VectorXd& f, Eigen::VectorXd& u,
                     int max_iterations, int& iterations, const std::vector<int>* warm = nullptr);

/// Accelerated projected gradient for the same NNLS problem, started from u.
void nnls_projected_gradient(const Eigen::MatrixXd& E, const Eigen::VectorXd& f, Eigen::VectorXd& u,
                             int iterations);

}  // namespace fodkit
