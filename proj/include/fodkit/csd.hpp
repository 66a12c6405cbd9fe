#pragma once

#include "fodkit/forward_model.hpp"
#include "fodkit/nnqp.hpp"
#include "fodkit/sphere_sh.hpp"
#include "fodkit/volume.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fodkit {

struct SolverConfig {
  /// Constraint mesh: icosahedral tessellation level (3 -> 642 vertices).
  int mesh_subdivisions = 3;
  QpConfig qp;
  int ss3t_max_outer = 20;
  /// Outer loop stops once max |x_new - x_old| / max |x_new| drops below this.
  double ss3t_tolerance = 1e-4;
  enum class Ss3tInit { csd, zero } ss3t_init = Ss3tInit::csd;
  /// CSD init: WM amplitudes below this fraction of the peak are zeroed on
  /// the constraint mesh before the first outer iteration.
  double ss3t_init_threshold = 0.1;
  /// Shell used by single-tissue CSD when a volume carries several.
  double csd_shell = 1000.0;
};

/// WM FOD plus isotropic GM/CSF amplitudes. The isotropic amplitudes are l=0
/// SH coefficients, so with unit b0 signal each tissue's signal fraction is
/// 2 sqrt(pi) times its l=0 coefficient.
struct TissueDecomposition {
  ShCoefficients wm;
  double gm = 0.0;
  double csf = 0.0;

  /// (wm, gm, csf) signal fractions at b=0 for a unit-b0 voxel.
  Eigen::Vector3d signal_fractions() const;
};

struct CsdDiagnostics {
  QpDiagnostics qp;                    // last sub-solve
  int outer_iterations = 0;            // SS3T only
  std::vector<double> objective_trace; // SS3T only: objective after init and each outer step
  double residual = 0.0;               // mean squared residual over the fitted measurements
  double max_kkt = 0.0;                // worst KKT residual over all sub-solves
  bool converged = true;
};

struct CsdResult {
  TissueDecomposition decomposition;
  CsdDiagnostics diagnostics;
};

/// Hemisphere of the constraint tessellation (the even basis makes the other
/// half redundant).
Directions constraint_directions(int subdivisions);

/// Single-shell single-tissue CSD for a fixed set of directions.
class SingleShellCsd {
 public:
  SingleShellCsd(const Directions& dirs, const ZonalResponse& response, const ShBasisSpec& basis,
                 const SolverConfig& cfg = {});
  CsdResult fit(const Eigen::VectorXd& signal) const;

 private:
  ShBasisSpec basis_;
  NonNegQpSolver solver_;
};

CsdResult csd_single(const Eigen::VectorXd& signal, const Directions& dirs, const ZonalResponse& response,
                     const ShBasisSpec& basis, const SolverConfig& cfg = {});

/// Multi-shell multi-tissue CSD: one convex QP over [wm | gm | csf].
class MsmtCsd {
 public:
  MsmtCsd(const GradientTable& table, const ResponseSet& responses, const ShBasisSpec& basis,
          const SolverConfig& cfg = {});
  CsdResult fit(const Eigen::VectorXd& signal) const;
  const Eigen::MatrixXd& forward_matrix() const { return M_; }

 private:
  ShBasisSpec basis_;
  Eigen::MatrixXd M_;
  NonNegQpSolver solver_;
};

CsdResult msmt_csd(const Eigen::VectorXd& signal, const GradientTable& table, const ResponseSet& responses,
                   const ShBasisSpec& basis, const SolverConfig& cfg = {});

/// Single-shell three-tissue CSD: alternates between (gm, csf) with WM fixed
/// and (wm, gm) with CSF fixed, on a table with b=0 and one shell.
class Ss3tCsd {
 public:
  Ss3tCsd(const GradientTable& table, const ResponseSet& responses, const ShBasisSpec& basis,
          const SolverConfig& cfg = {});
  /// Throws NonConvergedError with best() = [wm | gm | csf] and the objective
  /// trace when the outer loop hits its cap.
  CsdResult fit(const Eigen::VectorXd& signal) const;
  const Eigen::MatrixXd& forward_matrix() const { return M_; }

 private:
  SolverConfig cfg_;
  ShBasisSpec basis_;
  Eigen::MatrixXd M_;  // full forward matrix [wm | gm | csf]
  std::vector<Eigen::Index> shell_rows_;
  std::vector<Eigen::Index> b0_rows_;
  std::optional<SingleShellCsd> init_;
  Eigen::MatrixXd init_sample_;   // SH -> mesh amplitudes
  Eigen::MatrixXd init_project_;  // mesh amplitudes -> SH (least squares)
  NonNegQpSolver isotropic_solver_;  // (gm, csf), WM fixed
  NonNegQpSolver wm_gm_solver_;      // (wm, gm), CSF fixed
};

CsdResult ss3t_csd(const Eigen::VectorXd& signal, const GradientTable& table, const ResponseSet& responses,
                   const ShBasisSpec& basis, const SolverConfig& cfg = {});

enum class CsdMethod { csd, msmt, ss3t };
CsdMethod parse_csd_method(const std::string& name);
std::string to_string(CsdMethod m);

struct VoxelFailure {
  std::size_t voxel = 0;
  std::string message;
};

struct VolumeFit {
  Volume fod;     // n_coeffs(order) channels
  Volume tissue;  // 3 channels: wm l=0 coefficient, gm, csf amplitudes
  Volume residual;  // 1 channel, mean squared residual
  std::vector<VoxelFailure> failures;
  std::size_t fitted_voxels = 0;
  double mean_residual = 0.0;
  double max_kkt = 0.0;
  int max_outer_iterations = 0;
};

/// Per-voxel solve over the masked voxels; unmasked voxels are zero. Solver
/// failures are collected rather than thrown; non-converged SS3T voxels keep
/// their last iterate.
VolumeFit fit_volume(const SignalVolume& volume, CsdMethod method, const ResponseSet& responses,
                     const ShBasisSpec& basis, const SolverConfig& cfg, const Mask& mask,
                     int threads = 0);

}  // namespace fodkit
