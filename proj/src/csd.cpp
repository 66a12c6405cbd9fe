#include "fodkit/csd.hpp"

#include "fodkit/errors.hpp"
#include "fodkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace fodkit {

namespace {

const double kTwoSqrtPi = 2.0 * std::sqrt(std::numbers::pi);

// Rows of the WM convolution operator for each table entry. b=0 rows only
// see the l=0 coefficient, so their direction is irrelevant.
Eigen::MatrixXd wm_block(const GradientTable& table, const std::vector<Eigen::Index>& rows,
                         const ResponseSet& responses, const ShBasisSpec& basis) {
  const int R = n_coeffs(basis.order);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), R);
  std::map<double, Eigen::VectorXd> factors;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& e = table.entries[static_cast<std::size_t>(rows[k])];
    const double shell = shell_of(e.bvalue);
    auto it = factors.find(shell);
    if (it == factors.end())
      it = factors.emplace(shell, convolution_factors(responses.get(Tissue::wm, shell), basis.order)).first;
    const Direction dir = shell == 0.0 ? Direction::UnitZ() : Direction(e.direction.normalized());
    out.row(static_cast<Eigen::Index>(k)) = sh_basis_row(dir, basis.order).cwiseProduct(it->second).transpose();
  }
  return out;
}

Eigen::VectorXd isotropic_column(const GradientTable& table, const std::vector<Eigen::Index>& rows,
                                 const ResponseSet& responses, Tissue tissue) {
  Eigen::VectorXd col(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double b = table.entries[static_cast<std::size_t>(rows[k])].bvalue;
    // r_0 * sqrt(4 pi) * Y_00 = r_0
    col(static_cast<Eigen::Index>(k)) = responses.get(tissue, b)(0);
  }
  return col;
}

std::vector<Eigen::Index> all_rows(const GradientTable& table) {
  std::vector<Eigen::Index> rows(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
  return rows;
}

Eigen::MatrixXd mesh_constraints(const ShBasisSpec& basis, const SolverConfig& cfg) {
  return sh_basis_matrix(constraint_directions(cfg.mesh_subdivisions), basis);
}

// Constraints for [wm | extra isotropic compartments...]: WM amplitude on the
// mesh plus one non-negativity row per isotropic compartment.
Eigen::MatrixXd tissue_constraints(const ShBasisSpec& basis, const SolverConfig& cfg, int n_iso) {
  const Eigen::MatrixXd mesh = mesh_constraints(basis, cfg);
  const Eigen::Index R = mesh.cols();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(mesh.rows() + n_iso, R + n_iso);
  A.topLeftCorner(mesh.rows(), R) = mesh;
  for (int k = 0; k < n_iso; ++k) A(mesh.rows() + k, R + k) = 1.0;
  return A;
}

double max_kkt(const QpDiagnostics& d) {
  return std::max({d.stationarity, d.primal_violation, d.dual_violation, d.complementarity});
}

}  // namespace

Eigen::Vector3d TissueDecomposition::signal_fractions() const {
  return Eigen::Vector3d(wm.values.size() > 0 ? wm.values(0) : 0.0, gm, csf) * kTwoSqrtPi;
}

Directions constraint_directions(int subdivisions) {
  static std::mutex mutex;
  static std::map<int, Directions> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(subdivisions);
  if (it == cache.end()) {
    const SphereMesh mesh = tessellate_sphere(subdivisions);
    Directions dirs;
    for (int i : mesh.hemisphere()) dirs.push_back(mesh.vertices[static_cast<std::size_t>(i)]);
    it = cache.emplace(subdivisions, std::move(dirs)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Single-tissue CSD

SingleShellCsd::SingleShellCsd(const Directions& dirs, const ZonalResponse& response,
                               const ShBasisSpec& basis, const SolverConfig& cfg)
    : basis_(basis),
      solver_(sh_basis_matrix(dirs, basis) * convolution_factors(response, basis.order).asDiagonal(),
              mesh_constraints(basis, cfg), cfg.qp) {
  if (!(response.size() > 0 && response(0) > 0))
    throw std::invalid_argument("csd: WM response must have r_0 > 0");
}

CsdResult SingleShellCsd::fit(const Eigen::VectorXd& signal) const {
  const QpSolution sol = solver_.solve(signal);
  CsdResult res;
  res.decomposition.wm = ShCoefficients(basis_.order, sol.x);
  res.diagnostics.qp = sol.diagnostics;
  res.diagnostics.residual = sol.diagnostics.objective / static_cast<double>(signal.size());
  res.diagnostics.max_kkt = max_kkt(sol.diagnostics);
  return res;
}

CsdResult csd_single(const Eigen::VectorXd& signal, const Directions& dirs, const ZonalResponse& response,
                     const ShBasisSpec& basis, const SolverConfig& cfg) {
  if (static_cast<std::size_t>(signal.size()) != dirs.size())
    throw std::invalid_argument("csd_single: signal and directions differ in length");
  return SingleShellCsd(dirs, response, basis, cfg).fit(signal);
}

// ---------------------------------------------------------------------------
// MSMT-CSD

namespace {

Eigen::MatrixXd msmt_matrix(const GradientTable& table, const ResponseSet& responses, const ShBasisSpec& basis) {
  const auto shells = table.shells();
  if (shells.size() < 3)
    throw InvalidModelError("MSMT-CSD needs at least 3 distinct b-values (b=0 included), got " +
                            std::to_string(shells.size()) + "; use SS3T-CSD for single-shell data");
  if (!responses.covers(shells)) throw std::invalid_argument("msmt_csd: responses do not cover every shell");
  const auto rows = all_rows(table);
  const Eigen::MatrixXd wm = wm_block(table, rows, responses, basis);
  Eigen::MatrixXd M(wm.rows(), wm.cols() + 2);
  M.leftCols(wm.cols()) = wm;
  M.col(wm.cols()) = isotropic_column(table, rows, responses, Tissue::gm);
  M.col(wm.cols() + 1) = isotropic_column(table, rows, responses, Tissue::csf);
  return M;
}

}  // namespace

MsmtCsd::MsmtCsd(const GradientTable& table, const ResponseSet& responses, const ShBasisSpec& basis,
                 const SolverConfig& cfg)
    : basis_(basis), M_(msmt_matrix(table, responses, basis)), solver_(M_, tissue_constraints(basis, cfg, 2), cfg.qp) {}

CsdResult MsmtCsd::fit(const Eigen::VectorXd& signal) const {
  const QpSolution sol = solver_.solve(signal);
  const Eigen::Index R = n_coeffs(basis_.order);
  CsdResult res;
  res.decomposition.wm = ShCoefficients(basis_.order, sol.x.head(R));
  res.decomposition.gm = std::max(0.0, sol.x(R));
  res.decomposition.csf = std::max(0.0, sol.x(R + 1));
  res.diagnostics.qp = sol.diagnostics;
  res.diagnostics.residual = sol.diagnostics.objective / static_cast<double>(signal.size());
  res.diagnostics.max_kkt = max_kkt(sol.diagnostics);
  return res;
}

CsdResult msmt_csd(const Eigen::VectorXd& signal, const GradientTable& table, const ResponseSet& responses,
                   const ShBasisSpec& basis, const SolverConfig& cfg) {
  if (static_cast<std::size_t>(signal.size()) != table.size())
    throw std::invalid_argument("msmt_csd: signal length does not match gradient table");
  return MsmtCsd(table, responses, basis, cfg).fit(signal);
}

// ---------------------------------------------------------------------------
// SS3T-CSD

namespace {

struct Ss3tLayout {
  std::vector<Eigen::Index> shell_rows;
  std::vector<Eigen::Index> b0_rows;
  double shell = 0.0;
};

Ss3tLayout ss3t_layout(const GradientTable& table) {
  const auto shells = table.shells();
  if (shells.size() != 2 || shells.front() != 0.0)
    throw InvalidModelError("SS3T-CSD needs exactly 2 b-values (b=0 and one shell), got " +
                            std::to_string(shells.size()));
  Ss3tLayout l;
  l.shell = shells.back();
  for (std::size_t i = 0; i < table.size(); ++i)
    (table.is_b0(i) ? l.b0_rows : l.shell_rows).push_back(static_cast<Eigen::Index>(i));
  return l;
}

}  // namespace

Ss3tCsd::Ss3tCsd(const GradientTable& table, const ResponseSet& responses, const ShBasisSpec& basis,
                 const SolverConfig& cfg)
    : cfg_(cfg),
      basis_(basis),
      M_([&] {
        const auto layout = ss3t_layout(table);
        if (!responses.covers(table.shells()))
          throw std::invalid_argument("ss3t_csd: responses do not cover both b-values");
        const auto rows = all_rows(table);
        const Eigen::MatrixXd wm = wm_block(table, rows, responses, basis);
        Eigen::MatrixXd M(wm.rows(), wm.cols() + 2);
        M.leftCols(wm.cols()) = wm;
        M.col(wm.cols()) = isotropic_column(table, rows, responses, Tissue::gm);
        M.col(wm.cols() + 1) = isotropic_column(table, rows, responses, Tissue::csf);
        return M;
      }()),
      isotropic_solver_(M_.rightCols(2), Eigen::MatrixXd::Identity(2, 2), cfg.qp),
      wm_gm_solver_(M_.leftCols(M_.cols() - 1), tissue_constraints(basis, cfg, 1), cfg.qp) {
  const auto layout = ss3t_layout(table);
  shell_rows_ = layout.shell_rows;
  b0_rows_ = layout.b0_rows;
  if (cfg.ss3t_init == SolverConfig::Ss3tInit::csd) {
    init_.emplace(table.directions({shell_rows_.begin(), shell_rows_.end()}),
                  responses.get(Tissue::wm, layout.shell), basis, cfg);
    init_sample_ = mesh_constraints(basis, cfg);
    init_project_ = init_sample_.completeOrthogonalDecomposition().pseudoInverse();
  }
}

CsdResult Ss3tCsd::fit(const Eigen::VectorXd& signal) const {
  if (signal.size() != M_.rows()) throw std::invalid_argument("ss3t_csd: signal length mismatch");
  const Eigen::Index R = n_coeffs(basis_.order);
  const Eigen::Index n_vars = R + 2;

  CsdResult res;
  CsdDiagnostics& diag = res.diagnostics;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n_vars);
  if (init_) {
    Eigen::VectorXd shell(static_cast<Eigen::Index>(shell_rows_.size()));
    for (std::size_t k = 0; k < shell_rows_.size(); ++k) shell(static_cast<Eigen::Index>(k)) = signal(shell_rows_[k]);
    const CsdResult init = init_->fit(shell);
    // Hard threshold: small lobes and the isotropic floor that single-tissue
    // CSD puts into GM/CSF voxels are not WM.
    Eigen::VectorXd amp = init_sample_ * init.decomposition.wm.values;
    const double cut = cfg_.ss3t_init_threshold * amp.maxCoeff();
    amp = (amp.array() < cut).select(0.0, amp);
    x.head(R) = init_project_ * amp;
    diag.max_kkt = init.diagnostics.max_kkt;
  }
  auto objective = [&](const Eigen::VectorXd& v) { return (M_ * v - signal).squaredNorm(); };
  diag.objective_trace.push_back(objective(x));

  std::vector<int> active;
  diag.converged = false;
  for (int outer = 1; outer <= cfg_.ss3t_max_outer; ++outer) {
    const Eigen::VectorXd previous = x;

    // Step A: WM fixed; non-negative (gm, csf) on both b-values.
    const Eigen::VectorXd iso_target = signal - M_.leftCols(R) * x.head(R);
    const QpSolution iso = isotropic_solver_.solve(iso_target);
    x(R) = std::max(0.0, iso.x(0));
    x(R + 1) = std::max(0.0, iso.x(1));
    diag.max_kkt = std::max(diag.max_kkt, max_kkt(iso.diagnostics));

    // Step B: CSF fixed; constrained (wm, gm).
    const Eigen::VectorXd wm_target = signal - M_.col(R + 1) * x(R + 1);
    const QpSolution wm = wm_gm_solver_.solve(wm_target, active.empty() ? nullptr : &active);
    active = wm.active;
    x.head(R + 1) = wm.x;
    x(R) = std::max(0.0, x(R));
    diag.qp = wm.diagnostics;
    diag.max_kkt = std::max(diag.max_kkt, max_kkt(wm.diagnostics));

    diag.objective_trace.push_back(objective(x));
    diag.outer_iterations = outer;
    const double scale = x.cwiseAbs().maxCoeff();
    const double change = (x - previous).cwiseAbs().maxCoeff();
    if (change <= cfg_.ss3t_tolerance * scale || scale == 0.0) {
      diag.converged = true;
      break;
    }
  }

  res.decomposition.wm = ShCoefficients(basis_.order, x.head(R));
  res.decomposition.gm = x(R);
  res.decomposition.csf = x(R + 1);
  diag.residual = diag.objective_trace.back() / static_cast<double>(signal.size());
  if (!diag.converged) {
    throw NonConvergedError("ss3t_csd: no convergence after " + std::to_string(cfg_.ss3t_max_outer) +
                                " outer iterations",
                            x, diag.objective_trace);
  }
  return res;
}

CsdResult ss3t_csd(const Eigen::VectorXd& signal, const GradientTable& table, const ResponseSet& responses,
                   const ShBasisSpec& basis, const SolverConfig& cfg) {
  if (static_cast<std::size_t>(signal.size()) != table.size())
    throw std::invalid_argument("ss3t_csd: signal length does not match gradient table");
  return Ss3tCsd(table, responses, basis, cfg).fit(signal);
}

// ---------------------------------------------------------------------------

CsdMethod parse_csd_method(const std::string& name) {
  if (name == "csd") return CsdMethod::csd;
  if (name == "msmt") return CsdMethod::msmt;
  if (name == "ss3t") return CsdMethod::ss3t;
  throw std::invalid_argument("unknown method '" + name + "' (expected csd, msmt or ss3t)");
}

std::string to_string(CsdMethod m) {
  switch (m) {
    case CsdMethod::csd: return "csd";
    case CsdMethod::msmt: return "msmt";
    case CsdMethod::ss3t: return "ss3t";
  }
  return "?";
}

VolumeFit fit_volume(const SignalVolume& volume, CsdMethod method, const ResponseSet& responses,
                     const ShBasisSpec& basis, const SolverConfig& cfg, const Mask& mask, int threads) {
  const Dims dims = volume.volume.dims;
  if (mask.size() != dims.voxels()) throw std::invalid_argument("fit_volume: mask size mismatch");
  const GradientTable& table = volume.table;
  const int R = n_coeffs(basis.order);

  // One prepared solver per volume; the per-voxel closure maps a signal to a result.
  std::function<CsdResult(const Eigen::VectorXd&)> solve;
  std::optional<SingleShellCsd> single;
  std::optional<MsmtCsd> msmt;
  std::optional<Ss3tCsd> ss3t;
  switch (method) {
    case CsdMethod::csd: {
      const auto shells = table.shells();
      double shell = cfg.csd_shell;
      std::vector<double> weighted;
      for (double s : shells)
        if (s > 0.0) weighted.push_back(s);
      if (weighted.size() == 1) shell = weighted.front();
      const auto rows = table.shell_indices(shell);
      if (rows.empty()) throw InvalidModelError("csd: no measurements on shell b=" + std::to_string(shell));
      const auto b0 = table.b0_indices();
      single.emplace(table.directions(rows), responses.get(Tissue::wm, shell), basis, cfg);
      solve = [&, rows, b0](const Eigen::VectorXd& s) {
        double s0 = 1.0;
        if (!b0.empty()) {
          s0 = 0.0;
          for (auto i : b0) s0 += s(static_cast<Eigen::Index>(i));
          s0 /= static_cast<double>(b0.size());
        }
        Eigen::VectorXd shell_signal(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k)
          shell_signal(static_cast<Eigen::Index>(k)) = s0 > 0 ? s(static_cast<Eigen::Index>(rows[k])) / s0 : 0.0;
        return single->fit(shell_signal);
      };
      break;
    }
    case CsdMethod::msmt:
      msmt.emplace(table, responses, basis, cfg);
      solve = [&](const Eigen::VectorXd& s) { return msmt->fit(s); };
      break;
    case CsdMethod::ss3t:
      ss3t.emplace(table, responses, basis, cfg);
      solve = [&](const Eigen::VectorXd& s) { return ss3t->fit(s); };
      break;
  }

  VolumeFit out;
  out.fod = Volume(dims, R);
  out.tissue = Volume(dims, 3);
  out.residual = Volume(dims, 1);
  for (Volume* v : {&out.fod, &out.tissue, &out.residual}) {
    v->voxel_size = volume.volume.voxel_size;
    v->affine = volume.volume.affine;
  }

  std::vector<std::size_t> voxels;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) voxels.push_back(i);
  std::vector<std::string> errors(voxels.size());
  std::vector<double> kkt(voxels.size(), 0.0);
  std::vector<int> outer(voxels.size(), 0);

  parallel_for(voxels.size(), [&](std::size_t k) {
    const std::size_t v = voxels[k];
    const Eigen::VectorXd s = volume.volume.voxel(v);
    TissueDecomposition dec;
    try {
      const CsdResult r = solve(s);
      dec = r.decomposition;
      kkt[k] = r.diagnostics.max_kkt;
      outer[k] = r.diagnostics.outer_iterations;
      out.residual.data(0, static_cast<Eigen::Index>(v)) = r.diagnostics.residual;
    } catch (const NonConvergedError& e) {
      errors[k] = e.what();
      const Eigen::VectorXd& x = e.best();
      if (x.size() >= R) {
        dec.wm = ShCoefficients(basis.order, x.head(R));
        if (x.size() >= R + 2) {
          dec.gm = x(R);
          dec.csf = x(R + 1);
        }
      }
      outer[k] = method == CsdMethod::ss3t ? cfg.ss3t_max_outer : 0;
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
    if (dec.wm.values.size() == R) {
      out.fod.voxel(v) = dec.wm.values;
      out.tissue.data(0, static_cast<Eigen::Index>(v)) = dec.wm.values(0);
    }
    out.tissue.data(1, static_cast<Eigen::Index>(v)) = dec.gm;
    out.tissue.data(2, static_cast<Eigen::Index>(v)) = dec.csf;
  }, threads);

  double residual_sum = 0.0;
  for (std::size_t k = 0; k < voxels.size(); ++k) {
    if (!errors[k].empty()) out.failures.push_back({voxels[k], errors[k]});
    out.max_kkt = std::max(out.max_kkt, kkt[k]);
    out.max_outer_iterations = std::max(out.max_outer_iterations, outer[k]);
    residual_sum += out.residual.data(0, static_cast<Eigen::Index>(voxels[k]));
  }
  out.fitted_voxels = voxels.size();
  out.mean_residual = voxels.empty() ? 0.0 : residual_sum / static_cast<double>(voxels.size());
  return out;
}

}  // namespace fodkit
