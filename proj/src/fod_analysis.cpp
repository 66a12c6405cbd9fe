#include "fodkit/fod_analysis.hpp"

#include "fodkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fodkit {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Orthonormal tangent frame at u.
void tangent_frame(const Direction& u, Direction& e1, Direction& e2) {
  const Direction helper = std::abs(u.x()) < 0.9 ? Direction::UnitX() : Direction::UnitY();
  e1 = (helper - helper.dot(u) * u).normalized();
  e2 = u.cross(e1);
}

// Exponential map at u for tangent coordinates (a, b).
Direction exp_map(const Direction& u, const Direction& e1, const Direction& e2, double a, double b) {
  const double r = std::hypot(a, b);
  if (r == 0.0) return u;
  return (std::cos(r) * u + std::sin(r) / r * (a * e1 + b * e2)).normalized();
}

struct Refined {
  Direction axis;
  double amplitude;
};

// Newton ascent of the FOD amplitude in exponential coordinates, with
// derivatives by central differences.
Refined refine(const ShCoefficients& fod, Direction u, const PeakOptions& opts) {
  constexpr double h = 1e-4;
  double value = sh_eval(fod, u);
  const double max_step = opts.max_step_deg * kDeg;
  for (int it = 0; it < opts.newton_iterations; ++it) {
    Direction e1, e2;
    tangent_frame(u, e1, e2);
    auto f = [&](double a, double b) { return sh_eval(fod, exp_map(u, e1, e2, a, b)); };
    const double fpp = f(h, 0), fmp = f(-h, 0), fpm = f(0, h), fmm = f(0, -h);
    const Eigen::Vector2d g((fpp - fmp) / (2 * h), (fpm - fmm) / (2 * h));
    Eigen::Matrix2d H;
    H(0, 0) = (fpp - 2 * value + fmp) / (h * h);
    H(1, 1) = (fpm - 2 * value + fmm) / (h * h);
    H(0, 1) = H(1, 0) = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h);

    Eigen::Vector2d step;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(H);
    if (eig.eigenvalues().maxCoeff() < 0.0)
      step = -H.ldlt().solve(g);
    else
      step = g.normalized() * max_step;  // not locally concave: climb the gradient
    if (!step.allFinite() || g.norm() == 0.0) break;
    if (step.norm() > max_step) step *= max_step / step.norm();

    // Backtrack until the amplitude does not drop.
    Direction next = u;
    double next_value = value;
    for (int k = 0; k < 20; ++k) {
      const Direction cand = exp_map(u, e1, e2, step(0), step(1));
      const double v = sh_eval(fod, cand);
      if (v >= value) {
        next = cand;
        next_value = v;
        break;
      }
      step *= 0.5;
    }
    const double moved = step.norm();
    u = next;
    value = next_value;
    if (moved < 1e-9) break;
  }
  return {u, value};
}

bool is_canonical(const Direction& v) {
  for (int k = 2; k >= 0; --k) {
    if (v(k) != 0.0) return v(k) > 0.0;
  }
  return true;
}

}  // namespace

Direction canonical_axis(const Direction& v) {
  const Direction u = v.normalized();
  return is_canonical(u) ? u : Direction(-u);
}

PeakExtractor::PeakExtractor(const SphereMesh& mesh, int order, PeakOptions opts)
    : mesh_(mesh), opts_(opts), basis_(sh_basis_matrix(mesh.vertices, ShBasisSpec{order})) {
  if (mesh_.vertices.size() != mesh_.neighbors.size())
    throw std::invalid_argument("extract_peaks: mesh has no adjacency");
  if (opts_.max_peaks < 0 || opts_.relative_threshold < 0.0)
    throw std::invalid_argument("extract_peaks: invalid options");
}

PeakSet PeakExtractor::extract(const ShCoefficients& fod) const {
  if (fod.values.size() != basis_.cols())
    throw std::invalid_argument("extract_peaks: FOD order does not match the extractor");
  PeakSet out;
  if (opts_.max_peaks == 0) return out;
  const Eigen::VectorXd amp = basis_ * fod.values;

  std::vector<Refined> candidates;
  for (std::size_t v = 0; v < mesh_.vertices.size(); ++v) {
    const double a = amp(static_cast<Eigen::Index>(v));
    if (a <= 0.0) continue;
    // Antipodal copies are identical; seed from the upper half only.
    const Direction& p = mesh_.vertices[v];
    if (!is_canonical(p)) continue;
    bool is_max = true;
    for (int n : mesh_.neighbors[v]) {
      const double b = amp(n);
      if (b > a || (b == a && n < static_cast<int>(v))) {
        is_max = false;
        break;
      }
    }
    if (is_max) candidates.push_back(refine(fod, p, opts_));
  }
  if (candidates.empty()) return out;

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Refined& a, const Refined& b) { return a.amplitude > b.amplitude; });
  const double top = candidates.front().amplitude;
  if (!(top > 0.0)) return out;
  for (const Refined& c : candidates) {
    if (static_cast<int>(out.peaks.size()) >= opts_.max_peaks) break;
    if (c.amplitude < opts_.relative_threshold * top) break;
    bool separated = true;
    for (const Peak& p : out.peaks)
      if (axis_angle_deg(p.axis, c.axis) < opts_.min_separation_deg) separated = false;
    if (separated) out.peaks.push_back({canonical_axis(c.axis), c.amplitude});
  }
  return out;
}

PeakSet extract_peaks(const ShCoefficients& fod, const SphereMesh& mesh, const PeakOptions& opts) {
  return PeakExtractor(mesh, fod.basis.order, opts).extract(fod);
}

double afd_total(const ShCoefficients& fod) {
  if (fod.values.size() == 0) return 0.0;
  return fod.values(0) * 2.0 * std::sqrt(std::numbers::pi);
}

Volume peaks_volume(const Volume& fod, int order, const PeakExtractor& extractor, const Mask& mask,
                    int threads) {
  if (fod.channels() != n_coeffs(order)) throw std::invalid_argument("peaks: FOD volume has wrong channel count");
  if (mask.size() != fod.dims.voxels()) throw std::invalid_argument("peaks: mask size mismatch");
  Volume out(fod.dims, kPeakChannels);
  out.voxel_size = fod.voxel_size;
  out.affine = fod.affine;
  parallel_for(mask.size(), [&](std::size_t v) {
    if (!mask[v]) return;
    const PeakSet ps = extractor.extract(ShCoefficients(order, fod.voxel(v)));
    for (std::size_t k = 0; k < ps.peaks.size() && k < 3; ++k) {
      const auto base = static_cast<Eigen::Index>(4 * k);
      const auto col = static_cast<Eigen::Index>(v);
      out.data.block(base, col, 3, 1) = ps.peaks[k].axis;
      out.data(base + 3, col) = ps.peaks[k].amplitude;
    }
  }, threads);
  return out;
}

std::vector<PeakSet> peaks_from_volume(const Volume& peaks) {
  if (peaks.channels() != kPeakChannels) throw std::invalid_argument("peaks volume must have 12 channels");
  std::vector<PeakSet> out(peaks.dims.voxels());
  for (std::size_t v = 0; v < out.size(); ++v) {
    for (Eigen::Index k = 0; k < 3; ++k) {
      const Eigen::Index col = static_cast<Eigen::Index>(v);
      const double amp = peaks.data(4 * k + 3, col);
      if (!(amp > 0.0)) break;
      out[v].peaks.push_back({Direction(peaks.data.block(4 * k, col, 3, 1)), amp});
    }
  }
  return out;
}

Volume afd_volume(const Volume& fod) {
  Volume out(fod.dims, 1);
  out.voxel_size = fod.voxel_size;
  out.affine = fod.affine;
  const double scale = 2.0 * std::sqrt(std::numbers::pi);
  if (fod.channels() > 0) out.data.row(0) = fod.data.row(0) * scale;
  return out;
}

}  // namespace fodkit
