#include "fodkit/forward_model.hpp"

#include "fodkit/errors.hpp"
#include "fodkit/quadrature.hpp"
#include "fodkit/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fodkit {

namespace {

constexpr std::uint64_t kStreamConfig = 0xc0f1;
constexpr std::uint64_t kStreamNoise = 0x701e;
constexpr std::uint64_t kStreamCounts = 0xc047;

const double kSqrtPi = std::sqrt(std::numbers::pi);

Direction random_unit(std::mt19937_64& rng) {
  for (;;) {
    Direction v(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const double n = v.norm();
    if (n > 1e-8) return v / n;
  }
}

// Unit vector at `angle` (radians) from `axis`, at a random azimuth.
Direction at_angle(const Direction& axis, double angle, std::mt19937_64& rng) {
  Direction helper = std::abs(axis.x()) < 0.9 ? Direction::UnitX() : Direction::UnitY();
  const Direction e1 = axis.cross(helper).normalized();
  const Direction e2 = axis.cross(e1);
  const double psi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return (std::cos(angle) * axis + std::sin(angle) * (std::cos(psi) * e1 + std::sin(psi) * e2)).normalized();
}

std::vector<Fiber> draw_fibers(int count, double min_sep_deg, std::mt19937_64& rng) {
  std::vector<Fiber> fibers;
  const double min_sep = min_sep_deg * std::numbers::pi / 180.0;
  fibers.push_back({random_unit(rng), 1.0});
  if (count >= 2) {
    const double angle = uniform(rng, min_sep, std::numbers::pi / 2.0);
    fibers.push_back({at_angle(fibers[0].axis, angle, rng), 1.0});
  }
  if (count >= 3) {
    Direction third = fibers[0].axis.cross(fibers[1].axis).normalized();
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const Direction cand = random_unit(rng);
      if (axis_angle_deg(cand, fibers[0].axis) >= min_sep_deg &&
          axis_angle_deg(cand, fibers[1].axis) >= min_sep_deg) {
        third = cand;
        break;
      }
    }
    fibers.push_back({third, 1.0});
  }
  double total = 0.0;
  for (auto& f : fibers) {
    f.fraction = 1.0 + uniform(rng, -0.2, 0.2);
    total += f.fraction;
  }
  for (auto& f : fibers) f.fraction /= total;
  return fibers;
}

double legendre(int l, double t) {
  if (l == 0) return 1.0;
  double p0 = 1.0, p1 = t;
  for (int k = 2; k <= l; ++k) {
    const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

TissueClass classify(const Dims& d, int x, int y, int z) {
  auto u = [](int c, int n) { return n <= 1 ? 0.0 : 2.0 * (c + 0.5) / n - 1.0; };
  const double r = std::sqrt(u(x, d.nx) * u(x, d.nx) + u(y, d.ny) * u(y, d.ny) + u(z, d.nz) * u(z, d.nz));
  if (r < 1.0) return TissueClass::wm;
  if (r < 1.25) return TissueClass::gm;
  return TissueClass::csf;
}

}  // namespace

// ---------------------------------------------------------------------------

DiffusionTensor DiffusionTensor::axially_symmetric(double axial, double radial, const Direction& axis) {
  DiffusionTensor t;
  t.eigenvalues = Eigen::Vector3d(axial, radial, radial);
  const Direction a = axis.normalized();
  const Direction helper = std::abs(a.x()) < 0.9 ? Direction::UnitX() : Direction::UnitY();
  const Direction e1 = a.cross(helper).normalized();
  t.eigenvectors.col(0) = a;
  t.eigenvectors.col(1) = e1;
  t.eigenvectors.col(2) = a.cross(e1);
  return t;
}

DiffusionTensor DiffusionTensor::isotropic(double d) {
  DiffusionTensor t;
  t.eigenvalues.setConstant(d);
  return t;
}

Eigen::Matrix3d DiffusionTensor::matrix() const {
  return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
}

double tensor_signal(double bvalue, const Direction& dir, const DiffusionTensor& tensor) {
  if (bvalue < 0) throw std::invalid_argument("tensor_signal: negative b-value");
  if (bvalue == 0.0) return 1.0;
  return std::exp(-bvalue * dir.dot(tensor.matrix() * dir));
}

void FiberConfig::validate(double min_separation_deg) const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(f_wm) || !in01(f_gm) || !in01(f_csf) || std::abs(f_wm + f_gm + f_csf - 1.0) > 1e-9)
    throw std::invalid_argument("tissue fractions must lie in [0,1] and sum to 1");
  if (fibers.size() > 3) throw std::invalid_argument("at most 3 fibers per voxel");
  if (f_wm > 0 && fibers.empty()) throw std::invalid_argument("WM fraction without fibers");
  double total = 0.0;
  for (const auto& f : fibers) {
    if (!in01(f.fraction)) throw std::invalid_argument("fiber fraction outside [0,1]");
    if (std::abs(f.axis.norm() - 1.0) > 1e-9) throw std::invalid_argument("fiber axis not unit");
    total += f.fraction;
  }
  if (!fibers.empty() && std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("fiber fractions must sum to 1");
  for (std::size_t i = 0; i < fibers.size(); ++i)
    for (std::size_t j = i + 1; j < fibers.size(); ++j)
      if (axis_angle_deg(fibers[i].axis, fibers[j].axis) < min_separation_deg - 1e-9)
        throw std::invalid_argument("fiber axes closer than the minimum separation");
}

TissueParams tissue_params_at_age(double weeks) {
  if (!(weeks >= 26.0 && weeks <= 46.0))
    throw std::invalid_argument("age must lie in [26, 46] weeks, got " + std::to_string(weeks));
  // Linear between the 30-week and 40-week anchors, extrapolated outside.
  const double t = (weeks - 30.0) / 10.0;
  TissueParams p;
  p.wm_axial = 1.2e-3 + t * (1.7e-3 - 1.2e-3);
  p.wm_radial = 0.5e-3 + t * (0.2e-3 - 0.5e-3);
  // GM sits 0.2e-3 above the WM mean at 40 weeks; the gap closes at 30 weeks.
  p.gm = p.wm_mean() + 0.2e-3 * std::max(0.0, t);
  p.csf = 3.0e-3;
  return p;
}

Eigen::VectorXd simulate_voxel(const FiberConfig& config, const GradientTable& table,
                               const TissueParams& params) {
  std::vector<DiffusionTensor> tensors;
  tensors.reserve(config.fibers.size());
  for (const auto& f : config.fibers)
    tensors.push_back(DiffusionTensor::axially_symmetric(params.wm_axial, params.wm_radial, f.axis));

  Eigen::VectorXd s(static_cast<Eigen::Index>(table.size()));
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& e = table.entries[i];
    const double b = e.bvalue < kB0Threshold ? 0.0 : e.bvalue;
    double wm = 0.0;
    for (std::size_t k = 0; k < tensors.size(); ++k)
      wm += config.fibers[k].fraction * (b == 0.0 ? 1.0 : tensor_signal(b, e.direction, tensors[k]));
    s(static_cast<Eigen::Index>(i)) = config.f_csf * std::exp(-b * params.csf) +
                                      config.f_gm * std::exp(-b * params.gm) + config.f_wm * wm;
  }
  return s;
}

Eigen::VectorXd add_rician_noise(const Eigen::VectorXd& signal, double snr, double s0,
                                 std::uint64_t seed, std::uint64_t index) {
  if (!(snr > 0)) throw std::invalid_argument("snr must be > 0");
  if (std::isinf(snr)) return signal;
  const double sigma = s0 / snr;
  auto rng = make_rng(seed, kStreamNoise, index);
  Eigen::VectorXd out(signal.size());
  for (Eigen::Index i = 0; i < signal.size(); ++i) {
    const double re = signal(i) + sigma * standard_normal(rng);
    const double im = sigma * standard_normal(rng);
    out(i) = std::sqrt(re * re + im * im);
  }
  return out;
}

void PhantomSpec::validate() const {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw std::invalid_argument("phantom dims must be >= 1");
  if (!(snr > 0)) throw std::invalid_argument("phantom snr must be > 0");
  if (!(age_weeks >= 26.0 && age_weeks <= 46.0)) throw std::invalid_argument("phantom age outside [26, 46]");
  const double total = rule.p_one + rule.p_two + rule.p_three;
  if (rule.p_one < 0 || rule.p_two < 0 || rule.p_three < 0 || std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("fiber-count proportions must be >= 0 and sum to 1");
  if (rule.min_separation_deg < 0 || rule.min_separation_deg > 90)
    throw std::invalid_argument("min_separation_deg must lie in [0, 90]");
}

std::vector<int> assign_fiber_counts(std::size_t n_wm, const AssignmentRule& rule, std::uint64_t seed) {
  const auto n1 = static_cast<std::size_t>(std::llround(rule.p_one * static_cast<double>(n_wm)));
  const auto n2 = std::min(n_wm - std::min(n1, n_wm),
                           static_cast<std::size_t>(std::llround(rule.p_two * static_cast<double>(n_wm))));
  std::vector<int> counts(n_wm, 3);
  std::fill_n(counts.begin(), std::min(n1, n_wm), 1);
  std::fill_n(counts.begin() + static_cast<std::ptrdiff_t>(std::min(n1, n_wm)), n2, 2);
  auto rng = make_rng(seed, kStreamCounts);
  for (std::size_t i = n_wm; i > 1; --i) std::swap(counts[i - 1], counts[uniform_index(rng, i)]);
  return counts;
}

SignalVolume generate_phantom(const PhantomSpec& spec, const GradientTable& table) {
  spec.validate();
  table.validate();
  const auto b0 = table.b0_indices();
  const TissueParams params = tissue_params_at_age(spec.age_weeks);

  SignalVolume out;
  out.table = table;
  out.volume = Volume(spec.dims, static_cast<int>(table.size()));
  out.volume.voxel_size = spec.voxel_size;
  for (int k = 0; k < 3; ++k) out.volume.affine(k, k) = spec.voxel_size[k];
  const std::size_t nvox = spec.dims.voxels();
  out.labels.resize(nvox);
  std::vector<std::size_t> wm_voxels;
  for (std::size_t i = 0; i < nvox; ++i) {
    const auto [x, y, z] = spec.dims.coords(i);
    out.labels[i] = classify(spec.dims, x, y, z);
    if (out.labels[i] == TissueClass::wm) wm_voxels.push_back(i);
  }
  const auto counts = assign_fiber_counts(wm_voxels.size(), spec.rule, spec.seed);
  std::vector<int> fiber_count(nvox, 0);
  for (std::size_t k = 0; k < wm_voxels.size(); ++k) fiber_count[wm_voxels[k]] = counts[k];

  std::vector<FiberConfig> truth(nvox);
  for (std::size_t i = 0; i < nvox; ++i) {
    auto rng = make_rng(spec.seed, kStreamConfig, i);
    FiberConfig& c = truth[i];
    switch (out.labels[i]) {
      case TissueClass::wm: {
        c.f_wm = uniform(rng, 0.7, 0.95);
        const double rest = 1.0 - c.f_wm;
        const double u = uniform01(rng);
        c.f_gm = rest * u;
        c.f_csf = rest - c.f_gm;
        c.fibers = draw_fibers(fiber_count[i], spec.rule.min_separation_deg, rng);
        break;
      }
      case TissueClass::gm:
        c.f_wm = 0.0;
        c.f_gm = uniform(rng, 0.7, 0.95);
        c.f_csf = 1.0 - c.f_gm;
        break;
      case TissueClass::csf:
        c.f_wm = 0.0;
        c.f_csf = uniform(rng, 0.85, 1.0);
        c.f_gm = 1.0 - c.f_csf;
        break;
    }
    Eigen::VectorXd s = simulate_voxel(c, table, params);
    double s0 = 1.0;
    if (!b0.empty()) {
      s0 = 0.0;
      for (auto j : b0) s0 += s(static_cast<Eigen::Index>(j));
      s0 /= static_cast<double>(b0.size());
    }
    out.volume.voxel(i) = add_rician_noise(s, spec.snr, s0, spec.seed, i);
  }
  out.truth = std::move(truth);
  return out;
}

Mask wm_mask(const SignalVolume& vol) {
  Mask m(vol.volume.dims.voxels(), 0);
  for (std::size_t i = 0; i < vol.labels.size(); ++i) m[i] = vol.labels[i] == TissueClass::wm ? 1 : 0;
  return m;
}

B0NormalizeResult b0_normalize(const SignalVolume& volume) {
  const auto b0 = volume.table.b0_indices();
  if (b0.empty()) throw std::invalid_argument("b0_normalize: no b=0 measurement");
  const auto ref = static_cast<Eigen::Index>(b0.front());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < volume.table.size(); ++i)
    if (!volume.table.is_b0(i)) keep.push_back(i);

  B0NormalizeResult res;
  SignalVolume& out = res.volume;
  out.table = volume.table.subset(keep);
  out.truth = volume.truth;
  out.labels = volume.labels;
  out.volume = volume.volume;
  out.volume.data.resize(static_cast<Eigen::Index>(keep.size()), volume.volume.data.cols());
  for (Eigen::Index v = 0; v < volume.volume.data.cols(); ++v) {
    const double s0 = volume.volume.data(ref, v);
    if (!(s0 > 0.0)) {
      out.volume.data.col(v).setZero();
      res.flagged_voxels.push_back(static_cast<std::size_t>(v));
      continue;
    }
    for (std::size_t k = 0; k < keep.size(); ++k)
      out.volume.data(static_cast<Eigen::Index>(k), v) = volume.volume.data(static_cast<Eigen::Index>(keep[k]), v) / s0;
  }
  return res;
}

DiffusionTensor dti_fit(const Eigen::VectorXd& signal, const GradientTable& table) {
  if (static_cast<std::size_t>(signal.size()) != table.size())
    throw std::invalid_argument("dti_fit: signal length does not match gradient table");
  std::vector<Eigen::Index> rows;
  int weighted = 0, unweighted = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!(signal(static_cast<Eigen::Index>(i)) > 0.0)) continue;
    rows.push_back(static_cast<Eigen::Index>(i));
    (table.is_b0(i) ? unweighted : weighted)++;
  }
  if (weighted < 6 || unweighted < 1)
    throw InfeasibleError("dti_fit needs >= 6 weighted and >= 1 unweighted positive samples");

  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), 7);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& e = table.entries[static_cast<std::size_t>(rows[k])];
    const double b = table.is_b0(static_cast<std::size_t>(rows[k])) ? 0.0 : e.bvalue;
    const Direction& g = e.direction;
    const auto r = static_cast<Eigen::Index>(k);
    X(r, 0) = 1.0;
    X(r, 1) = -b * g.x() * g.x();
    X(r, 2) = -b * g.y() * g.y();
    X(r, 3) = -b * g.z() * g.z();
    X(r, 4) = -2.0 * b * g.x() * g.y();
    X(r, 5) = -2.0 * b * g.x() * g.z();
    X(r, 6) = -2.0 * b * g.y() * g.z();
    y(r) = std::log(signal(rows[k]));
  }
  const Eigen::VectorXd c = X.colPivHouseholderQr().solve(y);
  Eigen::Matrix3d D;
  D << c(1), c(4), c(5), c(4), c(2), c(6), c(5), c(6), c(3);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(D);
  DiffusionTensor t;
  for (int k = 0; k < 3; ++k) {
    t.eigenvalues(k) = std::max(1e-9, es.eigenvalues()(2 - k));
    t.eigenvectors.col(k) = es.eigenvectors().col(2 - k);
  }
  return t;
}

double fractional_anisotropy(const DiffusionTensor& tensor) {
  const Eigen::Vector3d& l = tensor.eigenvalues;
  const double norm = l.norm();
  if (norm <= 0.0) return 0.0;
  const double mean = l.mean();
  return std::clamp(std::sqrt(1.5) * (l.array() - mean).matrix().norm() / norm, 0.0, 1.0);
}

ZonalResponse response_from_model(double axial, double radial, double bvalue, int order) {
  n_coeffs(order);  // validates order
  static const GaussRule rule = gauss_legendre(96);
  ZonalResponse r = ZonalResponse::Zero(order / 2 + 1);
  for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
    const double t = rule.nodes[q];
    const double s = std::exp(-bvalue * (radial + (axial - radial) * t * t));
    for (int l = 0; l <= order; l += 2)
      r(l / 2) += rule.weights[q] * s * std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi)) * legendre(l, t);
  }
  return r * (2.0 * std::numbers::pi);
}

ZonalResponse isotropic_response(double diffusivity, double bvalue) {
  ZonalResponse r(1);
  r(0) = 2.0 * kSqrtPi * std::exp(-bvalue * diffusivity);
  return r;
}

Eigen::VectorXd convolution_factors(const ZonalResponse& response, int order) {
  const auto degrees = sh_degrees(order);
  Eigen::VectorXd f(static_cast<Eigen::Index>(degrees.size()));
  for (std::size_t j = 0; j < degrees.size(); ++j) {
    const int l = degrees[j];
    const double rl = (l / 2 < response.size()) ? response(l / 2) : 0.0;
    f(static_cast<Eigen::Index>(j)) = rl * std::sqrt(4.0 * std::numbers::pi / (2.0 * l + 1.0));
  }
  return f;
}

Eigen::VectorXd fod_to_signal(const ShCoefficients& fod, const ZonalResponse& response,
                              const Directions& dirs) {
  const Eigen::VectorXd conv = fod.values.cwiseProduct(convolution_factors(response, fod.basis.order));
  return sh_eval(ShCoefficients(fod.basis.order, conv), dirs);
}

const ZonalResponse& ResponseSet::get(Tissue t, double bvalue) const {
  const auto& table = t == Tissue::wm ? wm : (t == Tissue::gm ? gm : csf);
  const auto it = table.find(shell_of(bvalue));
  if (it == table.end())
    throw std::invalid_argument("no response for shell b=" + std::to_string(shell_of(bvalue)));
  return it->second;
}

bool ResponseSet::covers(const std::vector<double>& shells) const {
  for (double b : shells) {
    const double s = shell_of(b);
    if (!wm.count(s) || !gm.count(s) || !csf.count(s)) return false;
  }
  return true;
}

ResponseSet responses_from_tissue(const TissueParams& params, const std::vector<double>& shells,
                                  int wm_order) {
  ResponseSet rs;
  for (double b : shells) {
    const double s = shell_of(b);
    rs.wm[s] = response_from_model(params.wm_axial, params.wm_radial, s, wm_order);
    rs.gm[s] = isotropic_response(params.gm, s);
    rs.csf[s] = isotropic_response(params.csf, s);
  }
  return rs;
}

GradientTable default_multishell_table() {
  struct Shell {
    double b;
    Directions dirs;
    std::size_t taken = 0;
  };
  std::vector<Shell> shells{{400.0, hemisphere_directions(64, 0.3)},
                            {1000.0, hemisphere_directions(88, 1.1)},
                            {2600.0, hemisphere_directions(128, 2.3)}};
  GradientTable t;
  std::size_t weighted = 0;
  const std::size_t total = 64 + 88 + 128;
  while (weighted < total) {
    if (weighted % 14 == 0) t.entries.push_back({Direction::Zero(), 0.0});
    // Pick the shell that is furthest behind its share.
    Shell* pick = nullptr;
    double lag = 2.0;
    for (auto& s : shells) {
      if (s.taken == s.dirs.size()) continue;
      const double progress = (static_cast<double>(s.taken) + 0.5) / static_cast<double>(s.dirs.size());
      if (progress < lag) {
        lag = progress;
        pick = &s;
      }
    }
    t.entries.push_back({pick->dirs[pick->taken++], pick->b});
    ++weighted;
  }
  return t;
}

}  // namespace fodkit
