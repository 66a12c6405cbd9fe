#pragma once

#include "fodkit/sphere_sh.hpp"
#include "fodkit/volume.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fodkit {

/// Diffusion tensor stored through its eigensystem. Eigenvalues are sorted in
/// descending order (mm^2/s) and the columns of `eigenvectors` match them.
struct DiffusionTensor {
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
  Eigen::Matrix3d eigenvectors = Eigen::Matrix3d::Identity();

  static DiffusionTensor axially_symmetric(double axial, double radial, const Direction& axis);
  static DiffusionTensor isotropic(double d);
  Eigen::Matrix3d matrix() const;
  Direction principal_axis() const { return eigenvectors.col(0); }
};

/// exp(-b * g^T D g)
double tensor_signal(double bvalue, const Direction& dir, const DiffusionTensor& tensor);

struct Fiber {
  Direction axis = Direction::UnitZ();
  double fraction = 1.0;
};

/// Tissue composition of a voxel. Fibers are empty only when f_wm == 0.
struct FiberConfig {
  std::vector<Fiber> fibers;
  double f_wm = 1.0;
  double f_gm = 0.0;
  double f_csf = 0.0;

  void validate(double min_separation_deg = 30.0) const;
};

/// Age-dependent compartment diffusivities (mm^2/s). Synthetic model values.
struct TissueParams {
  double wm_axial = 1.7e-3;
  double wm_radial = 0.2e-3;
  double gm = 0.9e-3;
  double csf = 3.0e-3;

  double wm_mean() const { return (wm_axial + 2.0 * wm_radial) / 3.0; }
};

/// Tissue model at post-menstrual age `weeks` (valid range [26, 46]).
TissueParams tissue_params_at_age(double weeks);

Eigen::VectorXd simulate_voxel(const FiberConfig& config, const GradientTable& table,
                               const TissueParams& params);

/// Rician magnitude noise with sigma = s0 / snr. snr = infinity returns the
/// input unchanged. Draws come from a counter-based stream (seed, index).
Eigen::VectorXd add_rician_noise(const Eigen::VectorXd& signal, double snr, double s0,
                                 std::uint64_t seed, std::uint64_t index = 0);

struct AssignmentRule {
  double p_one = 0.40;
  double p_two = 0.45;
  double p_three = 0.15;
  double min_separation_deg = 30.0;
};

struct PhantomSpec {
  Dims dims{20, 20, 10};
  std::array<double, 3> voxel_size{1.5, 1.5, 1.5};
  AssignmentRule rule;
  double snr = std::numeric_limits<double>::infinity();
  double age_weeks = 40.0;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class TissueClass : std::uint8_t { wm = 0, gm = 1, csf = 2 };

struct SignalVolume {
  Volume volume;  // channels = table.size()
  GradientTable table;
  std::optional<std::vector<FiberConfig>> truth;
  std::vector<TissueClass> labels;  // empty when unknown
};

/// Number of fibers assigned to each WM voxel under the rule: exact counts,
/// rounded, then shuffled.
std::vector<int> assign_fiber_counts(std::size_t n_wm, const AssignmentRule& rule, std::uint64_t seed);

SignalVolume generate_phantom(const PhantomSpec& spec, const GradientTable& table);

/// Mask of ground-truth WM voxels.
Mask wm_mask(const SignalVolume& vol);

struct B0NormalizeResult {
  SignalVolume volume;
  std::vector<std::size_t> flagged_voxels;  // zero or negative b0
};

B0NormalizeResult b0_normalize(const SignalVolume& volume);

DiffusionTensor dti_fit(const Eigen::VectorXd& signal, const GradientTable& table);
double fractional_anisotropy(const DiffusionTensor& tensor);

/// Zonal coefficients r_l for even l = 0..order (index l/2).
using ZonalResponse = Eigen::VectorXd;

/// Zonal projection of the single-tensor signal with axis +z at `bvalue`.
ZonalResponse response_from_model(double axial, double radial, double bvalue, int order);
ZonalResponse isotropic_response(double diffusivity, double bvalue);

/// Per-coefficient convolution factors r_l * sqrt(4 pi / (2l + 1)), expanded
/// to the packed layout of `order`. Missing degrees of the response count as 0.
Eigen::VectorXd convolution_factors(const ZonalResponse& response, int order);

Eigen::VectorXd fod_to_signal(const ShCoefficients& fod, const ZonalResponse& response,
                              const Directions& dirs);

enum class Tissue { wm, gm, csf };

/// Per-tissue, per-shell responses. Shell keys are shell_of(b).
struct ResponseSet {
  std::map<double, ZonalResponse> wm;
  std::map<double, ZonalResponse> gm;
  std::map<double, ZonalResponse> csf;

  const ZonalResponse& get(Tissue t, double bvalue) const;
  bool covers(const std::vector<double>& shells) const;
};

/// Responses derived analytically from the tissue model for every shell.
ResponseSet responses_from_tissue(const TissueParams& params, const std::vector<double>& shells,
                                  int wm_order = 8);

/// 20 b0, 64 b400, 88 b1000, 128 b2600 measurements, interleaved.
GradientTable default_multishell_table();

}  // namespace fodkit
