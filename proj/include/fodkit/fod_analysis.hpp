#pragma once

#include "fodkit/sphere_sh.hpp"
#include "fodkit/volume.hpp"

#include <vector>

namespace fodkit {

struct Peak {
  Direction axis = Direction::UnitZ();  // canonical: z >= 0, then y >= 0, then x >= 0
  double amplitude = 0.0;
};

/// Up to max_peaks peaks, sorted by descending amplitude.
struct PeakSet {
  std::vector<Peak> peaks;

  std::size_t size() const { return peaks.size(); }
  bool empty() const { return peaks.empty(); }
};

struct PeakOptions {
  double min_separation_deg = 45.0;
  double relative_threshold = 0.5;
  int max_peaks = 3;
  int newton_iterations = 10;
  double max_step_deg = 5.0;
};

/// Representative of the axis {v, -v}.
Direction canonical_axis(const Direction& v);

/// Extracts peaks by seeding from mesh vertices that dominate their 1-ring and
/// refining each seed with Riemannian Newton steps. The evaluation matrix for
/// the mesh is built once, so reuse one extractor across voxels.
class PeakExtractor {
 public:
  PeakExtractor(const SphereMesh& mesh, int order, PeakOptions opts = {});
  PeakSet extract(const ShCoefficients& fod) const;
  const PeakOptions& options() const { return opts_; }

 private:
  SphereMesh mesh_;
  PeakOptions opts_;
  Eigen::MatrixXd basis_;  // mesh vertices x coefficients
};

PeakSet extract_peaks(const ShCoefficients& fod, const SphereMesh& mesh, const PeakOptions& opts = {});

/// Sphere integral of the FOD, c_00 * 2 sqrt(pi).
double afd_total(const ShCoefficients& fod);

/// 12-channel peaks volume: per voxel up to 3 (x, y, z, amplitude) groups,
/// zero-padded. Only masked voxels are processed.
inline constexpr int kPeakChannels = 12;
Volume peaks_volume(const Volume& fod, int order, const PeakExtractor& extractor, const Mask& mask,
                    int threads = 0);
std::vector<PeakSet> peaks_from_volume(const Volume& peaks);

/// Per-voxel AFD (one channel).
Volume afd_volume(const Volume& fod);

}  // namespace fodkit
