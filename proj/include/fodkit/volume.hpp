#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace fodkit {

struct Dims {
  int nx = 1, ny = 1, nz = 1;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  /// x runs fastest, matching the NIfTI voxel order.
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
  }
  std::array<int, 3> coords(std::size_t i) const {
    const int x = static_cast<int>(i % nx);
    const int y = static_cast<int>((i / nx) % ny);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(nx) * ny));
    return {x, y, z};
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

enum class DataType : std::int16_t { float32 = 16, float64 = 64 };

/// Multi-channel image. `data` holds one column per voxel (channels x voxels).
struct Volume {
  Dims dims;
  std::array<double, 3> voxel_size{1.5, 1.5, 1.5};
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  DataType dtype = DataType::float64;
  Eigen::MatrixXd data;

  Volume() = default;
  Volume(Dims d, int channels) : dims(d), data(Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(d.voxels()))) {
    for (int k = 0; k < 3; ++k) affine(k, k) = voxel_size[k];
  }
  int channels() const { return static_cast<int>(data.rows()); }
  auto voxel(std::size_t i) { return data.col(static_cast<Eigen::Index>(i)); }
  auto voxel(std::size_t i) const { return data.col(static_cast<Eigen::Index>(i)); }
};

/// Per-voxel boolean mask, same voxel order as Volume.
using Mask = std::vector<std::uint8_t>;

inline Mask full_mask(const Dims& d) { return Mask(d.voxels(), 1); }

inline std::size_t mask_count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m) n += v ? 1 : 0;
  return n;
}

}  // namespace fodkit
