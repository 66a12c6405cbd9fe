#pragma once

#include "fodkit/volume.hpp"

#include <string>
#include <string_view>

namespace fodkit {

/// Native layout (all little-endian):
///   0   char[8]    "FODKVOL1"
///   8   int32[4]   nx, ny, nz, channels
///   24  int16      data type code (16 = float32, 64 = float64)
///   26  int16      reserved, 0
///   28  float64[3] voxel size (mm)
///   52  float64[16] affine, row-major
///   180 uint64     payload size in bytes
///   188 payload, voxel-major (x fastest), channels interleaved per voxel
inline constexpr std::size_t kNativeHeaderSize = 188;

enum class VolumeFormat { native, nifti };

/// Chosen from the extension: ".nii" selects NIfTI-1, anything else native.
VolumeFormat format_for_path(const std::string& path);

std::string encode_native(const Volume& v);
std::string encode_nifti(const Volume& v);

/// Detects the format from the leading bytes. Throws VolumeError.
Volume decode_volume(std::string_view bytes);

Volume read_volume(const std::string& path);
void write_volume(const std::string& path, const Volume& v);
void write_volume(const std::string& path, const Volume& v, VolumeFormat format);

}  // namespace fodkit
