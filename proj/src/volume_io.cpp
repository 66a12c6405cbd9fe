#include "fodkit/volume_io.hpp"

#include "fodkit/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>

namespace fodkit {

const char* to_string(VolumeErrc code) {
  switch (code) {
    case VolumeErrc::io_error: return "io_error";
    case VolumeErrc::malformed_header: return "malformed_header";
    case VolumeErrc::truncated_payload: return "truncated_payload";
    case VolumeErrc::unsupported_datatype: return "unsupported_datatype";
    case VolumeErrc::unsupported_feature: return "unsupported_feature";
  }
  return "unknown";
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

constexpr char kNativeMagic[8] = {'F', 'O', 'D', 'K', 'V', 'O', 'L', '1'};
constexpr std::size_t kNiftiHeader = 348;
constexpr std::size_t kNiftiOffset = 352;
// Refuse anything that would not fit comfortably in memory.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

template <class T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    v = byteswap_if_big(v);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void pad_to(std::size_t n) { buf_.resize(n, '\0'); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked little-endian reads from a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::size_t size() const { return b_.size(); }
  template <class T>
  T get(std::size_t offset, VolumeErrc err = VolumeErrc::malformed_header) const {
    if (offset > b_.size() || b_.size() - offset < sizeof(T)) throw VolumeError(err, "header field out of range");
    T v;
    std::memcpy(&v, b_.data() + offset, sizeof v);
    return byteswap_if_big(v);
  }

 private:
  std::string_view b_;
};

std::size_t element_size(DataType t) { return t == DataType::float32 ? 4 : 8; }

std::optional<DataType> datatype_from_code(int code) {
  if (code == 16) return DataType::float32;
  if (code == 64) return DataType::float64;
  return std::nullopt;
}

void put_element(Writer& w, DataType t, double v) {
  if (t == DataType::float32)
    w.put(static_cast<float>(v));
  else
    w.put(v);
}

double get_element(const Reader& r, DataType t, std::size_t offset) {
  if (t == DataType::float32) return static_cast<double>(r.get<float>(offset, VolumeErrc::truncated_payload));
  return r.get<double>(offset, VolumeErrc::truncated_payload);
}

std::uint64_t element_count(std::int64_t nx, std::int64_t ny, std::int64_t nz, std::int64_t nc) {
  if (nx < 1 || ny < 1 || nz < 1 || nc < 1) throw VolumeError(VolumeErrc::malformed_header, "non-positive dimension");
  const std::uint64_t n = static_cast<std::uint64_t>(nx) * static_cast<std::uint64_t>(ny);
  if (n > kMaxElements) throw VolumeError(VolumeErrc::malformed_header, "dimensions too large");
  const std::uint64_t m = n * static_cast<std::uint64_t>(nz);
  if (m > kMaxElements) throw VolumeError(VolumeErrc::malformed_header, "dimensions too large");
  const std::uint64_t total = m * static_cast<std::uint64_t>(nc);
  if (total > kMaxElements) throw VolumeError(VolumeErrc::malformed_header, "dimensions too large");
  return total;
}

void check_volume(const Volume& v) {
  if (v.data.cols() != static_cast<Eigen::Index>(v.dims.voxels()) || v.data.rows() < 1)
    throw std::invalid_argument("write_volume: data does not match dims");
}

// ---------------------------------------------------------------------------

Volume decode_native(std::string_view bytes) {
  const Reader r(bytes);
  if (bytes.size() < kNativeHeaderSize) throw VolumeError(VolumeErrc::malformed_header, "native header too short");
  const auto nx = r.get<std::int32_t>(8), ny = r.get<std::int32_t>(12), nz = r.get<std::int32_t>(16),
             nc = r.get<std::int32_t>(20);
  const std::uint64_t n = element_count(nx, ny, nz, nc);
  const auto code = r.get<std::int16_t>(24);
  const auto dtype = datatype_from_code(code);
  if (!dtype) throw VolumeError(VolumeErrc::unsupported_datatype, "data type code " + std::to_string(code));
  if (r.get<std::int16_t>(26) != 0) throw VolumeError(VolumeErrc::malformed_header, "reserved field is not zero");
  const auto payload = r.get<std::uint64_t>(180);
  const std::uint64_t expected = n * element_size(*dtype);
  if (payload != expected)
    throw VolumeError(VolumeErrc::malformed_header, "declared payload size does not match dimensions");
  if (bytes.size() - kNativeHeaderSize != expected)
    throw VolumeError(VolumeErrc::truncated_payload, "payload holds " + std::to_string(bytes.size() - kNativeHeaderSize) +
                                                         " bytes, expected " + std::to_string(expected));

  Volume v(Dims{nx, ny, nz}, nc);
  v.dtype = *dtype;
  for (int k = 0; k < 3; ++k) {
    v.voxel_size[static_cast<std::size_t>(k)] = r.get<double>(28 + 8 * static_cast<std::size_t>(k));
    if (!std::isfinite(v.voxel_size[static_cast<std::size_t>(k)]))
      throw VolumeError(VolumeErrc::malformed_header, "non-finite voxel size");
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) v.affine(i, j) = r.get<double>(52 + 8 * static_cast<std::size_t>(4 * i + j));
  const std::size_t es = element_size(*dtype);
  std::size_t off = kNativeHeaderSize;
  for (Eigen::Index col = 0; col < v.data.cols(); ++col)
    for (Eigen::Index ch = 0; ch < v.data.rows(); ++ch, off += es) v.data(ch, col) = get_element(r, *dtype, off);
  return v;
}

// ---------------------------------------------------------------------------

Volume decode_nifti(std::string_view bytes) {
  const Reader r(bytes);
  if (bytes.size() < kNiftiHeader) throw VolumeError(VolumeErrc::malformed_header, "NIfTI header too short");
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    if (std::memcmp(bytes.data() + 344, "ni1\0", 4) == 0)
      throw VolumeError(VolumeErrc::unsupported_feature, "two-file NIfTI (.hdr/.img) is not supported");
    throw VolumeError(VolumeErrc::malformed_header, "bad NIfTI magic");
  }
  std::array<std::int16_t, 8> dim{};
  for (std::size_t k = 0; k < 8; ++k) dim[k] = r.get<std::int16_t>(40 + 2 * k);
  if (dim[0] < 1 || dim[0] > 7) throw VolumeError(VolumeErrc::malformed_header, "dim[0] out of range");
  for (int k = 5; k <= dim[0]; ++k)
    if (dim[static_cast<std::size_t>(k)] != 1)
      throw VolumeError(VolumeErrc::unsupported_feature, "more than four dimensions");
  auto d = [&](int k) { return k <= dim[0] ? static_cast<std::int64_t>(dim[static_cast<std::size_t>(k)]) : 1; };
  const std::uint64_t n = element_count(d(1), d(2), d(3), d(4));

  const auto code = r.get<std::int16_t>(70);
  const auto dtype = datatype_from_code(code);
  if (!dtype) throw VolumeError(VolumeErrc::unsupported_datatype, "NIfTI datatype " + std::to_string(code));
  const auto bitpix = r.get<std::int16_t>(72);
  if (static_cast<std::size_t>(bitpix) != 8 * element_size(*dtype))
    throw VolumeError(VolumeErrc::malformed_header, "bitpix does not match datatype");

  const float vox_offset = r.get<float>(108);
  if (!std::isfinite(vox_offset) || vox_offset < static_cast<float>(kNiftiOffset) || vox_offset != std::floor(vox_offset) ||
      vox_offset > 1e9f)
    throw VolumeError(VolumeErrc::malformed_header, "invalid vox_offset");
  const float slope = r.get<float>(112), inter = r.get<float>(116);
  if (!std::isfinite(slope) || !std::isfinite(inter))
    throw VolumeError(VolumeErrc::malformed_header, "non-finite intensity scaling");
  if ((slope != 0.0f && slope != 1.0f) || inter != 0.0f)
    throw VolumeError(VolumeErrc::unsupported_feature, "intensity scaling (scl_slope/scl_inter) is not supported");

  const auto offset = static_cast<std::size_t>(vox_offset);
  const std::size_t es = element_size(*dtype);
  if (offset > bytes.size() || bytes.size() - offset < n * es)
    throw VolumeError(VolumeErrc::truncated_payload, "NIfTI payload shorter than dimensions require");
  Volume v(Dims{static_cast<int>(d(1)), static_cast<int>(d(2)), static_cast<int>(d(3))}, static_cast<int>(d(4)));
  v.dtype = *dtype;
  for (std::size_t k = 0; k < 3; ++k) {
    const float p = r.get<float>(76 + 4 * (k + 1));
    if (!std::isfinite(p)) throw VolumeError(VolumeErrc::malformed_header, "non-finite pixdim");
    v.voxel_size[k] = std::abs(static_cast<double>(p));
  }
  const auto sform = r.get<std::int16_t>(254);
  v.affine.setIdentity();
  if (sform > 0) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const float a = r.get<float>(280 + 16 * i + 4 * j);
        if (!std::isfinite(a)) throw VolumeError(VolumeErrc::malformed_header, "non-finite sform");
        v.affine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a;
      }
  } else {
    for (int k = 0; k < 3; ++k) v.affine(k, k) = v.voxel_size[static_cast<std::size_t>(k)];
  }

  // NIfTI stores each channel as a contiguous 3-D image.
  std::size_t off = offset;
  for (Eigen::Index ch = 0; ch < v.data.rows(); ++ch)
    for (Eigen::Index col = 0; col < v.data.cols(); ++col, off += es) v.data(ch, col) = get_element(r, *dtype, off);
  return v;
}

}  // namespace

VolumeFormat format_for_path(const std::string& path) {
  const auto ends_with = [&](const char* s) {
    const std::size_t n = std::strlen(s);
    return path.size() >= n && path.compare(path.size() - n, n, s) == 0;
  };
  return ends_with(".nii") ? VolumeFormat::nifti : VolumeFormat::native;
}

std::string encode_native(const Volume& v) {
  check_volume(v);
  Writer w;
  w.raw(kNativeMagic, sizeof kNativeMagic);
  w.put<std::int32_t>(v.dims.nx);
  w.put<std::int32_t>(v.dims.ny);
  w.put<std::int32_t>(v.dims.nz);
  w.put<std::int32_t>(v.channels());
  w.put<std::int16_t>(static_cast<std::int16_t>(v.dtype));
  w.put<std::int16_t>(0);
  for (double s : v.voxel_size) w.put(s);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) w.put(v.affine(i, j));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(v.data.size()) * element_size(v.dtype));
  for (Eigen::Index col = 0; col < v.data.cols(); ++col)
    for (Eigen::Index ch = 0; ch < v.data.rows(); ++ch) put_element(w, v.dtype, v.data(ch, col));
  return std::move(w.str());
}

std::string encode_nifti(const Volume& v) {
  check_volume(v);
  if (v.dims.nx > 32767 || v.dims.ny > 32767 || v.dims.nz > 32767 || v.channels() > 32767)
    throw VolumeError(VolumeErrc::unsupported_feature, "dimension exceeds the NIfTI-1 int16 limit");
  Writer w;
  w.put<std::int32_t>(static_cast<std::int32_t>(kNiftiHeader));
  w.pad_to(40);
  const std::int16_t ndim = v.channels() > 1 ? 4 : 3;
  const std::array<std::int16_t, 8> dim{ndim,
                                        static_cast<std::int16_t>(v.dims.nx),
                                        static_cast<std::int16_t>(v.dims.ny),
                                        static_cast<std::int16_t>(v.dims.nz),
                                        static_cast<std::int16_t>(v.channels()),
                                        1,
                                        1,
                                        1};
  for (auto x : dim) w.put(x);
  w.pad_to(70);
  w.put<std::int16_t>(static_cast<std::int16_t>(v.dtype));
  w.put<std::int16_t>(static_cast<std::int16_t>(8 * element_size(v.dtype)));
  w.pad_to(76);
  w.put<float>(1.0f);  // qfac
  for (double s : v.voxel_size) w.put(static_cast<float>(s));
  for (int k = 4; k < 8; ++k) w.put<float>(k == 4 ? 1.0f : 0.0f);
  w.put<float>(static_cast<float>(kNiftiOffset));
  w.put<float>(1.0f);  // scl_slope
  w.put<float>(0.0f);  // scl_inter
  w.pad_to(123);
  w.put<char>(10);  // xyzt_units: mm, seconds
  w.pad_to(252);
  w.put<std::int16_t>(0);  // qform_code
  w.put<std::int16_t>(1);  // sform_code: scanner
  w.pad_to(280);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) w.put(static_cast<float>(v.affine(i, j)));
  w.pad_to(344);
  w.raw("n+1\0", 4);
  w.pad_to(kNiftiOffset);  // empty extension block
  for (Eigen::Index ch = 0; ch < v.data.rows(); ++ch)
    for (Eigen::Index col = 0; col < v.data.cols(); ++col) put_element(w, v.dtype, v.data(ch, col));
  return std::move(w.str());
}

Volume decode_volume(std::string_view bytes) {
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kNativeMagic, 8) == 0) return decode_native(bytes);
  if (bytes.size() >= 4) {
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    sizeof_hdr = byteswap_if_big(sizeof_hdr);
    if (sizeof_hdr == static_cast<std::int32_t>(kNiftiHeader)) return decode_nifti(bytes);
    if (sizeof_hdr == 0x5c010000) throw VolumeError(VolumeErrc::unsupported_feature, "big-endian NIfTI is not supported");
    if (sizeof_hdr == 540 || sizeof_hdr == 0x1c020000)
      throw VolumeError(VolumeErrc::unsupported_feature, "NIfTI-2 is not supported");
  }
  throw VolumeError(VolumeErrc::malformed_header, "unrecognized volume format");
}

Volume read_volume(const std::string& path) {
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0)
    throw VolumeError(VolumeErrc::unsupported_feature, "compressed volumes are not supported: " + path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw VolumeError(VolumeErrc::io_error, "cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw VolumeError(VolumeErrc::io_error, "read failed: " + path);
  return decode_volume(ss.str());
}

void write_volume(const std::string& path, const Volume& v) { write_volume(path, v, format_for_path(path)); }

void write_volume(const std::string& path, const Volume& v, VolumeFormat format) {
  const std::string bytes = format == VolumeFormat::nifti ? encode_nifti(v) : encode_native(v);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw VolumeError(VolumeErrc::io_error, "cannot create " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw VolumeError(VolumeErrc::io_error, "write failed: " + path);
}

}  // namespace fodkit
