#include "lesionforge/nifti.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

namespace lesionforge {

namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kFloat32 = 16,
  kFloat64 = 64,
};

struct GzCloser {
  void operator()(gzFile f) const {
    if (f != nullptr) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

// gzopen reads plain files transparently, so one code path covers .nii too.
GzHandle open_read(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void read_exact(gzFile f, void* dst, std::size_t n,
                const std::filesystem::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1U << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw FormatError("truncated NIfTI file " + path.string());
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <typename T>
T field(const std::array<unsigned char, kHeaderSize>& h, int offset) {
  T v;
  std::memcpy(&v, h.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void put(std::array<unsigned char, kHeaderSize>& h, int offset, T v) {
  std::memcpy(h.data() + offset, &v, sizeof(T));
}

struct Header {
  Grid grid;
  std::int16_t datatype = 0;
  double vox_offset = kVoxOffset;
  double slope = 0.0;
  double inter = 0.0;
};

Eigen::Matrix4d qform_affine(const std::array<unsigned char, kHeaderSize>& h,
                             const Eigen::Vector3d& spacing) {
  const double b = field<float>(h, 256);
  const double c = field<float>(h, 260);
  const double d = field<float>(h, 264);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  double qfac = field<float>(h, 76);
  if (qfac == 0.0) qfac = 1.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  Eigen::Vector3d s = spacing;
  s.z() *= qfac;
  m.topLeftCorner<3, 3>() = r * s.asDiagonal();
  m(0, 3) = field<float>(h, 268);
  m(1, 3) = field<float>(h, 272);
  m(2, 3) = field<float>(h, 276);
  return m;
}

Header parse_header(const std::array<unsigned char, kHeaderSize>& h,
                    const std::filesystem::path& path) {
  const auto sizeof_hdr = field<std::int32_t>(h, 0);
  if (sizeof_hdr != kHeaderSize) {
    if (sizeof_hdr == 0x5C010000) {
      throw UnsupportedError("big-endian NIfTI not supported: " + path.string());
    }
    throw FormatError("bad sizeof_hdr in " + path.string());
  }
  if (std::memcmp(h.data() + 344, "n+1\0", 4) != 0) {
    throw FormatError("bad NIfTI magic (expected \"n+1\") in " + path.string());
  }

  const auto ndim = field<std::int16_t>(h, 40);
  if (ndim < 1 || ndim > 7) throw FormatError("bad dim[0] in " + path.string());
  Index3 dims{1, 1, 1};
  for (int a = 0; a < ndim; ++a) {
    const auto n = field<std::int16_t>(h, 42 + 2 * a);
    if (n <= 0) throw FormatError("non-positive dim in " + path.string());
    if (a < 3) {
      dims[a] = n;
    } else if (n != 1) {
      throw UnsupportedError("multi-frame NIfTI not supported: " + path.string());
    }
  }

  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  for (int a = 0; a < std::min<int>(ndim, 3); ++a) {
    spacing[a] = std::abs(static_cast<double>(field<float>(h, 80 + 4 * a)));
  }
  if (!((spacing.array() > 0.0).all()) || !spacing.allFinite()) {
    throw FormatError("non-positive pixdim in " + path.string());
  }

  Header out;
  out.datatype = field<std::int16_t>(h, 70);
  switch (out.datatype) {
    case kUint8:
    case kInt16:
    case kFloat32:
    case kFloat64:
      break;
    default:
      throw UnsupportedError("unsupported NIfTI datatype " +
                             std::to_string(out.datatype) + " in " + path.string());
  }
  out.vox_offset = field<float>(h, 108);
  if (out.vox_offset < kVoxOffset) out.vox_offset = kVoxOffset;
  out.slope = field<float>(h, 112);
  out.inter = field<float>(h, 116);

  std::optional<Eigen::Matrix4d> affine;
  if (field<std::int16_t>(h, 254) > 0) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = field<float>(h, 280 + 16 * r + 4 * c);
    affine = m;
  } else if (field<std::int16_t>(h, 252) > 0) {
    affine = qform_affine(h, spacing);
  }
  out.grid = Grid(dims, spacing, affine);
  return out;
}

template <typename T>
void decode(const std::vector<unsigned char>& raw, Eigen::ArrayXd& out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

std::size_t datatype_size(std::int16_t dt) {
  switch (dt) {
    case kUint8: return 1;
    case kInt16: return 2;
    case kFloat32: return 4;
    default: return 8;
  }
}

bool is_gz(const std::filesystem::path& path) { return path.extension() == ".gz"; }

void write_file(const std::filesystem::path& path, const Grid& g,
                std::int16_t datatype, const std::vector<unsigned char>& payload) {
  std::array<unsigned char, kHeaderSize> h{};
  put<std::int32_t>(h, 0, kHeaderSize);
  put<std::int16_t>(h, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(h, 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(h, 42 + 2 * a, 1);
  put<std::int16_t>(h, 70, datatype);
  put<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * datatype_size(datatype)));
  put<float>(h, 76, 1.0F);
  for (int a = 0; a < 3; ++a) put<float>(h, 80 + 4 * a, static_cast<float>(g.spacing[a]));
  put<float>(h, 108, static_cast<float>(kVoxOffset));
  put<float>(h, 112, 1.0F);
  put<float>(h, 116, 0.0F);
  h[123] = 2;  // xyzt_units: mm
  if (g.affine) {
    put<std::int16_t>(h, 254, 2);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        put<float>(h, 280 + 16 * r + 4 * c, static_cast<float>((*g.affine)(r, c)));
  }
  std::memcpy(h.data() + 344, "n+1\0", 4);

  const std::array<unsigned char, 4> extension{};
  const std::string mode = is_gz(path) ? "wb6" : "wbT";
  GzHandle f(gzopen(path.c_str(), mode.c_str()));
  if (!f) throw IoError("cannot open for writing: " + path.string());
  auto write = [&](const void* p, std::size_t n) {
    if (n == 0) return;
    if (gzwrite(f.get(), p, static_cast<unsigned>(n)) != static_cast<int>(n)) {
      throw IoError("write failed: " + path.string());
    }
  };
  write(h.data(), h.size());
  write(extension.data(), extension.size());
  write(payload.data(), payload.size());
  if (gzclose(f.release()) != Z_OK) throw IoError("close failed: " + path.string());
}

}  // namespace

Grid read_nifti_grid(const std::filesystem::path& path) {
  auto f = open_read(path);
  std::array<unsigned char, kHeaderSize> h{};
  read_exact(f.get(), h.data(), h.size(), path);
  return parse_header(h, path).grid;
}

Volume load_nifti(const std::filesystem::path& path) {
  auto f = open_read(path);
  std::array<unsigned char, kHeaderSize> h{};
  read_exact(f.get(), h.data(), h.size(), path);
  const Header hdr = parse_header(h, path);

  const auto skip = static_cast<std::size_t>(hdr.vox_offset) - kHeaderSize;
  std::vector<unsigned char> pad(skip);
  read_exact(f.get(), pad.data(), skip, path);

  const auto n = static_cast<std::size_t>(hdr.grid.size());
  std::vector<unsigned char> raw(n * datatype_size(hdr.datatype));
  read_exact(f.get(), raw.data(), raw.size(), path);

  Eigen::ArrayXd data(static_cast<Eigen::Index>(n));
  switch (hdr.datatype) {
    case kUint8: decode<std::uint8_t>(raw, data); break;
    case kInt16: decode<std::int16_t>(raw, data); break;
    case kFloat32: decode<float>(raw, data); break;
    default: decode<double>(raw, data); break;
  }
  if (hdr.slope != 0.0 && (hdr.slope != 1.0 || hdr.inter != 0.0)) {
    data = data * hdr.slope + hdr.inter;
  }
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      const Index3 c = hdr.grid.coords(i);
      throw ValidationError("non-finite voxel at index (" + std::to_string(c[0]) +
                            ", " + std::to_string(c[1]) + ", " +
                            std::to_string(c[2]) + ") in " + path.string());
    }
  }
  return Volume(hdr.grid, std::move(data));
}

Mask load_mask(const std::filesystem::path& path) {
  try {
    return to_mask(load_nifti(path));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(e.what()) + " (" + path.string() + ")");
  }
}

void save_nifti(const Volume& v, const std::filesystem::path& path) {
  std::vector<unsigned char> payload(static_cast<std::size_t>(v.size()) * 4);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto x = static_cast<float>(v[i]);
    std::memcpy(payload.data() + 4 * i, &x, 4);
  }
  write_file(path, v.grid(), kFloat32, payload);
}

void save_nifti(const Mask& m, const std::filesystem::path& path) {
  std::vector<unsigned char> payload(m.data().data(), m.data().data() + m.size());
  write_file(path, m.grid(), kUint8, payload);
}

}  // namespace lesionforge
