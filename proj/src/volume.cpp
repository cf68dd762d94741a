#include "lesionforge/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>
#include <tuple>

namespace lesionforge {

Grid::Grid(Index3 d, Eigen::Vector3d s, std::optional<Eigen::Matrix4d> a)
    : dims(d), spacing(std::move(s)), affine(std::move(a)) {
  for (int n : dims) {
    if (n <= 0) throw ValidationError("grid dims must be positive");
  }
  if ((spacing.array() <= 0.0).any() || !spacing.allFinite()) {
    throw ValidationError("grid spacing must be positive and finite");
  }
}

Connectivity connectivity_from_int(int n) {
  switch (n) {
    case 6: return Connectivity::Six;
    case 18: return Connectivity::Eighteen;
    case 26: return Connectivity::TwentySix;
    default:
      throw ArgumentError("connectivity must be 6, 18 or 26, got " +
                          std::to_string(n));
  }
}

namespace {

std::vector<Index3> make_offsets(int max_l1) {
  std::vector<Index3> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 > 0 && l1 <= max_l1) out.push_back({dx, dy, dz});
      }
  return out;
}

}  // namespace

const std::vector<Index3>& neighbor_offsets(Connectivity c) {
  static const std::vector<Index3> six = make_offsets(1);
  static const std::vector<Index3> eighteen = make_offsets(2);
  static const std::vector<Index3> twenty_six = make_offsets(3);
  switch (c) {
    case Connectivity::Six: return six;
    case Connectivity::Eighteen: return eighteen;
    case Connectivity::TwentySix: break;
  }
  return twenty_six;
}

void require_compatible(const Grid& a, const Grid& b, const char* what) {
  if (!a.compatible(b)) {
    throw ValidationError(std::string("grid mismatch: ") + what);
  }
}

Mask to_mask(const Volume& v) {
  Mask m(v.grid());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = v[i];
    if (x != 0.0 && x != 1.0) {
      throw ValidationError("mask is not binary at voxel " + std::to_string(i));
    }
    m[i] = x == 1.0 ? 1 : 0;
  }
  return m;
}

Volume to_volume(const Mask& m) {
  return Volume(m.grid(), m.data().cast<double>().eval());
}

Mask binarize(const Volume& v, double threshold) {
  return Mask(v.grid(), (v.data() >= threshold).cast<std::uint8_t>().eval());
}

Eigen::Index count(const Mask& m) {
  return m.data().cast<Eigen::Index>().sum();
}

double load_mm3(const Mask& m) {
  return static_cast<double>(count(m)) * m.grid().voxel_volume();
}

Mask mask_union(const Mask& a, const Mask& b) {
  require_compatible(a.grid(), b.grid(), "mask union");
  return Mask(a.grid(), a.data().max(b.data()).eval());
}

Mask mask_intersection(const Mask& a, const Mask& b) {
  require_compatible(a.grid(), b.grid(), "mask intersection");
  return Mask(a.grid(), a.data().min(b.data()).eval());
}

Mask mask_difference(const Mask& a, const Mask& b) {
  require_compatible(a.grid(), b.grid(), "mask difference");
  return Mask(a.grid(), (a.data() > b.data()).cast<std::uint8_t>().eval());
}

Mask mask_xor(const Mask& a, const Mask& b) {
  require_compatible(a.grid(), b.grid(), "mask xor");
  return Mask(a.grid(), (a.data() != b.data()).cast<std::uint8_t>().eval());
}

bool is_subset(const Mask& a, const Mask& b) {
  require_compatible(a.grid(), b.grid(), "mask subset");
  return (a.data() <= b.data()).all();
}

Mask mask_from_voxels(const Grid& grid, const std::vector<Eigen::Index>& voxels) {
  Mask m(grid);
  for (auto i : voxels) m[i] = 1;
  return m;
}

std::vector<Component> connected_components(const Mask& m,
                                            Connectivity connectivity) {
  const Grid& g = m.grid();
  const auto& offsets = neighbor_offsets(connectivity);
  std::vector<char> visited(static_cast<std::size_t>(g.size()), 0);
  std::vector<Component> comps;
  std::deque<Eigen::Index> queue;

  for (Eigen::Index seed = 0; seed < g.size(); ++seed) {
    if (m[seed] == 0 || visited[seed]) continue;
    Component c;
    c.bbox_min = g.coords(seed);
    c.bbox_max = c.bbox_min;
    visited[seed] = 1;
    queue.push_back(seed);
    while (!queue.empty()) {
      const Eigen::Index cur = queue.front();
      queue.pop_front();
      c.voxels.push_back(cur);
      const Index3 p = g.coords(cur);
      for (int a = 0; a < 3; ++a) {
        c.bbox_min[a] = std::min(c.bbox_min[a], p[a]);
        c.bbox_max[a] = std::max(c.bbox_max[a], p[a]);
      }
      for (const auto& o : offsets) {
        const int x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
        if (!g.contains(x, y, z)) continue;
        const Eigen::Index n = g.index(x, y, z);
        if (m[n] != 0 && !visited[n]) {
          visited[n] = 1;
          queue.push_back(n);
        }
      }
    }
    std::sort(c.voxels.begin(), c.voxels.end());
    c.volume_mm3 = static_cast<double>(c.voxels.size()) * g.voxel_volume();
    comps.push_back(std::move(c));
  }

  std::stable_sort(comps.begin(), comps.end(),
                   [](const Component& a, const Component& b) {
                     return std::tie(a.bbox_min[2], a.bbox_min[1], a.bbox_min[0]) <
                            std::tie(b.bbox_min[2], b.bbox_min[1], b.bbox_min[0]);
                   });
  return comps;
}

Mask filter_small_components(const Mask& m, double min_volume_mm3,
                             Connectivity connectivity) {
  if (min_volume_mm3 < 0.0 || !std::isfinite(min_volume_mm3)) {
    throw ArgumentError("min_volume_mm3 must be a finite value >= 0");
  }
  Mask out(m.grid());
  for (const auto& c : connected_components(m, connectivity)) {
    if (c.volume_mm3 >= min_volume_mm3) {
      for (auto i : c.voxels) out[i] = 1;
    }
  }
  return out;
}

Mask boundary(const Mask& m, Connectivity connectivity) {
  const Grid& g = m.grid();
  const auto& offsets = neighbor_offsets(connectivity);
  Mask out(g);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        if (m(x, y, z) == 0) continue;
        for (const auto& o : offsets) {
          const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
          if (!g.contains(nx, ny, nz) || m(nx, ny, nz) == 0) {
            out(x, y, z) = 1;
            break;
          }
        }
      }
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma_vox) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_vox));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma_vox * sigma_vox));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

void blur_axis(const Grid& g, const Eigen::ArrayXd& in, Eigen::ArrayXd& out,
               int axis, const std::vector<double>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const int n = g.dims[axis];
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        Index3 p{x, y, z};
        const int c = p[axis];
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          p[axis] = std::clamp(c + k, 0, n - 1);
          acc += kernel[k + radius] * in[g.index(p[0], p[1], p[2])];
        }
        out[g.index(x, y, z)] = acc;
      }
}

}  // namespace

Volume gaussian_blur(const Volume& v, double sigma_mm) {
  if (!(sigma_mm >= 0.0) || !std::isfinite(sigma_mm)) {
    throw ArgumentError("gaussian_blur sigma must be finite and >= 0");
  }
  if (sigma_mm == 0.0) return v;
  const Grid& g = v.grid();
  Eigen::ArrayXd cur = v.data();
  Eigen::ArrayXd next(cur.size());
  for (int axis = 0; axis < 3; ++axis) {
    const double sigma_vox = sigma_mm / g.spacing[axis];
    if (g.dims[axis] == 1) continue;
    blur_axis(g, cur, next, axis, gaussian_kernel(sigma_vox));
    cur.swap(next);
  }
  return Volume(g, std::move(cur));
}

template <typename Scalar>
Image<Scalar> resample(const Image<Scalar>& v, const Eigen::Vector3d& target_spacing,
                       Interpolation mode) {
  if (!((target_spacing.array() > 0.0).all()) || !target_spacing.allFinite()) {
    throw ArgumentError("target spacing must be positive");
  }
  const Grid& src = v.grid();
  if (target_spacing == src.spacing) return v;

  Index3 dims{};
  Eigen::Vector3d ratio;  // target / source
  for (int a = 0; a < 3; ++a) {
    ratio[a] = target_spacing[a] / src.spacing[a];
    dims[a] = std::max(
        1, static_cast<int>(std::lround(src.dims[a] * src.spacing[a] /
                                        target_spacing[a])));
  }
  std::optional<Eigen::Matrix4d> affine;
  if (src.affine) {
    // New voxel i maps to old continuous index u = ratio * i + (ratio - 1) / 2.
    Eigen::Matrix4d to_old = Eigen::Matrix4d::Identity();
    for (int a = 0; a < 3; ++a) {
      to_old(a, a) = ratio[a];
      to_old(a, 3) = 0.5 * (ratio[a] - 1.0);
    }
    affine = *src.affine * to_old;
  }
  Image<Scalar> out(Grid(dims, target_spacing, affine));

  auto source_coord = [&](int a, int i) {
    const double u = (i + 0.5) * ratio[a] - 0.5;
    return std::clamp(u, 0.0, static_cast<double>(src.dims[a] - 1));
  };

  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const double u[3] = {source_coord(0, x), source_coord(1, y),
                             source_coord(2, z)};
        if (mode == Interpolation::Nearest) {
          out(x, y, z) = v(static_cast<int>(std::lround(u[0])),
                           static_cast<int>(std::lround(u[1])),
                           static_cast<int>(std::lround(u[2])));
          continue;
        }
        int lo[3], hi[3];
        double t[3];
        for (int a = 0; a < 3; ++a) {
          lo[a] = static_cast<int>(std::floor(u[a]));
          hi[a] = std::min(lo[a] + 1, src.dims[a] - 1);
          t[a] = u[a] - lo[a];
        }
        double acc = 0.0;
        for (int c = 0; c < 8; ++c) {
          const int ix = (c & 1) ? hi[0] : lo[0];
          const int iy = (c & 2) ? hi[1] : lo[1];
          const int iz = (c & 4) ? hi[2] : lo[2];
          const double w = ((c & 1) ? t[0] : 1.0 - t[0]) *
                           ((c & 2) ? t[1] : 1.0 - t[1]) *
                           ((c & 4) ? t[2] : 1.0 - t[2]);
          if (w != 0.0) acc += w * static_cast<double>(v(ix, iy, iz));
        }
        if constexpr (std::is_integral_v<Scalar>) {
          out(x, y, z) = static_cast<Scalar>(std::lround(acc));
        } else {
          out(x, y, z) = static_cast<Scalar>(acc);
        }
      }
  return out;
}

template Volume resample(const Volume&, const Eigen::Vector3d&, Interpolation);
template Mask resample(const Mask&, const Eigen::Vector3d&, Interpolation);

}  // namespace lesionforge
