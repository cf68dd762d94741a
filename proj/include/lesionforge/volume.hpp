#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "lesionforge/error.hpp"

namespace lesionforge {

using Index3 = std::array<int, 3>;

/// Lattice geometry shared by every image on the same voxel grid.
struct Grid {
  Index3 dims{1, 1, 1};
  Eigen::Vector3d spacing{1.0, 1.0, 1.0};
  /// Voxel-to-world transform; absent when the source carried none.
  std::optional<Eigen::Matrix4d> affine;

  Grid() = default;
  Grid(Index3 d, Eigen::Vector3d s, std::optional<Eigen::Matrix4d> a = {});

  [[nodiscard]] Eigen::Index size() const {
    return static_cast<Eigen::Index>(dims[0]) * dims[1] * dims[2];
  }
  [[nodiscard]] double voxel_volume() const {
    return spacing.x() * spacing.y() * spacing.z();
  }
  [[nodiscard]] Eigen::Index index(int x, int y, int z) const {
    return x + static_cast<Eigen::Index>(dims[0]) *
                   (y + static_cast<Eigen::Index>(dims[1]) * z);
  }
  [[nodiscard]] Index3 coords(Eigen::Index i) const {
    const auto nx = static_cast<Eigen::Index>(dims[0]);
    const auto ny = static_cast<Eigen::Index>(dims[1]);
    return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny),
            static_cast<int>(i / (nx * ny))};
  }
  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] &&
           z < dims[2];
  }
  /// Equal dims and spacing; the affine is not compared.
  [[nodiscard]] bool compatible(const Grid& other) const {
    return dims == other.dims && spacing == other.spacing;
  }
};

/// Dense scalar image on a Grid. Voxel (x, y, z) lives at
/// `x + nx * (y + ny * z)` in the flat Eigen array.
template <typename Scalar>
class Image {
 public:
  using Data = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Image() = default;

  explicit Image(Grid grid, Scalar fill = Scalar{0})
      : grid_(std::move(grid)), data_(Data::Constant(grid_.size(), fill)) {}

  Image(Grid grid, Data data) : grid_(std::move(grid)), data_(std::move(data)) {
    if (data_.size() != grid_.size()) {
      throw ValidationError("image data length does not match grid dims");
    }
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const Index3& dims() const { return grid_.dims; }
  [[nodiscard]] const Eigen::Vector3d& spacing() const { return grid_.spacing; }
  [[nodiscard]] Eigen::Index size() const { return data_.size(); }

  [[nodiscard]] const Data& data() const { return data_; }
  Data& data() { return data_; }

  Scalar& operator()(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }
  Scalar operator()(int x, int y, int z) const {
    return data_[grid_.index(x, y, z)];
  }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  bool operator==(const Image& other) const {
    return grid_.compatible(other.grid_) && (data_ == other.data_).all();
  }

 private:
  Grid grid_;
  Data data_;
};

using Volume = Image<double>;
using Mask = Image<std::uint8_t>;
using LabelImage = Image<std::int32_t>;

enum class Connectivity { Six = 6, Eighteen = 18, TwentySix = 26 };

/// Parses 6/18/26; anything else is an ArgumentError.
Connectivity connectivity_from_int(int n);

/// Neighbor offsets for the given connectivity (excludes the origin).
const std::vector<Index3>& neighbor_offsets(Connectivity c);

/// A connected lesion; voxels are linear indices in ascending order.
struct Component {
  std::vector<Eigen::Index> voxels;
  double volume_mm3 = 0.0;
  Index3 bbox_min{0, 0, 0};
  Index3 bbox_max{0, 0, 0};  // inclusive
};

void require_compatible(const Grid& a, const Grid& b, const char* what);

// Mask conversions and set algebra.
Mask to_mask(const Volume& v);
Volume to_volume(const Mask& m);
Mask binarize(const Volume& v, double threshold = 0.5);
Eigen::Index count(const Mask& m);
double load_mm3(const Mask& m);
Mask mask_union(const Mask& a, const Mask& b);
Mask mask_intersection(const Mask& a, const Mask& b);
Mask mask_difference(const Mask& a, const Mask& b);
Mask mask_xor(const Mask& a, const Mask& b);
bool is_subset(const Mask& a, const Mask& b);
Mask mask_from_voxels(const Grid& grid, const std::vector<Eigen::Index>& voxels);

/// Components ordered by (min z, min y, min x) of their bounding box, ties
/// broken by the first voxel in raster order.
std::vector<Component> connected_components(
    const Mask& m, Connectivity connectivity = Connectivity::TwentySix);

/// Removes components whose physical volume is below `min_volume_mm3`.
Mask filter_small_components(const Mask& m, double min_volume_mm3,
                             Connectivity connectivity = Connectivity::TwentySix);

/// Foreground voxels with at least one background (or out-of-grid) neighbor.
Mask boundary(const Mask& m, Connectivity connectivity = Connectivity::Six);

/// Separable Gaussian, kernel truncated at 3 sigma and renormalized; borders
/// replicate the edge voxel.
Volume gaussian_blur(const Volume& v, double sigma_mm);

enum class Interpolation { Nearest, Trilinear };

/// Voxel-center aligned resampling to a new spacing.
template <typename Scalar>
Image<Scalar> resample(const Image<Scalar>& v, const Eigen::Vector3d& target_spacing,
                       Interpolation mode);

/// Copies the box [lo, hi] (inclusive) into a new image.
template <typename Scalar>
Image<Scalar> crop(const Image<Scalar>& v, const Index3& lo, const Index3& hi) {
  Grid g({hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1},
         v.spacing());
  Image<Scalar> out(g);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x)
        out(x, y, z) = v(lo[0] + x, lo[1] + y, lo[2] + z);
  return out;
}

}  // namespace lesionforge
