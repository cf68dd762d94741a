#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "lesionforge/nifti.hpp"
#include "lesionforge/volume.hpp"
#include "support/oracles.hpp"

using namespace lesionforge;

namespace {

Grid iso(Index3 dims, double s = 1.0) { return Grid(dims, Eigen::Vector3d::Constant(s)); }

std::vector<std::vector<Eigen::Index>> partition_of(const std::vector<Component>& comps) {
  std::vector<std::vector<Eigen::Index>> out;
  for (const auto& c : comps) out.push_back(c.voxels);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("grid rejects non-positive geometry") {
  CHECK_THROWS_AS(Grid({0, 1, 1}, Eigen::Vector3d::Ones()), ValidationError);
  CHECK_THROWS_AS(Grid({1, 1, 1}, Eigen::Vector3d(1, 0, 1)), ValidationError);
}

TEST_CASE("nifti round trip is bit exact for float-representable volumes") {
  oracle::TempDir dir("nifti");
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index3 dims{1 + static_cast<int>(rng.uniform_int(0, 9)),
                      1 + static_cast<int>(rng.uniform_int(0, 9)),
                      1 + static_cast<int>(rng.uniform_int(0, 9))};
    Volume v(Grid(dims, Eigen::Vector3d(rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                                        rng.uniform(0.5, 2))));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = static_cast<float>(rng.normal(0.0, 100.0));
    }
    const auto path = dir.path() / (trial % 2 ? "v.nii.gz" : "v.nii");
    save_nifti(v, path);
    const Volume back = load_nifti(path);
    CHECK(back.dims() == v.dims());
    CHECK(back.spacing().cast<float>() == v.spacing().cast<float>());
    CHECK((back.data() == v.data()).all());
  }
}

TEST_CASE("nifti mask round trip and zero payload") {
  oracle::TempDir dir("mask");
  Rng rng(3);
  const Mask m = oracle::random_mask(rng, {7, 5, 3}, 0.3);
  save_nifti(m, dir.path() / "m.nii.gz");
  CHECK(load_mask(dir.path() / "m.nii.gz") == m);

  const Mask zeros(iso({4, 4, 4}));
  save_nifti(zeros, dir.path() / "z.nii");
  std::ifstream in(dir.path() / "z.nii", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 352 + 64);
  CHECK(std::all_of(bytes.begin() + 352, bytes.end(), [](char b) { return b == 0; }));
}

TEST_CASE("nifti header echo for a 96 cube") {
  oracle::TempDir dir("big");
  Volume v(iso({96, 96, 96}), 1.5);
  save_nifti(v, dir.path() / "v.nii.gz");
  const Grid g = read_nifti_grid(dir.path() / "v.nii.gz");
  CHECK(g.dims == Index3{96, 96, 96});
  CHECK(g.spacing == Eigen::Vector3d::Ones());
}

TEST_CASE("nifti error paths") {
  oracle::TempDir dir("bad");
  Volume v(iso({2, 2, 2}), 1.0);
  const auto path = dir.path() / "v.nii";
  save_nifti(v, path);

  auto patch = [&](std::streamoff offset, const std::string& bytes) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(offset);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  SUBCASE("bad magic") {
    patch(344, std::string("ni1\0", 4));
    CHECK_THROWS_AS(load_nifti(path), FormatError);
  }
  SUBCASE("unsupported datatype") {
    patch(70, std::string("\x08\x00", 2));  // int32
    CHECK_THROWS_AS(load_nifti(path), UnsupportedError);
  }
  SUBCASE("nan voxel names the index") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::string b(4, '\0');
    std::memcpy(b.data(), &nan, 4);
    patch(352 + 4 * 5, b);  // voxel (1,0,1)
    try {
      load_nifti(path);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("(1, 0, 1)") != std::string::npos);
    }
  }
  SUBCASE("unwritable directory") {
    CHECK_THROWS_AS(save_nifti(v, dir.path() / "missing" / "v.nii"), IoError);
  }
  SUBCASE("non-binary mask") {
    Volume w(iso({2, 2, 2}), 0.5);
    save_nifti(w, path);
    CHECK_THROWS_AS(load_mask(path), ValidationError);
  }
}

TEST_CASE("connected components basics") {
  Mask empty(iso({4, 4, 4}));
  CHECK(connected_components(empty).empty());

  Mask two(iso({6, 6, 6}));
  two(0, 0, 0) = 1;
  two(5, 5, 5) = 1;
  const auto comps = connected_components(two, Connectivity::TwentySix);
  REQUIRE(comps.size() == 2);
  CHECK(comps[0].voxels.size() == 1);
  CHECK(comps[1].voxels.size() == 1);
  CHECK(comps[0].bbox_min == Index3{0, 0, 0});
  CHECK(comps[1].bbox_min == Index3{5, 5, 5});

  // Diagonal neighbors split under 6 but join under 26.
  Mask diag(iso({3, 3, 3}));
  diag(0, 0, 0) = 1;
  diag(1, 1, 1) = 1;
  CHECK(connected_components(diag, Connectivity::Six).size() == 2);
  CHECK(connected_components(diag, Connectivity::Eighteen).size() == 2);
  CHECK(connected_components(diag, Connectivity::TwentySix).size() == 1);
  CHECK_THROWS_AS(connectivity_from_int(8), ArgumentError);
}

TEST_CASE("connected components match flood fill oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask m = oracle::random_mask(rng, {16, 16, 16}, rng.uniform(0.05, 0.35));
    for (int conn : {6, 18, 26}) {
      const auto comps = connected_components(m, connectivity_from_int(conn));
      CHECK(partition_of(comps) == oracle::flood_fill_partition(m, conn));
      for (std::size_t i = 1; i < comps.size(); ++i) {
        const auto& a = comps[i - 1].bbox_min;
        const auto& b = comps[i].bbox_min;
        CHECK(std::tie(a[2], a[1], a[0]) <= std::tie(b[2], b[1], b[0]));
      }
    }
  }
}

TEST_CASE("filter small components") {
  Mask m(iso({12, 12, 12}));
  m(1, 1, 1) = m(2, 1, 1) = 1;  // 2 voxels
  for (int z = 6; z < 8; ++z)
    for (int y = 6; y < 8; ++y)
      for (int x = 6; x < 8; ++x) m(x, y, z) = 1;  // 8 voxels
  const Mask f = filter_small_components(m, 3.0);
  CHECK(count(f) == 8);
  CHECK(f(1, 1, 1) == 0);
  CHECK(filter_small_components(m, 0.0) == m);
  CHECK(filter_small_components(f, 3.0) == f);
  CHECK_THROWS_AS(filter_small_components(m, -1.0), ArgumentError);

  Mask coarse(iso({4, 4, 4}, 2.0));
  coarse(1, 1, 1) = 1;
  CHECK(count(filter_small_components(coarse, 3.0)) == 1);

  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const Mask r = oracle::random_mask(rng, {10, 10, 10}, 0.1);
    const Mask once = filter_small_components(r, 4.0);
    CHECK(filter_small_components(once, 4.0) == once);
    CHECK(is_subset(once, r));
  }
}

TEST_CASE("boundary") {
  Mask cube(iso({5, 5, 5}));
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) cube(x, y, z) = 1;
  const Mask b = boundary(cube, Connectivity::Six);
  CHECK(count(b) == 26);
  CHECK(b(2, 2, 2) == 0);

  Mask one(iso({3, 3, 3}));
  one(1, 1, 1) = 1;
  CHECK(boundary(one) == one);
  Mask empty(iso({3, 3, 3}));
  CHECK(count(boundary(empty)) == 0);

  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Mask r = oracle::random_mask(rng, {8, 8, 8}, 0.5);
    CHECK(is_subset(boundary(r, Connectivity::TwentySix), r));
  }
}

TEST_CASE("gaussian blur") {
  Rng rng(1);
  const Volume r = oracle::random_volume(rng, {6, 7, 8});
  CHECK(gaussian_blur(r, 0.0) == r);
  CHECK_THROWS_AS(gaussian_blur(r, -0.1), ArgumentError);

  Volume c(iso({7, 7, 7}), 3.25);
  const Volume cb = gaussian_blur(c, 1.3);
  CHECK((cb.data() - 3.25).abs().maxCoeff() <= 1e-6);

  // Dense oracle: box-truncated 3D Gaussian normalized over its support.
  Volume impulse(iso({9, 9, 9}));
  impulse(4, 4, 4) = 1.0;
  const Volume out = gaussian_blur(impulse, 1.0);
  double norm = 0.0;
  for (int dz = -3; dz <= 3; ++dz)
    for (int dy = -3; dy <= 3; ++dy)
      for (int dx = -3; dx <= 3; ++dx) norm += std::exp(-0.5 * (dx * dx + dy * dy + dz * dz));
  double worst = 0.0;
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 9; ++x) {
        const int dx = x - 4, dy = y - 4, dz = z - 4;
        double expect = 0.0;
        if (std::abs(dx) <= 3 && std::abs(dy) <= 3 && std::abs(dz) <= 3) {
          expect = std::exp(-0.5 * (dx * dx + dy * dy + dz * dz)) / norm;
        }
        worst = std::max(worst, std::abs(out(x, y, z) - expect));
      }
  CHECK(worst <= 1e-5);
  CHECK(out.data().sum() == doctest::Approx(1.0).epsilon(1e-4));

  // Anisotropic spacing converts sigma per axis.
  Volume aniso(Grid({9, 9, 9}, Eigen::Vector3d(1, 1, 2)));
  aniso(4, 4, 4) = 1.0;
  const Volume ab = gaussian_blur(aniso, 2.0);
  CHECK(ab(4, 4, 5) / ab(4, 4, 4) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("resample") {
  Rng rng(4);
  Volume v(iso({10, 10, 10}, 2.0));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform();
  CHECK(resample(v, Eigen::Vector3d::Constant(2.0), Interpolation::Trilinear) == v);

  const Volume up = resample(v, Eigen::Vector3d::Ones(), Interpolation::Trilinear);
  CHECK(up.dims() == Index3{20, 20, 20});
  CHECK(up.spacing() == Eigen::Vector3d::Ones());

  const Mask m = oracle::random_mask(rng, {10, 10, 10}, 0.4, Eigen::Vector3d::Constant(2.0));
  const Mask mu = resample(m, Eigen::Vector3d(1.0, 0.7, 3.0), Interpolation::Nearest);
  CHECK(((mu.data() == 0) || (mu.data() == 1)).all());
  for (int a = 0; a < 3; ++a) {
    const double extent = 20.0;
    CHECK(std::abs(mu.dims()[a] * mu.spacing()[a] - extent) <= mu.spacing()[a]);
  }
  CHECK_THROWS_AS(resample(v, Eigen::Vector3d(1, 0, 1), Interpolation::Nearest),
                  ArgumentError);
}
