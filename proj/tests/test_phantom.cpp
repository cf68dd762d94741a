#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lesionforge/assembly.hpp"
#include "lesionforge/phantom.hpp"
#include "support/oracles.hpp"

using namespace lesionforge;

TEST_CASE("phantom without lesions has an empty label") {
  PhantomSpec s;
  s.n_lesions = 0;
  const Phantom p = make_phantom(s);
  CHECK(count(p.lesions) == 0);
  CHECK(count(p.wm) > 0);
}

TEST_CASE("lesions sit in white matter, are separate and hyperintense") {
  for (int seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    PhantomSpec s;
    s.seed = static_cast<std::uint64_t>(seed);
    s.n_lesions = 5;
    const Phantom p = make_phantom(s);
    CHECK(is_subset(p.lesions, p.wm));
    CHECK(oracle::flood_fill_partition(p.lesions, 26).size() == 5);
    double in = 0, out = 0;
    Eigen::Index n_in = 0, n_out = 0;
    for (Eigen::Index i = 0; i < p.image.size(); ++i) {
      if (p.lesions[i]) {
        in += p.image[i];
        ++n_in;
      } else if (p.wm[i]) {
        out += p.image[i];
        ++n_out;
      }
    }
    CHECK(in / n_in > out / n_out);
  }
}

TEST_CASE("phantoms are deterministic per seed") {
  PhantomSpec s;
  s.seed = 9;
  const Phantom a = make_phantom(s), b = make_phantom(s);
  CHECK(a.image == b.image);
  CHECK(a.lesions == b.lesions);
  s.seed = 10;
  CHECK_FALSE(make_phantom(s).image == a.image);
}

TEST_CASE("distractors stay outside white matter") {
  PhantomSpec s;
  s.n_distractors = 3;
  const Phantom p = make_phantom(s);
  CHECK(count(p.distractors) > 0);
  CHECK(count(mask_intersection(p.distractors, p.wm)) == 0);
  CHECK(count(mask_intersection(p.distractors, p.lesions)) == 0);
}

TEST_CASE("spec validation and unplaceable lesions") {
  PhantomSpec s;
  s.lesion_intensity_range = {0.4, 0.9};
  CHECK_THROWS_AS(make_phantom(s), ArgumentError);
  s = PhantomSpec{};
  s.dims = {12, 12, 12};
  s.n_lesions = 60;
  CHECK_THROWS_AS(make_phantom(s), ValidationError);
  const nlohmann::json j = PhantomSpec{};
  CHECK(j.get<PhantomSpec>().n_lesions == PhantomSpec{}.n_lesions);
}

TEST_CASE("longitudinal series: identity step and set algebra") {
  PhantomSpec s;
  s.seed = 3;
  const PhantomSeries same = make_longitudinal(s, 2, {1.0});
  CHECK(same.images[0] == same.images[1]);
  CHECK(count(same.new_lesions[1]) == 0);
  CHECK(count(same.vanishing[1]) == 0);

  for (int seed = 0; seed < 10; ++seed) {
    s.seed = static_cast<std::uint64_t>(seed);
    const PhantomSeries series = make_longitudinal(s, 4, {1.2, 0.8, 1.1});
    REQUIRE(series.images.size() == 4);
    REQUIRE(series.all.size() == 4);
    for (int k = 1; k < 4; ++k) {
      CHECK(mask_xor(series.all[k], series.all[k - 1]) ==
            mask_union(series.new_lesions[k], series.vanishing[k]));
      CHECK(is_subset(series.all[k], series.wm));
    }
  }
  CHECK_THROWS_AS(make_longitudinal(s, 1, {}), ArgumentError);
  CHECK_THROWS_AS(make_longitudinal(s, 2, {3.0}), ArgumentError);
  CHECK_THROWS_AS(make_longitudinal(s, 3, {1.0}), ArgumentError);
}

TEST_CASE("written phantom datasets parse and load") {
  oracle::TempDir dir("phantom");
  PhantomSpec s;
  s.dims = {20, 20, 20};
  s.n_lesions = 3;
  PhantomDatasetOptions o;
  o.subjects = 3;
  o.timepoints = 4;
  o.test_subjects = 1;
  write_phantom_dataset(s, o, dir.path());
  const DatasetManifest m = parse_manifest(dir.path() / "manifest.json");
  REQUIRE(m.subjects.size() == 3);
  CHECK(m.subjects[2].split == Split::Test);
  const LoadedSubject subj = load_subject(m, m.subjects[0]);
  CHECK(subj.size() == 4);
  CHECK(subj.timepoints[3].vanishing.has_value());

  o.timepoints = 1;
  write_phantom_dataset(s, o, dir.path() / "cross");
  CHECK(parse_manifest(dir.path() / "cross" / "manifest.json").subjects[0].format ==
        SubjectFormat::CrossSectional);
}
