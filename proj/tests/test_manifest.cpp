#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "lesionforge/manifest.hpp"
#include "lesionforge/nifti.hpp"
#include "support/oracles.hpp"

using namespace lesionforge;
using nlohmann::json;

namespace {

/// Writes a 4^3 image and returns its file name relative to `dir`.
std::string touch_image(const std::filesystem::path& dir, const std::string& name) {
  save_nifti(Mask(Grid({4, 4, 4}, Eigen::Vector3d::Ones())), dir / name);
  return name;
}

SubjectRecord ms2015_subject(const std::filesystem::path& dir, const std::string& id,
                             int timepoints, Split split) {
  SubjectRecord s;
  s.id = id;
  s.format = SubjectFormat::Longitudinal;
  s.split = split;
  s.availability = {.all_t1 = true, .all_t2 = true};
  for (int k = 0; k < timepoints; ++k) {
    const std::string stem = id + "_" + std::to_string(k);
    s.timepoints.push_back({.image = touch_image(dir, stem + "_img.nii"),
                            .wm = touch_image(dir, stem + "_wm.nii"),
                            .all = touch_image(dir, stem + "_all.nii")});
  }
  return s;
}

DatasetManifest ms2015(const std::filesystem::path& dir) {
  DatasetManifest m;
  m.name = "MS2015";
  m.base_dir = dir;
  m.subjects.push_back(ms2015_subject(dir, "s1", 4, Split::Train));
  m.subjects.push_back(ms2015_subject(dir, "s2", 4, Split::Train));
  m.subjects.push_back(ms2015_subject(dir, "s3", 5, Split::Train));
  m.subjects.push_back(ms2015_subject(dir, "s4", 4, Split::Test));
  m.subjects.push_back(ms2015_subject(dir, "s5", 4, Split::Test));
  return m;
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
}

}  // namespace

TEST_CASE("minimal cross-sectional manifest") {
  oracle::TempDir dir("manifest_min");
  touch_image(dir.path(), "a.nii");
  write_json(dir.path() / "m.json",
             {{"schema", 1},
              {"name", "tiny"},
              {"subjects",
               {{{"id", "a"},
                 {"format", "cross_sectional"},
                 {"availability",
                  {{"all_t1", false}, {"all_t2", false}, {"new_t2", false}, {"vanishing_t2", false}}},
                 {"split", "train"},
                 {"timepoints", {{{"image", "a.nii"}}}}}}}});
  const auto m = parse_manifest(dir.path() / "m.json");
  REQUIRE(m.subjects.size() == 1);
  CHECK(m.subjects[0].timepoints.size() == 1);
  CHECK(m.resolve("a.nii") == dir.path() / "a.nii");
}

TEST_CASE("longitudinal new-lesion subject with one timepoint is rejected") {
  SubjectRecord s;
  s.id = "x";
  s.format = SubjectFormat::Longitudinal;
  s.availability.new_t2 = true;
  s.timepoints.push_back({.image = "x.nii"});
  DatasetManifest m{.name = "bad", .subjects = {s}, .base_dir = {}};
  CHECK_THROWS_AS(validate_manifest(m, false), ValidationError);

  SubjectRecord cross = s;
  cross.format = SubjectFormat::CrossSectional;
  CHECK_FALSE(subject_problems(cross).empty());
}

TEST_CASE("schema violations carry json pointers") {
  const json j = {{"schema", 1},
                  {"name", "x"},
                  {"subjects",
                   {{{"id", 3},
                     {"format", "sideways"},
                     {"availability", {{"all_t1", true}}},
                     {"split", "train"},
                     {"timepoints", {{{"image", "a.nii"}}}}}}}};
  try {
    manifest_from_json(j, ".");
    FAIL("expected ManifestParseError");
  } catch (const ManifestParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("/subjects/0/id") != std::string::npos);
    CHECK(msg.find("/subjects/0/format") != std::string::npos);
    CHECK(msg.find("/subjects/0/availability/all_t2") != std::string::npos);
  }
  CHECK_THROWS_AS(manifest_from_json({{"schema", 2}, {"name", "x"}, {"subjects", json::array()}}, "."),
                  ManifestParseError);
}

TEST_CASE("missing files are reported together") {
  oracle::TempDir dir("manifest_missing");
  DatasetManifest m = ms2015(dir.path());
  std::filesystem::remove(dir.path() / "s1_0_img.nii");
  std::filesystem::remove(dir.path() / "s4_3_all.nii");
  try {
    validate_manifest(m);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("s1_0_img.nii") != std::string::npos);
    CHECK(msg.find("s4_3_all.nii") != std::string::npos);
  }
}

TEST_CASE("grids with different physical extent are rejected") {
  oracle::TempDir dir("manifest_grid");
  DatasetManifest m = ms2015(dir.path());
  save_nifti(Mask(Grid({9, 4, 4}, Eigen::Vector3d::Ones())), dir.path() / "s2_1_wm.nii");
  CHECK_THROWS_AS(validate_manifest(m), ValidationError);
  // Same extent at a different resolution is fine.
  save_nifti(Mask(Grid({8, 8, 8}, Eigen::Vector3d::Constant(0.5))), dir.path() / "s2_1_wm.nii");
  CHECK_NOTHROW(validate_manifest(m));
}

TEST_CASE("MS2015-shaped manifest: 21 scans split 13 / 8") {
  oracle::TempDir dir("manifest_ms2015");
  const DatasetManifest m = ms2015(dir.path());
  save_manifest(m, dir.path() / "m.json");
  const DatasetManifest back = parse_manifest(dir.path() / "m.json");
  const auto s = summarize(back);
  CHECK(s.total.train_scans + s.total.test_scans == 21);
  CHECK(s.total.train_scans == 13);
  CHECK(s.total.test_scans == 8);
  CHECK(s.total.longitudinal == 5);
  CHECK(s.total.all_t1 == 5);
  CHECK(s.rows.size() == 1);
  CHECK(format_summary(s).find("MS2015") != std::string::npos);
}

TEST_CASE("parse after serialize is the identity") {
  oracle::TempDir dir("manifest_rt");
  DatasetManifest m = ms2015(dir.path());
  m.subjects[1].dataset = "other";
  m.subjects[2].timepoints[1].new_lesions.reset();
  save_manifest(m, dir.path() / "m.json");
  const DatasetManifest back = parse_manifest(dir.path() / "m.json");
  CHECK(back.name == m.name);
  CHECK(back.subjects == m.subjects);
  CHECK(manifest_to_json(back) == manifest_to_json(m));
}

TEST_CASE("summarize is additive and zero on empty") {
  const DatasetManifest empty{.name = "e", .subjects = {}, .base_dir = {}};
  const auto z = summarize(empty);
  CHECK(z.rows.empty());
  CHECK(z.total == SummaryRow{.dataset = "Total"});

  oracle::TempDir dir("manifest_add");
  const DatasetManifest a = ms2015(dir.path());
  DatasetManifest b;
  b.name = "MS2016";
  b.base_dir = dir.path();
  for (int i = 0; i < 3; ++i) {
    SubjectRecord s;
    s.id = "c" + std::to_string(i);
    s.availability.all_t1 = true;
    s.split = i == 0 ? Split::Test : Split::Train;
    s.timepoints.push_back({.image = touch_image(dir.path(), s.id + ".nii"),
                            .all = touch_image(dir.path(), s.id + "_all.nii")});
    b.subjects.push_back(s);
  }
  const auto ab = summarize(concat(a, b));
  SummaryRow expected = summarize(a).total;
  expected += summarize(b).total;
  CHECK(ab.total == expected);
  CHECK(ab.rows.size() == 2);
  CHECK(ab.rows[1].dataset == "MS2016");
  CHECK(ab.rows[1].cross_sectional == 3);
}
