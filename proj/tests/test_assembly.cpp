#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lesionforge/assembly.hpp"
#include "lesionforge/nifti.hpp"
#include "support/oracles.hpp"

using namespace lesionforge;

namespace {

LoadedSubject make_subject(Rng& rng, int timepoints, bool with_labels) {
  LoadedSubject s;
  s.id = "subj";
  s.format = timepoints > 1 ? SubjectFormat::Longitudinal : SubjectFormat::CrossSectional;
  s.availability.all_t1 = with_labels;
  s.availability.all_t2 = with_labels && timepoints > 1;
  for (int k = 0; k < timepoints; ++k) {
    Timepoint t;
    t.image = oracle::random_volume(rng, {6, 6, 6});
    t.wm = oracle::random_mask(rng, {6, 6, 6}, 0.7);
    if (with_labels) t.all = oracle::random_mask(rng, {6, 6, 6}, 0.2);
    s.timepoints.push_back(std::move(t));
  }
  return s;
}

PredictionSet constant_set(const Grid& g, double v) {
  PredictionSet p;
  for (Head h : kHeads) p[h] = Volume(g, v);
  return p;
}

}  // namespace

TEST_CASE("cross-sectional input duplicates the scan and zeroes the prior") {
  Rng rng(1);
  const LoadedSubject s = make_subject(rng, 1, true);
  const ModelInput in = assemble(s, {1, 1}, LabelSource::GroundTruth, 1.0, rng);
  CHECK(in.flags.t2_duplicated);
  CHECK(in.flags.label_zero_substituted);
  CHECK_FALSE(in.flags.label_from_prediction);
  CHECK(in.x_t2 == in.x_t1);
  CHECK(count(in.y_a_t1) == 0);
}

TEST_CASE("longitudinal input carries the stored baseline label") {
  Rng rng(2);
  const LoadedSubject s = make_subject(rng, 3, true);
  const ModelInput in = assemble(s, {1, 2}, LabelSource::GroundTruth, 1.0, rng);
  CHECK_FALSE(in.flags.t2_duplicated);
  CHECK_FALSE(in.flags.label_zero_substituted);
  CHECK(in.y_a_t1 == *s.timepoints[0].all);
  CHECK(in.x_t2 == s.timepoints[1].image);
  CHECK(in.wm_t2 == *s.timepoints[1].wm);

  const ModelInput never = assemble(s, {1, 2}, LabelSource::GroundTruth, 0.0, rng);
  CHECK(never.flags.label_zero_substituted);
  CHECK(count(never.y_a_t1) == 0);

  // Flags faithfully describe data on random calls.
  for (int i = 0; i < 50; ++i) {
    const int a = static_cast<int>(rng.uniform_int(1, 3));
    const int b = static_cast<int>(rng.uniform_int(a, 3));
    const ModelInput r = assemble(s, {a, b}, LabelSource::GroundTruth, 0.5, rng);
    if (r.flags.t2_duplicated) CHECK(r.x_t2 == r.x_t1);
    if (r.flags.label_zero_substituted) CHECK(count(r.y_a_t1) == 0);
  }
}

TEST_CASE("missing label falls back to zero; missing wm is an error") {
  Rng rng(3);
  LoadedSubject s = make_subject(rng, 2, false);
  const ModelInput in = assemble(s, {1, 2}, LabelSource::GroundTruth, 1.0, rng);
  CHECK(in.flags.label_zero_substituted);
  s.timepoints[1].wm.reset();
  CHECK_THROWS_AS(assemble(s, {1, 2}, LabelSource::Zero, 1.0, rng), ValidationError);
  CHECK_THROWS_AS(assemble(s, {2, 1}, LabelSource::Zero, 1.0, rng), ArgumentError);
  CHECK_THROWS_AS(assemble(s, {1, 3}, LabelSource::Zero, 1.0, rng), ArgumentError);
}

TEST_CASE("prior inclusion frequency follows prior_prob") {
  Rng data_rng(4);
  const LoadedSubject s = make_subject(data_rng, 2, true);
  Rng rng(77);
  int included = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const ModelInput in = assemble(s, {1, 2}, LabelSource::GroundTruth, 0.5, rng);
    included += in.flags.label_zero_substituted ? 0 : 1;
  }
  CHECK(std::abs(included / static_cast<double>(draws) - 0.5) <= 0.02);
}

TEST_CASE("window plans") {
  auto pairs = [](const WindowPlan& p) {
    std::vector<WindowPair> out;
    for (const auto& s : p.steps) out.push_back(s.pair);
    return out;
  };
  CHECK(pairs(plan_windows(3)) == std::vector<WindowPair>{{1, 1}, {1, 2}, {2, 3}});
  CHECK(pairs(plan_windows(2)) == std::vector<WindowPair>{{1, 1}, {1, 2}});
  const auto five = pairs(plan_windows(5));
  CHECK(five.size() == 5);
  CHECK(five.back() == WindowPair{4, 5});
  for (int t = 1; t <= 8; ++t) {
    const WindowPlan p = plan_windows(t);
    CHECK(p.steps.size() == static_cast<std::size_t>(std::max(t, 1)));
    for (std::size_t k = 1; k < p.steps.size(); ++k) {
      CHECK(p.steps[k].pair == WindowPair{static_cast<int>(k), static_cast<int>(k) + 1});
      CHECK(p.steps[k].source == LabelSource::PreviousPrediction);
    }
  }

  SubjectRecord cross;
  cross.id = "c";
  cross.timepoints.resize(1);
  CHECK_THROWS_AS(plan_windows(cross), ArgumentError);
  SubjectRecord lon = cross;
  lon.format = SubjectFormat::Longitudinal;
  lon.timepoints.resize(4);
  CHECK(plan_windows(lon).steps.size() == 4);
}

TEST_CASE("run_subject with a constant-zero model") {
  Rng rng(5);
  const LoadedSubject s = make_subject(rng, 3, true);
  std::vector<Mask> priors;
  auto model = [&](const ModelInput& in) {
    priors.push_back(in.y_a_t1);
    return constant_set(in.x_t1.grid(), 0.0);
  };
  const auto out = run_subject(s, model, {.with_prior = false});
  REQUIRE(out.size() == 3);
  for (const auto& p : out)
    for (Head h : kHeads) CHECK(p[h].data().maxCoeff() == 0.0);
  for (const auto& m : priors) CHECK(count(m) == 0);
}

TEST_CASE("run_subject threads the prior through an identity-echo model") {
  Rng rng(6);
  const LoadedSubject s = make_subject(rng, 4, true);
  const Mask& label = *s.timepoints[0].all;
  auto echo = [](const ModelInput& in) {
    PredictionSet p = constant_set(in.x_t1.grid(), 0.0);
    p.all_t2 = to_volume(in.y_a_t1);
    return p;
  };
  const auto out = run_subject(s, echo, {.with_prior = true});
  REQUIRE(out.size() == 4);
  for (std::size_t k = 1; k < out.size(); ++k) CHECK(binarize(out[k].all_t2) == label);
  CHECK(all_lesion_series(out).size() == 4);

  // Deterministic given the same inputs.
  const auto again = run_subject(s, echo, {.with_prior = true});
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(again[k].all_t2 == out[k].all_t2);
}

TEST_CASE("run_subject on a cross-sectional subject and contract errors") {
  Rng rng(7);
  const LoadedSubject s = make_subject(rng, 1, true);
  auto half = [](const ModelInput& in) { return constant_set(in.x_t1.grid(), 0.5); };
  CHECK(run_subject(s, half).size() == 1);
  auto bad = [](const ModelInput& in) { return constant_set(in.x_t1.grid(), 1.5); };
  CHECK_THROWS_AS(run_subject(s, bad), ContractError);
}

TEST_CASE("load_subject resamples onto the first grid") {
  oracle::TempDir dir("assembly_load");
  Rng rng(8);
  const Volume img = oracle::random_volume(rng, {8, 8, 8});
  save_nifti(img, dir.path() / "img.nii");
  save_nifti(Mask(Grid({4, 4, 4}, Eigen::Vector3d::Constant(2.0)), 1), dir.path() / "wm.nii");
  DatasetManifest m{.name = "x", .subjects = {}, .base_dir = dir.path()};
  SubjectRecord r;
  r.id = "a";
  r.timepoints.push_back({.image = "img.nii", .wm = "wm.nii"});
  const LoadedSubject s = load_subject(m, r);
  CHECK(s.timepoints[0].wm->dims() == Index3{8, 8, 8});
  CHECK(count(*s.timepoints[0].wm) == 512);
}
