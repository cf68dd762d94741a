#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "lesionforge/losses.hpp"
#include "support/oracles.hpp"

using namespace lesionforge;

namespace {

Grid cube(int n) { return Grid({n, n, n}, Eigen::Vector3d::Ones()); }

Volume random_probs(Rng& rng, int n) { return oracle::random_volume(rng, {n, n, n}); }

/// Max relative error of `grad` against central differences of `value` with
/// respect to every voxel of `p`.
template <typename ValueFn>
double fd_max_error(Volume& p, const Eigen::ArrayXd& grad, ValueFn value) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double num = oracle::central_difference(value, p[i], 1e-3);
    worst = std::max(worst, oracle::relative_error(grad[i], num));
  }
  return worst;
}

}  // namespace

TEST_CASE("dice loss values") {
  Rng rng(1);
  const Mask y = oracle::random_mask(rng, {6, 6, 6}, 0.3);
  CHECK(dice_loss(to_volume(y), y, 0.0).value == doctest::Approx(0.0));

  const Volume zeros(y.grid());
  const double expect = 1.0 - 1.0 / (static_cast<double>(count(y)) + 1.0);
  CHECK(dice_loss(zeros, y, 1.0).value == doctest::Approx(expect).epsilon(1e-14));

  // Both empty with eps = 0 is a perfect match, not a division by zero.
  const Mask empty(y.grid());
  const auto both_empty = dice_loss(zeros, empty, 0.0);
  CHECK(both_empty.value == 0.0);
  CHECK(both_empty.grad.allFinite());
}

TEST_CASE("dice loss gradient matches finite differences") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    Volume p = random_probs(rng, 8);
    const Mask y = oracle::random_mask(rng, {8, 8, 8}, rng.uniform(0.0, 0.5));
    const auto lv = dice_loss(p, y, 1.0);
    CHECK(fd_max_error(p, lv.grad, [&] { return dice_loss(p, y, 1.0).value; }) <= 1e-4);
  }
}

TEST_CASE("longitudinal loss values") {
  Rng rng(3);
  const Mask y1 = oracle::random_mask(rng, {6, 6, 6}, 0.2);
  const Mask y2 = oracle::random_mask(rng, {6, 6, 6}, 0.2);
  const Volume zero(y1.grid());
  const double n = static_cast<double>(y1.size());

  const auto lw = longitudinal_loss(zero, zero, y1, y2, ConstraintMode::AsWritten);
  CHECK(lw.value == doctest::Approx((count(y1) + count(y2)) / n).epsilon(1e-14));
  CHECK(longitudinal_loss(zero, zero, y1, y2, ConstraintMode::Intent).value == 0.0);

  // Disjoint labels, binary predictions exactly matching the change sets.
  const Mask a = oracle::random_mask(rng, {6, 6, 6}, 0.3);
  const Mask b = mask_difference(oracle::random_mask(rng, {6, 6, 6}, 0.3), a);
  const Volume pn = to_volume(mask_difference(b, a));
  const Volume pv = to_volume(mask_difference(a, b));
  for (auto mode : {ConstraintMode::AsWritten, ConstraintMode::Intent}) {
    CHECK(longitudinal_loss(pn, pv, a, b, mode).value == 0.0);
  }

  CHECK_THROWS_AS(longitudinal_loss(zero, zero, std::nullopt, y2, ConstraintMode::Intent),
                  PreconditionError);
}

TEST_CASE("longitudinal loss gradients match finite differences") {
  Rng rng(4);
  for (auto mode : {ConstraintMode::AsWritten, ConstraintMode::Intent}) {
    for (int t = 0; t < 5; ++t) {
      Volume pn = random_probs(rng, 8), pv = random_probs(rng, 8);
      const Mask y1 = oracle::random_mask(rng, {8, 8, 8}, 0.3);
      const Mask y2 = oracle::random_mask(rng, {8, 8, 8}, 0.3);
      const auto lv = longitudinal_loss(pn, pv, y1, y2, mode);
      auto f = [&] { return longitudinal_loss(pn, pv, y1, y2, mode).value; };
      CHECK(fd_max_error(pn, lv.grad_first, f) <= 1e-4);
      CHECK(fd_max_error(pv, lv.grad_second, f) <= 1e-4);
    }
  }
}

TEST_CASE("volumetric loss band") {
  // Single-voxel grids make the soft volume equal the map value.
  const Grid one = cube(1);
  auto vol = [&](double v1, double v2) {
    return volumetric_loss(Volume(one, v1), Volume(one, v2), 1.2, 0.8).value;
  };
  CHECK(vol(100, 110) == 0.0);
  CHECK(vol(100, 130) == doctest::Approx(100.0));
  CHECK(vol(100, 70) == doctest::Approx(100.0));
  CHECK(vol(100, 80) == 0.0);   // lower edge
  CHECK(vol(100, 120) == 0.0);  // upper edge

  Rng rng(5);
  const Volume p = random_probs(rng, 4);
  CHECK(volumetric_loss(p, p, 1.0, 1.0).value == 0.0);
  Volume q = p;
  q[0] = std::min(1.0, q[0] + 0.25);
  CHECK(volumetric_loss(p, q, 1.0, 1.0).value > 0.0);
  CHECK_THROWS_AS(volumetric_loss(p, q, 0.8, 1.2), ArgumentError);
}

TEST_CASE("volumetric loss depends only on sums") {
  Rng rng(6);
  Volume p1 = random_probs(rng, 5), p2 = random_probs(rng, 5);
  p2.data() *= 0.5;
  const double before = volumetric_loss(p1, p2, 1.2, 0.8).value;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(p1.size()));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  Volume s1(p1.grid()), s2(p2.grid());
  for (Eigen::Index i = 0; i < p1.size(); ++i) {
    s1[i] = p1[perm[static_cast<std::size_t>(i)]];
    s2[i] = p2[perm[static_cast<std::size_t>(i)]];
  }
  CHECK(volumetric_loss(s1, s2, 1.2, 0.8).value == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("volumetric loss gradients match finite differences") {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    Volume p1 = random_probs(rng, 8), p2 = random_probs(rng, 8);
    p2.data() *= rng.uniform(0.5, 1.5);
    const auto lv = volumetric_loss(p1, p2, 1.2, 0.8);
    auto f = [&] { return volumetric_loss(p1, p2, 1.2, 0.8).value; };
    CHECK(fd_max_error(p1, lv.grad_first, f) <= 1e-4);
    CHECK(fd_max_error(p2, lv.grad_second, f) <= 1e-4);
  }
}

TEST_CASE("spatial loss") {
  Mask wm(Grid({10, 10, 10}, Eigen::Vector3d::Ones()));
  for (int z = 2; z < 8; ++z)
    for (int y = 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) wm(x, y, z) = 1;
  Volume inside(wm.grid());
  inside(4, 4, 4) = 0.9;
  CHECK(spatial_loss(inside, wm, ConstraintMode::Intent).value == 0.0);

  Volume outside(wm.grid());
  outside(0, 0, 0) = 1.0;
  CHECK(spatial_loss(outside, wm, ConstraintMode::Intent).value ==
        doctest::Approx(1.0 / 1000.0));

  // The literal XOR form is zero when lesions fill everything outside WM.
  const Volume complement = to_volume(mask_difference(Mask(wm.grid(), 1), wm));
  CHECK(spatial_loss(complement, wm, ConstraintMode::AsWritten).value == 0.0);

  Rng rng(8);
  for (auto mode : {ConstraintMode::AsWritten, ConstraintMode::Intent}) {
    for (int t = 0; t < 5; ++t) {
      Volume p = random_probs(rng, 8);
      const Mask w = oracle::random_mask(rng, {8, 8, 8}, 0.5);
      const auto lv = spatial_loss(p, w, mode);
      CHECK(fd_max_error(p, lv.grad, [&] { return spatial_loss(p, w, mode).value; }) <= 1e-4);
    }
  }
}

namespace {

struct Sample {
  PredictionSet preds;
  SampleLabels labels;
  Mask wm;
};

Sample random_sample(Rng& rng, int n) {
  Sample s;
  for (Head h : kHeads) {
    s.preds[h] = random_probs(rng, n);
    s.labels[h] = oracle::random_mask(rng, {n, n, n}, 0.2);
  }
  s.wm = oracle::random_mask(rng, {n, n, n}, 0.6);
  return s;
}

}  // namespace

TEST_CASE("total loss curriculum and weighting") {
  Rng rng(9);
  const Sample s = random_sample(rng, 6);
  LossConfig cfg;
  const auto early = total_loss(s.preds, s.labels, s.wm, cfg, 0, 100, SampleKind::Longitudinal);
  CHECK_FALSE(early.breakdown.active_constraints);
  CHECK(early.breakdown.total == early.breakdown.dice);

  const auto late = total_loss(s.preds, s.labels, s.wm, cfg, 50, 100, SampleKind::Longitudinal);
  const auto& b = late.breakdown;
  CHECK(b.active_constraints);
  CHECK(b.longitudinal_applied);
  CHECK(b.total == b.dice + 2.0 * b.longitudinal + b.volumetric + b.spatial);
  CHECK(late.breakdown.dice == early.breakdown.dice);

  LossConfig zero = cfg;
  zero.lambda_long = zero.lambda_vol = zero.lambda_spat = 0.0;
  for (int epoch : {0, 49, 50, 99}) {
    const auto z = total_loss(s.preds, s.labels, s.wm, zero, epoch, 100, SampleKind::Longitudinal);
    CHECK(z.breakdown.total == doctest::Approx(z.breakdown.dice).epsilon(1e-15));
  }

  LossConfig bad = cfg;
  bad.curriculum_fraction = 0.0;
  CHECK_THROWS_AS(total_loss(s.preds, s.labels, s.wm, bad, 0, 10, SampleKind::Longitudinal),
                  ArgumentError);
  bad.curriculum_fraction = 1.5;
  CHECK_THROWS_AS(total_loss(s.preds, s.labels, s.wm, bad, 0, 10, SampleKind::Longitudinal),
                  ArgumentError);
}

TEST_CASE("total loss availability") {
  Rng rng(10);
  Sample s = random_sample(rng, 5);
  s.labels.all_t2.reset();
  s.labels.vanishing_t2.reset();
  LossConfig cfg;
  const auto t = total_loss(s.preds, s.labels, s.wm, cfg, 9, 10, SampleKind::Longitudinal);
  CHECK_FALSE(t.breakdown.longitudinal_applied);
  CHECK(t.breakdown.longitudinal == 0.0);
  const double expected_dice = dice_loss(s.preds.all_t1, *s.labels.all_t1, 1.0).value +
                               dice_loss(s.preds.new_t2, *s.labels.new_t2, 1.0).value;
  CHECK(t.breakdown.dice == doctest::Approx(expected_dice).epsilon(1e-14));

  const auto cs = total_loss(s.preds, s.labels, s.wm, cfg, 9, 10, SampleKind::CrossSectional);
  CHECK(cs.breakdown.volumetric ==
        doctest::Approx(volumetric_loss(s.preds.all_t1, s.preds.all_t2, 1.0, 1.0).value));
}

TEST_CASE("total gradient is the sum of term gradients") {
  Rng rng(11);
  const Sample s = random_sample(rng, 6);
  LossConfig cfg;
  cfg.xor_mode = ConstraintMode::AsWritten;
  const auto t = total_loss(s.preds, s.labels, s.wm, cfg, 10, 10, SampleKind::Longitudinal);

  GradientSet manual;
  for (Head h : kHeads) {
    manual[h] = Volume(s.preds[h].grid());
    manual[h].data() += dice_loss(s.preds[h], *s.labels[h], cfg.smooth_eps).grad;
    manual[h].data() += cfg.lambda_spat * spatial_loss(s.preds[h], s.wm, cfg.xor_mode).grad;
  }
  const auto l = longitudinal_loss(s.preds.new_t2, s.preds.vanishing_t2, s.labels.all_t1,
                                   s.labels.all_t2, cfg.xor_mode);
  manual.new_t2.data() += cfg.lambda_long * l.grad_first;
  manual.vanishing_t2.data() += cfg.lambda_long * l.grad_second;
  const auto v = volumetric_loss(s.preds.all_t1, s.preds.all_t2, cfg.alpha_high, cfg.alpha_low);
  manual.all_t1.data() += cfg.lambda_vol * v.grad_first;
  manual.all_t2.data() += cfg.lambda_vol * v.grad_second;

  for (Head h : kHeads) {
    CHECK((t.grad[h].data() - manual[h].data()).abs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("loss config json") {
  LossConfig c;
  c.lambda_long = 3.0;
  c.xor_mode = ConstraintMode::AsWritten;
  const nlohmann::json j = c;
  const auto back = j.get<LossConfig>();
  CHECK(back.lambda_long == 3.0);
  CHECK(back.xor_mode == ConstraintMode::AsWritten);
  CHECK_THROWS_AS(nlohmann::json({{"xor_mode", "bogus"}}).get<LossConfig>(), ArgumentError);
  CHECK_THROWS_AS(nlohmann::json({{"alpha_low", 1.1}}).get<LossConfig>(), ArgumentError);
}
