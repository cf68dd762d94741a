#include "lesionforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "lesionforge/losses.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/toytrain.hpp"

namespace lesionforge {

namespace {

double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

Volume random_probs(const Grid& g, Rng& rng) {
  Volume v(g);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(0.05, 0.95);
  return v;
}

Mask random_labels(const Grid& g, Rng& rng, double density) {
  Mask m(g);
  for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(density) ? 1 : 0;
  return m;
}

/// Worst error of `grad` against central differences of `f` over `x`.
double check_map(Volume& x, const Volume& grad, const std::function<double()>& f, double h) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    worst = std::max(worst, rel_error(grad[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& o) {
  Rng rng(o.seed);
  const Grid g(o.dims, Eigen::Vector3d::Ones());
  const double h = o.step;
  std::vector<GradCheckRow> rows;
  auto row = [&](const std::string& name, const std::function<double()>& one) {
    GradCheckRow r{name, o.instances, 0.0, o.tolerance, false};
    for (int k = 0; k < o.instances; ++k) r.max_rel_error = std::max(r.max_rel_error, one());
    r.pass = r.max_rel_error <= o.tolerance;
    rows.push_back(r);
  };

  row("dice_loss", [&] {
    Volume p = random_probs(g, rng);
    const Mask y = random_labels(g, rng, 0.2);
    const auto a = dice_loss(p, y, 1.0);
    return check_map(p, Volume(g, a.grad), [&] { return dice_loss(p, y, 1.0).value; }, h);
  });
  for (ConstraintMode mode : {ConstraintMode::AsWritten, ConstraintMode::Intent}) {
    const std::string tag = mode == ConstraintMode::AsWritten ? "as_written" : "intent";
    row("longitudinal_loss/" + tag, [&] {
      Volume pn = random_probs(g, rng), pv = random_probs(g, rng);
      const Mask y1 = random_labels(g, rng, 0.2), y2 = random_labels(g, rng, 0.2);
      const auto a = longitudinal_loss(pn, pv, y1, y2, mode);
      auto f = [&] { return longitudinal_loss(pn, pv, y1, y2, mode).value; };
      return std::max(check_map(pn, Volume(g, a.grad_first), f, h),
                      check_map(pv, Volume(g, a.grad_second), f, h));
    });
  }
  row("volumetric_loss", [&] {
    Volume p1 = random_probs(g, rng), p2 = random_probs(g, rng);
    // Stay clear of the band edges where the loss has a kink.
    const double target = rng.bernoulli(0.5) ? rng.uniform(0.3, 0.7) : rng.uniform(1.4, 2.0);
    p2.data() *= target * p1.data().sum() / p2.data().sum();
    const auto a = volumetric_loss(p1, p2, 1.2, 0.8);
    auto f = [&] { return volumetric_loss(p1, p2, 1.2, 0.8).value; };
    return std::max(check_map(p1, Volume(g, a.grad_first), f, h),
                    check_map(p2, Volume(g, a.grad_second), f, h));
  });
  for (ConstraintMode mode : {ConstraintMode::AsWritten, ConstraintMode::Intent}) {
    const std::string tag = mode == ConstraintMode::AsWritten ? "as_written" : "intent";
    row("spatial_loss/" + tag, [&] {
      Volume p = random_probs(g, rng);
      const Mask wm = random_labels(g, rng, 0.6);
      const auto a = spatial_loss(p, wm, mode);
      return check_map(p, Volume(g, a.grad), [&] { return spatial_loss(p, wm, mode).value; }, h);
    });
  }
  row("total_loss", [&] {
    PredictionSet p;
    SampleLabels y;
    for (Head hd : kHeads) {
      p[hd] = random_probs(g, rng);
      y[hd] = random_labels(g, rng, 0.2);
    }
    const Mask wm = random_labels(g, rng, 0.6);
    LossConfig cfg;
    const auto kind = rng.bernoulli(0.5) ? SampleKind::Longitudinal : SampleKind::CrossSectional;
    const int epoch = rng.bernoulli(0.5) ? 9 : 0;
    const TotalLoss a = total_loss(p, y, wm, cfg, epoch, 10, kind);
    auto f = [&] { return total_loss(p, y, wm, cfg, epoch, 10, kind).breakdown.total; };
    double worst = 0.0;
    for (Head hd : kHeads) worst = std::max(worst, check_map(p[hd], a.grad[hd], f, h));
    return worst;
  });
  row("toy_model_chain", [&] {
    ModelInput in{Volume(g), Volume(g), random_labels(g, rng, 0.2), random_labels(g, rng, 0.6), {}};
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      in.x_t1[i] = rng.uniform(0.2, 1.0);
      in.x_t2[i] = rng.uniform(0.2, 1.0);
    }
    TrainingSample s{in, {}, SampleKind::Longitudinal};
    for (Head hd : kHeads) s.labels[hd] = random_labels(g, rng, 0.2);
    const LossConfig cfg = TrainConfig::default_loss();
    ToyModel m;
    // Redraw until the volume ratio is clear of the band edges, as above.
    for (bool near_edge = true; near_edge;) {
      for (int r = 0; r < 4; ++r)
        for (int f = 0; f < kFeatureCount; ++f) m.weights(r, f) = rng.uniform(-0.5, 0.5);
      m.weights = m.weights.cwiseProduct(m.head_mask);
      const PredictionSet p = forward(m, in);
      const double ratio = p.all_t2.data().sum() / p.all_t1.data().sum();
      near_edge = std::abs(ratio / cfg.alpha_high - 1.0) < 0.02 ||
                  std::abs(ratio / cfg.alpha_low - 1.0) < 0.02;
    }
    return grad_check(m, s, cfg, rng.bernoulli(0.5) ? 9 : 0, 10, h);
  });
  return rows;
}

std::string format_gradient_table(const std::vector<GradCheckRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-30s %9s %14s %10s  %s\n", "gradient", "instances",
                "max_rel_error", "tolerance", "result");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-30s %9d %14.3e %10.1e  %s\n", r.name.c_str(), r.instances,
                  r.max_rel_error, r.tolerance, r.pass ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace lesionforge
