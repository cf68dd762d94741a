#include "lesionforge/losses.hpp"

#include <cmath>
#include <string>

namespace lesionforge {

void LossConfig::validate() const {
  if (!(curriculum_fraction > 0.0 && curriculum_fraction <= 1.0)) {
    throw ArgumentError("curriculum_fraction must lie in (0, 1]");
  }
  if (lambda_long < 0.0 || lambda_vol < 0.0 || lambda_spat < 0.0) {
    throw ArgumentError("loss weights must be non-negative");
  }
  if (!(alpha_low <= 1.0 && 1.0 <= alpha_high)) {
    throw ArgumentError("alpha_low <= 1 <= alpha_high is required");
  }
  if (smooth_eps < 0.0) throw ArgumentError("smooth_eps must be non-negative");
  if (!(volume_unit_mm3 > 0.0)) throw ArgumentError("volume_unit_mm3 must be positive");
}

namespace {

const char* mode_name(ConstraintMode m) {
  return m == ConstraintMode::AsWritten ? "as_written" : "intent";
}

ConstraintMode mode_from_name(const std::string& s) {
  if (s == "as_written") return ConstraintMode::AsWritten;
  if (s == "intent") return ConstraintMode::Intent;
  throw ArgumentError("xor_mode must be \"as_written\" or \"intent\", got \"" + s + "\"");
}

}  // namespace

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"lambda_long", c.lambda_long},
                     {"lambda_vol", c.lambda_vol},
                     {"lambda_spat", c.lambda_spat},
                     {"alpha_high", c.alpha_high},
                     {"alpha_low", c.alpha_low},
                     {"curriculum_fraction", c.curriculum_fraction},
                     {"xor_mode", mode_name(c.xor_mode)},
                     {"smooth_eps", c.smooth_eps},
                     {"volume_unit_mm3", c.volume_unit_mm3}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.lambda_long = j.value("lambda_long", d.lambda_long);
  c.lambda_vol = j.value("lambda_vol", d.lambda_vol);
  c.lambda_spat = j.value("lambda_spat", d.lambda_spat);
  c.alpha_high = j.value("alpha_high", d.alpha_high);
  c.alpha_low = j.value("alpha_low", d.alpha_low);
  c.curriculum_fraction = j.value("curriculum_fraction", d.curriculum_fraction);
  c.xor_mode = mode_from_name(j.value("xor_mode", std::string(mode_name(d.xor_mode))));
  c.smooth_eps = j.value("smooth_eps", d.smooth_eps);
  c.volume_unit_mm3 = j.value("volume_unit_mm3", d.volume_unit_mm3);
  c.validate();
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json{{"dice", b.dice},
                     {"longitudinal", b.longitudinal},
                     {"volumetric", b.volumetric},
                     {"spatial", b.spatial},
                     {"total", b.total},
                     {"active_constraints", b.active_constraints},
                     {"longitudinal_applied", b.longitudinal_applied}};
}

LossValue<double> dice_loss(const Volume& p, const Mask& y, double eps) {
  require_compatible(p.grid(), y.grid(), "dice_loss");
  return dice_loss(p.data(), y.data(), eps);
}

PairLossValue<double> longitudinal_loss(const Volume& p_new, const Volume& p_vanish,
                                        const std::optional<Mask>& y_t1,
                                        const std::optional<Mask>& y_t2,
                                        ConstraintMode mode) {
  if (!y_t1 || !y_t2) {
    throw PreconditionError(
        "longitudinal_loss needs all-lesion labels at both timepoints");
  }
  require_compatible(p_new.grid(), p_vanish.grid(), "longitudinal_loss");
  require_compatible(p_new.grid(), y_t1->grid(), "longitudinal_loss");
  require_compatible(p_new.grid(), y_t2->grid(), "longitudinal_loss");
  return longitudinal_loss(p_new.data(), p_vanish.data(), y_t1->data(), y_t2->data(),
                           mode);
}

PairLossValue<double> volumetric_loss(const Volume& p_t1, const Volume& p_t2,
                                      double alpha_high, double alpha_low,
                                      double volume_unit_mm3) {
  require_compatible(p_t1.grid(), p_t2.grid(), "volumetric_loss");
  return volumetric_loss(p_t1.data(), p_t2.data(), alpha_high, alpha_low,
                         p_t1.grid().voxel_volume() / volume_unit_mm3);
}

LossValue<double> spatial_loss(const Volume& p, const Mask& wm, ConstraintMode mode) {
  require_compatible(p.grid(), wm.grid(), "spatial_loss");
  return spatial_loss(p.data(), wm.data(), mode);
}

bool constraints_active(const LossConfig& cfg, int epoch, int n_epochs) {
  return static_cast<double>(epoch) >= cfg.curriculum_fraction * n_epochs;
}

TotalLoss total_loss(const PredictionSet& preds, const SampleLabels& labels,
                     const Mask& wm, const LossConfig& cfg, int epoch, int n_epochs,
                     SampleKind kind) {
  cfg.validate();
  if (n_epochs <= 0) throw ArgumentError("n_epochs must be positive");
  const Grid& grid = preds.all_t1.grid();
  for (Head h : kHeads) {
    require_compatible(grid, preds[h].grid(), "total_loss predictions");
    if (labels[h]) require_compatible(grid, labels[h]->grid(), "total_loss labels");
  }
  require_compatible(grid, wm.grid(), "total_loss wm");

  TotalLoss out;
  LossBreakdown& b = out.breakdown;
  b.active_constraints = constraints_active(cfg, epoch, n_epochs);
  const double on = b.active_constraints ? 1.0 : 0.0;

  for (Head h : kHeads) {
    out.grad[h] = Volume(grid);
    if (!labels[h]) continue;
    const auto d = dice_loss(preds[h].data(), labels[h]->data(), cfg.smooth_eps);
    b.dice += d.value;
    out.grad[h].data() += d.grad;
  }

  if (kind == SampleKind::Longitudinal && labels.all_t1 && labels.all_t2) {
    const auto l = longitudinal_loss(preds.new_t2.data(), preds.vanishing_t2.data(),
                                     labels.all_t1->data(), labels.all_t2->data(),
                                     cfg.xor_mode);
    b.longitudinal = l.value;
    b.longitudinal_applied = true;
    const double w = on * cfg.lambda_long;
    out.grad.new_t2.data() += w * l.grad_first;
    out.grad.vanishing_t2.data() += w * l.grad_second;
  }

  const bool cross = kind == SampleKind::CrossSectional;
  const auto v = volumetric_loss(preds.all_t1.data(), preds.all_t2.data(),
                                 cross ? 1.0 : cfg.alpha_high, cross ? 1.0 : cfg.alpha_low,
                                 grid.voxel_volume() / cfg.volume_unit_mm3);
  b.volumetric = v.value;
  out.grad.all_t1.data() += on * cfg.lambda_vol * v.grad_first;
  out.grad.all_t2.data() += on * cfg.lambda_vol * v.grad_second;

  for (Head h : kHeads) {
    const auto s = spatial_loss(preds[h].data(), wm.data(), cfg.xor_mode);
    b.spatial += s.value;
    out.grad[h].data() += on * cfg.lambda_spat * s.grad;
  }

  b.total = b.active_constraints
                ? b.dice + cfg.lambda_long * b.longitudinal +
                      cfg.lambda_vol * b.volumetric + cfg.lambda_spat * b.spatial
                : b.dice;
  return out;
}

}  // namespace lesionforge
