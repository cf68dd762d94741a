#pragma once

// Anatomical-constraint losses with analytic gradients.
//
// The array-level functions are templates over Eigen array expressions so
// they work for any floating scalar; label arrays may be any numeric type
// (typically the uint8 data of a Mask) and are cast internally. Every
// "squared norm" is a mean over voxels.
//
// Soft boolean relaxations used throughout:
//   AND(a, b) = a * b
//   XOR(a, b) = a + b - 2ab
// Both agree with the logical operators on {0, 1}.

#include <nlohmann/json.hpp>

#include "lesionforge/heads.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

/// `AsWritten` keeps the XOR terms literally; `Intent` replaces them with
/// containment penalties (new lesions must lie inside the follow-up label,
/// vanishing lesions inside the baseline label, predictions inside WM).
enum class ConstraintMode { AsWritten, Intent };

enum class SampleKind { CrossSectional, Longitudinal };

struct LossConfig {
  double lambda_long = 2.0;
  double lambda_vol = 1.0;
  double lambda_spat = 1.0;
  double alpha_high = 1.2;
  double alpha_low = 0.8;
  /// Constraints switch on once epoch >= curriculum_fraction * n_epochs.
  double curriculum_fraction = 0.5;
  ConstraintMode xor_mode = ConstraintMode::Intent;
  double smooth_eps = 1.0;
  /// Lesion volumes enter the volumetric term in units of this many mm^3.
  double volume_unit_mm3 = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct LossValue {
  Scalar value{};
  ArrayX<Scalar> grad;
};

template <typename Scalar>
struct PairLossValue {
  Scalar value{};
  ArrayX<Scalar> grad_first;
  ArrayX<Scalar> grad_second;
};

/// Soft Dice loss 1 - (2 sum(p y) + eps) / (sum p + sum y + eps).
template <typename DP, typename DY>
LossValue<typename DP::Scalar> dice_loss(const Eigen::ArrayBase<DP>& p,
                                         const Eigen::ArrayBase<DY>& y,
                                         typename DP::Scalar eps) {
  using S = typename DP::Scalar;
  const ArrayX<S> yf = y.template cast<S>();
  const S inter = (p.derived() * yf).sum();
  const S denom = p.sum() + yf.sum() + eps;
  const S num = S(2) * inter + eps;
  LossValue<S> out;
  if (denom == S(0)) {
    // Only reachable with eps == 0 and both maps empty: a perfect match.
    out.value = S(0);
    out.grad = ArrayX<S>::Zero(p.size());
    return out;
  }
  out.value = S(1) - num / denom;
  out.grad = -(S(2) * yf * denom - num) / (denom * denom);
  return out;
}

/// Four-term longitudinal penalty on the new (p_n) and vanishing (p_v) maps.
///
/// AsWritten: |y1 AND pn|^2 + |y2 XOR pn|^2 + |y1 XOR pv|^2 + |y2 AND pv|^2
/// Intent:    |y1 AND pn|^2 + |pn (1 - y2)|^2 + |pv (1 - y1)|^2 + |y2 AND pv|^2
template <typename DN, typename DV, typename D1, typename D2>
PairLossValue<typename DN::Scalar> longitudinal_loss(
    const Eigen::ArrayBase<DN>& p_new, const Eigen::ArrayBase<DV>& p_vanish,
    const Eigen::ArrayBase<D1>& y_t1, const Eigen::ArrayBase<D2>& y_t2,
    ConstraintMode mode) {
  using S = typename DN::Scalar;
  const ArrayX<S> y1 = y_t1.template cast<S>();
  const ArrayX<S> y2 = y_t2.template cast<S>();
  const ArrayX<S> pn = p_new;
  const ArrayX<S> pv = p_vanish;
  const S n = static_cast<S>(pn.size());

  // Each term is mean(f^2); its derivative is 2 f f' / n.
  const ArrayX<S> a = y1 * pn;   // d/dpn = y1
  const ArrayX<S> d = y2 * pv;   // d/dpv = y2
  ArrayX<S> b, c, db, dc;
  if (mode == ConstraintMode::AsWritten) {
    b = y2 + pn - S(2) * y2 * pn;
    db = S(1) - S(2) * y2;
    c = y1 + pv - S(2) * y1 * pv;
    dc = S(1) - S(2) * y1;
  } else {
    b = pn * (S(1) - y2);
    db = S(1) - y2;
    c = pv * (S(1) - y1);
    dc = S(1) - y1;
  }

  PairLossValue<S> out;
  out.value = (a.square().sum() + b.square().sum() + c.square().sum() +
               d.square().sum()) / n;
  out.grad_first = S(2) * (a * y1 + b * db) / n;
  out.grad_second = S(2) * (c * dc + d * y2) / n;
  return out;
}

/// Piecewise-quadratic band penalty on the soft lesion volumes
/// V = voxel_scale * sum(p). Zero while alpha_low V1 < V2 < alpha_high V1.
template <typename D1, typename D2>
PairLossValue<typename D1::Scalar> volumetric_loss(
    const Eigen::ArrayBase<D1>& p_t1, const Eigen::ArrayBase<D2>& p_t2,
    double alpha_high, double alpha_low, double voxel_scale = 1.0) {
  using S = typename D1::Scalar;
  if (alpha_low > alpha_high) {
    throw ArgumentError("volumetric_loss requires alpha_low <= alpha_high");
  }
  const S scale = static_cast<S>(voxel_scale);
  const S v1 = scale * p_t1.sum();
  const S v2 = scale * p_t2.sum();
  S alpha = S(0);
  bool outside = false;
  if (v2 >= static_cast<S>(alpha_high) * v1) {
    alpha = static_cast<S>(alpha_high);
    outside = true;
  } else if (v2 <= static_cast<S>(alpha_low) * v1) {
    alpha = static_cast<S>(alpha_low);
    outside = true;
  }
  PairLossValue<S> out;
  const S r = outside ? v2 - alpha * v1 : S(0);
  out.value = r * r;
  out.grad_first = ArrayX<S>::Constant(p_t1.size(), -S(2) * r * alpha * scale);
  out.grad_second = ArrayX<S>::Constant(p_t2.size(), S(2) * r * scale);
  return out;
}

/// White-matter penalty on a single map.
/// AsWritten: |p XOR (1 - wm)|^2.  Intent: |p (1 - wm)|^2.
template <typename DP, typename DW>
LossValue<typename DP::Scalar> spatial_loss(const Eigen::ArrayBase<DP>& p,
                                            const Eigen::ArrayBase<DW>& wm,
                                            ConstraintMode mode) {
  using S = typename DP::Scalar;
  const ArrayX<S> outside = S(1) - wm.template cast<S>();
  const S n = static_cast<S>(p.size());
  LossValue<S> out;
  if (mode == ConstraintMode::AsWritten) {
    const ArrayX<S> f = p.derived() + outside - S(2) * p.derived() * outside;
    out.value = f.square().sum() / n;
    out.grad = S(2) * f * (S(1) - S(2) * outside) / n;
  } else {
    const ArrayX<S> f = p.derived() * outside;
    out.value = f.square().sum() / n;
    out.grad = S(2) * f * outside / n;
  }
  return out;
}

// Volume-level wrappers; they check grid compatibility.
LossValue<double> dice_loss(const Volume& p, const Mask& y, double eps);
PairLossValue<double> longitudinal_loss(const Volume& p_new, const Volume& p_vanish,
                                        const std::optional<Mask>& y_t1,
                                        const std::optional<Mask>& y_t2,
                                        ConstraintMode mode);
PairLossValue<double> volumetric_loss(const Volume& p_t1, const Volume& p_t2,
                                      double alpha_high, double alpha_low,
                                      double volume_unit_mm3 = 1.0);
LossValue<double> spatial_loss(const Volume& p, const Mask& wm, ConstraintMode mode);

struct LossBreakdown {
  double dice = 0.0;
  double longitudinal = 0.0;
  double volumetric = 0.0;
  double spatial = 0.0;
  double total = 0.0;
  bool active_constraints = false;
  /// False when the longitudinal term was skipped (cross-sectional sample or
  /// missing all-lesion labels).
  bool longitudinal_applied = false;
};

void to_json(nlohmann::json& j, const LossBreakdown& b);

/// True once `epoch` has reached the curriculum switch point.
bool constraints_active(const LossConfig& cfg, int epoch, int n_epochs);

struct TotalLoss {
  LossBreakdown breakdown;
  GradientSet grad;
};

/// Curriculum-weighted objective for one sample.
///
/// Dice terms are summed over heads that have a label. The constraint terms
/// are always evaluated for reporting but only enter `total` and the gradient
/// once active. Cross-sectional samples use alpha_high = alpha_low = 1 and
/// skip the longitudinal term; longitudinal samples skip it when either
/// all-lesion label is missing.
TotalLoss total_loss(const PredictionSet& preds, const SampleLabels& labels,
                     const Mask& wm, const LossConfig& cfg, int epoch, int n_epochs,
                     SampleKind kind);

}  // namespace lesionforge
