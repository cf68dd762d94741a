#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionforge/manifest.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

/// 2|A and G| / (|A| + |G|); 1 when both masks are empty.
double dice_score(const Mask& a, const Mask& g);

enum class DetectionRule {
  /// 0.10 |L| <= |L and pred| <= 0.70 |L|
  Literal,
  /// |L and pred| >= 0.10 |L|
  LowerOnly,
};

DetectionRule detection_rule_from_string(const std::string& s);
std::string to_string(DetectionRule r);

struct DetectionOptions {
  double min_overlap = 0.10;
  double max_overlap = 0.70;
  double min_volume_mm3 = 3.0;
  Connectivity connectivity = Connectivity::TwentySix;
  DetectionRule rule = DetectionRule::LowerOnly;
};

struct LesionOverlap {
  int gt_component = 0;
  double overlap_fraction = 0.0;
  bool detected = false;
};

struct DetectionReport {
  int tp = 0;  // detected ground-truth lesions
  int n_gt_lesions = 0;
  int n_pred_lesions = 0;
  int n_pred_matched = 0;  // predicted lesions touching any ground-truth lesion
  double sensitivity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::vector<LesionOverlap> per_lesion;
};

void to_json(nlohmann::json& j, const DetectionReport& r);

/// Lesion-wise sensitivity, precision and F1. Both masks are first stripped
/// of components below `min_volume_mm3`. Sensitivity is 1 without ground-truth
/// lesions and precision is 1 without predicted lesions, so two empty masks
/// score F1 = 1; F1 is 0 whenever sensitivity + precision is 0.
DetectionReport detection_f1(const Mask& pred, const Mask& gt,
                             const DetectionOptions& options = {});

/// Reverses the timepoints of a longitudinal subject. Lesions that appear
/// between two scans vanish between them in reversed order, so new and
/// vanishing labels trade places and the availability flags follow. Applying
/// it twice gives back the original record.
SubjectRecord invert_timepoints(const SubjectRecord& subject);

struct VolumeTrajectory {
  std::string subject;
  std::vector<double> predicted_mm3;
  std::vector<double> ground_truth_mm3;
};

VolumeTrajectory volume_trajectory(const std::string& subject, const std::vector<Mask>& preds,
                                   const std::vector<Mask>& gts);

/// Pearson correlation; throws UndefinedStatisticError for constant input.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace lesionforge
