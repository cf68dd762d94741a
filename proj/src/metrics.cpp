#include "lesionforge/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace lesionforge {

double dice_score(const Mask& a, const Mask& g) {
  require_compatible(a.grid(), g.grid(), "dice");
  const Eigen::Index na = count(a), ng = count(g);
  if (na + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(count(mask_intersection(a, g))) /
         static_cast<double>(na + ng);
}

DetectionRule detection_rule_from_string(const std::string& s) {
  if (s == "literal") return DetectionRule::Literal;
  if (s == "lower_only") return DetectionRule::LowerOnly;
  throw ArgumentError("unknown detection rule \"" + s + "\" (expected literal or lower_only)");
}

std::string to_string(DetectionRule r) {
  return r == DetectionRule::Literal ? "literal" : "lower_only";
}

void to_json(nlohmann::json& j, const DetectionReport& r) {
  nlohmann::json lesions = nlohmann::json::array();
  for (const auto& l : r.per_lesion)
    lesions.push_back({{"gt_component", l.gt_component},
                       {"overlap_fraction", l.overlap_fraction},
                       {"detected", l.detected}});
  j = {{"tp", r.tp},
       {"n_gt_lesions", r.n_gt_lesions},
       {"n_pred_lesions", r.n_pred_lesions},
       {"n_pred_matched", r.n_pred_matched},
       {"sensitivity", r.sensitivity},
       {"precision", r.precision},
       {"f1", r.f1},
       {"per_lesion", lesions}};
}

DetectionReport detection_f1(const Mask& pred, const Mask& gt, const DetectionOptions& o) {
  require_compatible(pred.grid(), gt.grid(), "detection");
  if (!(o.min_overlap >= 0.0) || o.max_overlap < o.min_overlap)
    throw ArgumentError("overlap bounds must satisfy 0 <= min <= max");
  const Mask p = filter_small_components(pred, o.min_volume_mm3, o.connectivity);
  const Mask g = filter_small_components(gt, o.min_volume_mm3, o.connectivity);
  const auto gt_comps = connected_components(g, o.connectivity);
  const auto pred_comps = connected_components(p, o.connectivity);

  DetectionReport r;
  r.n_gt_lesions = static_cast<int>(gt_comps.size());
  r.n_pred_lesions = static_cast<int>(pred_comps.size());
  for (std::size_t k = 0; k < gt_comps.size(); ++k) {
    const auto& c = gt_comps[k];
    const auto hit = std::count_if(c.voxels.begin(), c.voxels.end(),
                                   [&](Eigen::Index v) { return p[v] != 0; });
    const double size = static_cast<double>(c.voxels.size());
    const double ov = static_cast<double>(hit);
    bool detected = ov >= o.min_overlap * size;
    if (o.rule == DetectionRule::Literal) detected = detected && ov <= o.max_overlap * size;
    r.per_lesion.push_back({static_cast<int>(k), ov / size, detected});
    if (detected) ++r.tp;
  }
  for (const auto& c : pred_comps)
    if (std::any_of(c.voxels.begin(), c.voxels.end(), [&](Eigen::Index v) { return g[v] != 0; }))
      ++r.n_pred_matched;

  r.sensitivity = r.n_gt_lesions == 0 ? 1.0 : static_cast<double>(r.tp) / r.n_gt_lesions;
  r.precision =
      r.n_pred_lesions == 0 ? 1.0 : static_cast<double>(r.n_pred_matched) / r.n_pred_lesions;
  const double s = r.sensitivity + r.precision;
  r.f1 = s == 0.0 ? 0.0 : 2.0 * r.sensitivity * r.precision / s;
  return r;
}

SubjectRecord invert_timepoints(const SubjectRecord& subject) {
  if (subject.format != SubjectFormat::Longitudinal || subject.timepoints.size() < 2)
    throw ArgumentError("subject " + subject.id + " is not longitudinal; nothing to invert");
  SubjectRecord out = subject;
  const auto& src = subject.timepoints;
  const std::size_t n = src.size();
  for (std::size_t j = 0; j < n; ++j) {
    TimepointPaths tp = src[n - 1 - j];
    tp.new_lesions.reset();
    tp.vanishing.reset();
    if (j > 0) {
      // Transition (j-1 -> j) reversed is the original transition into n-j.
      const TimepointPaths& later = src[n - j];
      tp.new_lesions = later.vanishing;
      tp.vanishing = later.new_lesions;
    }
    out.timepoints[j] = std::move(tp);
  }
  auto& a = out.availability;
  a.all_t1 = out.timepoints[0].all.has_value();
  a.all_t2 = out.timepoints[1].all.has_value();
  a.new_t2 = out.timepoints[1].new_lesions.has_value();
  a.vanishing_t2 = out.timepoints[1].vanishing.has_value();
  const auto problems = subject_problems(out);
  if (!problems.empty()) {
    std::string msg = "subject " + subject.id + " cannot be inverted:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ArgumentError(msg);
  }
  return out;
}

VolumeTrajectory volume_trajectory(const std::string& subject, const std::vector<Mask>& preds,
                                   const std::vector<Mask>& gts) {
  if (preds.size() != gts.size())
    throw ArgumentError("trajectory needs as many predictions as ground truths");
  if (preds.size() < 2) throw ArgumentError("trajectory needs at least two timepoints");
  VolumeTrajectory t{subject, {}, {}};
  for (std::size_t k = 0; k < preds.size(); ++k) {
    t.predicted_mm3.push_back(load_mm3(preds[k]));
    t.ground_truth_mm3.push_back(load_mm3(gts[k]));
  }
  return t;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ArgumentError("pearson needs two sequences of equal length >= 2");
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Map<const Eigen::ArrayXd> a(x.data(), n), b(y.data(), n);
  const Eigen::ArrayXd da = a - a.mean(), db = b - b.mean();
  const double sa = da.square().sum(), sb = db.square().sum();
  if (sa == 0.0 || sb == 0.0) throw UndefinedStatisticError("correlation undefined for constant input");
  return std::clamp((da * db).sum() / std::sqrt(sa * sb), -1.0, 1.0);
}

}  // namespace lesionforge
