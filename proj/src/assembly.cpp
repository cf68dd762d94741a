#include "lesionforge/assembly.hpp"

#include <string>

#include "lesionforge/nifti.hpp"

namespace lesionforge {

namespace {

Volume on_grid(Volume v, const Grid& grid) {
  if (!v.grid().compatible(grid)) v = resample(v, grid.spacing, Interpolation::Trilinear);
  return v;
}

Mask on_grid(Mask m, const Grid& grid) {
  if (!m.grid().compatible(grid)) m = resample(m, grid.spacing, Interpolation::Nearest);
  return m;
}

}  // namespace

LoadedSubject load_subject(const DatasetManifest& manifest, const SubjectRecord& record) {
  LoadedSubject out;
  out.id = record.id;
  out.format = record.format;
  out.availability = record.availability;
  if (record.timepoints.empty()) throw ValidationError("subject " + record.id + " has no timepoints");

  std::optional<Grid> grid;
  auto load_mask_opt = [&](const std::optional<std::string>& p) -> std::optional<Mask> {
    if (!p) return std::nullopt;
    Mask m = on_grid(load_mask(manifest.resolve(*p)), *grid);
    require_compatible(*grid, m.grid(), ("subject " + record.id).c_str());
    return m;
  };
  for (const auto& t : record.timepoints) {
    Timepoint tp;
    tp.image = load_nifti(manifest.resolve(t.image));
    if (!grid) grid = tp.image.grid();
    tp.image = on_grid(std::move(tp.image), *grid);
    require_compatible(*grid, tp.image.grid(), ("subject " + record.id).c_str());
    tp.wm = load_mask_opt(t.wm);
    tp.all = load_mask_opt(t.all);
    tp.new_lesions = load_mask_opt(t.new_lesions);
    tp.vanishing = load_mask_opt(t.vanishing);
    out.timepoints.push_back(std::move(tp));
  }
  return out;
}

ModelInput assemble(const LoadedSubject& subject, WindowPair pair, LabelSource source,
                    double prior_prob, Rng& rng, const Mask* previous) {
  const int t = subject.size();
  if (pair.first < 1 || pair.second < pair.first || pair.second > t) {
    throw ArgumentError("window (" + std::to_string(pair.first) + ", " +
                        std::to_string(pair.second) + ") is out of range for subject " +
                        subject.id);
  }
  if (!(prior_prob >= 0.0 && prior_prob <= 1.0)) {
    throw ArgumentError("prior_prob must lie in [0, 1]");
  }
  const Timepoint& a = subject.timepoints[pair.first - 1];
  const Timepoint& b = subject.timepoints[pair.second - 1];
  if (!b.wm) {
    throw ValidationError("subject " + subject.id + " has no white-matter mask at timepoint " +
                          std::to_string(pair.second));
  }
  const Grid& grid = a.image.grid();
  require_compatible(grid, b.image.grid(), "assemble images");
  require_compatible(grid, b.wm->grid(), "assemble wm");

  ModelInput in;
  in.x_t1 = a.image;
  in.wm_t2 = *b.wm;
  if (pair.first == pair.second) {
    in.x_t2 = a.image;
    in.flags.t2_duplicated = true;
    in.y_a_t1 = Mask(grid);
    in.flags.label_zero_substituted = true;
    return in;
  }
  in.x_t2 = b.image;

  const bool keep = rng.uniform() < prior_prob;
  const Mask* prior = nullptr;
  if (source == LabelSource::GroundTruth && a.all) {
    prior = &*a.all;
  } else if (source == LabelSource::PreviousPrediction) {
    if (previous == nullptr) throw ArgumentError("prediction source needs a previous mask");
    require_compatible(grid, previous->grid(), "assemble previous prediction");
    prior = previous;
  }
  if (prior != nullptr && keep) {
    in.y_a_t1 = *prior;
    in.flags.label_from_prediction = source == LabelSource::PreviousPrediction;
  } else {
    in.y_a_t1 = Mask(grid);
    in.flags.label_zero_substituted = true;
  }
  return in;
}

WindowPlan plan_windows(int timepoints) {
  if (timepoints < 1) throw ArgumentError("a window plan needs at least one timepoint");
  WindowPlan plan;
  plan.steps.push_back({{1, 1}, LabelSource::Zero});
  for (int k = 1; k < timepoints; ++k) {
    plan.steps.push_back({{k, k + 1}, LabelSource::PreviousPrediction});
  }
  return plan;
}

WindowPlan plan_windows(const SubjectRecord& subject) {
  if (subject.format != SubjectFormat::Longitudinal) {
    throw ArgumentError("plan_windows needs a longitudinal subject; \"" + subject.id +
                        "\" is cross-sectional (its plan is the single window (1,1))");
  }
  return plan_windows(static_cast<int>(subject.timepoints.size()));
}

std::vector<PredictionSet> run_subject(const LoadedSubject& subject,
                                       const SegmentationModel& model,
                                       const RunOptions& options) {
  const WindowPlan plan = plan_windows(subject.size());
  std::vector<PredictionSet> outputs;
  std::optional<Mask> previous;
  Rng unused(0);
  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const WindowStep& step = plan.steps[k];
    LabelSource source = step.source;
    if (k == 1 && options.with_prior && subject.timepoints.front().all) {
      source = LabelSource::GroundTruth;
    }
    const ModelInput in = assemble(subject, step.pair, source, 1.0, unused,
                                   previous ? &*previous : nullptr);
    PredictionSet out = model(in);
    validate_predictions(out);
    require_compatible(in.x_t1.grid(), out.all_t1.grid(), "model output");
    previous = binarize(k == 0 ? out.all_t1 : out.all_t2, options.threshold);
    outputs.push_back(std::move(out));
  }
  return outputs;
}

std::vector<Volume> all_lesion_series(const std::vector<PredictionSet>& outputs) {
  std::vector<Volume> out;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    out.push_back(k == 0 ? outputs[k].all_t1 : outputs[k].all_t2);
  }
  return out;
}

}  // namespace lesionforge
