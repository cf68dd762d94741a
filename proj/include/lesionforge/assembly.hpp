#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lesionforge/heads.hpp"
#include "lesionforge/manifest.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

/// One scan with whichever label maps its dataset provides.
struct Timepoint {
  Volume image;
  std::optional<Mask> wm;
  std::optional<Mask> all;
  std::optional<Mask> new_lesions;
  std::optional<Mask> vanishing;
};

/// A subject with its images in memory, all on one grid.
struct LoadedSubject {
  std::string id;
  SubjectFormat format = SubjectFormat::CrossSectional;
  LabelAvailability availability;
  std::vector<Timepoint> timepoints;

  [[nodiscard]] int size() const { return static_cast<int>(timepoints.size()); }
  [[nodiscard]] const Grid& grid() const { return timepoints.front().image.grid(); }
};

/// Loads every file of a subject and resamples it onto the grid of the first
/// image (trilinear for images, nearest for masks).
LoadedSubject load_subject(const DatasetManifest& manifest, const SubjectRecord& record);

struct InputFlags {
  bool t2_duplicated = false;
  bool label_zero_substituted = false;
  bool label_from_prediction = false;
};

/// The four input channels: baseline scan, follow-up scan, baseline
/// all-lesion label and follow-up white-matter mask.
struct ModelInput {
  Volume x_t1;
  Volume x_t2;
  Mask y_a_t1;
  Mask wm_t2;
  InputFlags flags;
};

enum class LabelSource { GroundTruth, PreviousPrediction, Zero };

/// 1-based timepoint indices.
struct WindowPair {
  int first = 1;
  int second = 1;
  bool operator==(const WindowPair&) const = default;
};

struct WindowStep {
  WindowPair pair;
  LabelSource source = LabelSource::Zero;
};

struct WindowPlan {
  std::vector<WindowStep> steps;
};

/// Builds the model input for one window.
///
/// Equal indices duplicate the scan into the follow-up channel and zero the
/// prior label. Otherwise the prior comes from `source`; for ground truth and
/// prediction sources it is kept with probability `prior_prob` (one draw from
/// `rng` per call) and zero-substituted otherwise. Throws ValidationError when
/// the follow-up WM mask is missing, ArgumentError for bad indices or when a
/// prediction source has no `previous` mask.
ModelInput assemble(const LoadedSubject& subject, WindowPair pair, LabelSource source,
                    double prior_prob, Rng& rng, const Mask* previous = nullptr);

/// Sliding window over T timepoints: (1,1), (1,2), ..., (T-1,T).
WindowPlan plan_windows(int timepoints);
/// As above for a longitudinal record; cross-sectional records are rejected.
WindowPlan plan_windows(const SubjectRecord& subject);

using SegmentationModel = std::function<PredictionSet(const ModelInput&)>;

struct RunOptions {
  /// Feed the stored baseline label into the first follow-up window when the
  /// subject has one; later windows always use the previous prediction.
  bool with_prior = true;
  double threshold = 0.5;
};

/// Runs the sliding window; element k is the output of window k, so the
/// all-lesion map for timepoint 1 is `[0].all_t1` and for timepoint k > 1 it
/// is `[k-1].all_t2`. Throws ContractError if the model leaves [0, 1].
std::vector<PredictionSet> run_subject(const LoadedSubject& subject,
                                       const SegmentationModel& model,
                                       const RunOptions& options = {});

/// All-lesion probability map for each timepoint from run_subject output.
std::vector<Volume> all_lesion_series(const std::vector<PredictionSet>& outputs);

}  // namespace lesionforge
