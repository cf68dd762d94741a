#pragma once

// A per-voxel logistic segmenter with four heads, small enough to train on
// phantoms in seconds while exercising the full loss and the input pipeline.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionforge/assembly.hpp"
#include "lesionforge/heads.hpp"
#include "lesionforge/losses.hpp"
#include "lesionforge/manifest.hpp"

namespace lesionforge {

/// Per-voxel feature bank. Intensities are divided by the white-matter mean
/// of their own scan; neighborhood means use a clamped 3x3x3 box.
enum Feature : int {
  kX1 = 0,
  kX2,
  kDiff,  // x2 - x1
  kMean1,
  kMean2,
  kWm,
  kPrior,
  kBias,
  kFeatureCount
};

inline constexpr const char* kFeatureBankId = "voxel-stats-v1";

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, kFeatureCount>;
using HeadWeights = Eigen::Matrix<double, 4, kFeatureCount>;

FeatureMatrix compute_features(const ModelInput& in);

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  [[nodiscard]] int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct ToyModel {
  HeadWeights weights = HeadWeights::Zero();
  /// 1 where a head may read a feature. The all_t1 head never sees the
  /// baseline label channel.
  HeadWeights head_mask = default_head_mask();

  static HeadWeights default_head_mask();
};

void to_json(nlohmann::json& j, const ToyModel& m);
void from_json(const nlohmann::json& j, ToyModel& m);
ToyModel load_model(const std::filesystem::path& path);
void save_model(const ToyModel& m, const std::filesystem::path& path);

PredictionSet forward(const ToyModel& m, const ModelInput& in);
PredictionSet forward(const ToyModel& m, const FeatureMatrix& phi, const Grid& grid);

using Ensemble = std::vector<ToyModel>;

/// A single model file or {"members": [model, ...]}.
Ensemble load_ensemble(const std::filesystem::path& path);
void save_ensemble(const Ensemble& e, const std::filesystem::path& path);

/// Voxelwise mean of the members' probability maps.
PredictionSet ensemble_predict(const Ensemble& e, const ModelInput& in);

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 5.0;
  /// Samples per update; 0 means the whole training split.
  int batch_size = 0;
  LossConfig loss = default_loss();
  Index3 patch_size{32, 32, 32};
  std::uint64_t seed = 0;
  double prior_prob = 0.5;

  static LossConfig default_loss() {
    LossConfig c;
    c.volume_unit_mm3 = 1000.0;  // mL keeps the volumetric term near Dice scale
    return c;
  }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One assembled training example with its labels.
struct TrainingSample {
  ModelInput input;
  SampleLabels labels;
  SampleKind kind = SampleKind::CrossSectional;
};

/// Draws a window and a prior-label decision for `subject` and crops a patch.
TrainingSample draw_sample(const LoadedSubject& subject, const TrainConfig& cfg, Rng& rng);

/// Loss and analytic weight gradient of the curriculum objective.
struct ModelLoss {
  LossBreakdown breakdown;
  HeadWeights grad = HeadWeights::Zero();
};

ModelLoss model_loss(const ToyModel& m, const FeatureMatrix& phi, const TrainingSample& s,
                     const LossConfig& cfg, int epoch, int n_epochs);

struct TrainResult {
  ToyModel model;
  /// Mean breakdown over the samples of each epoch.
  std::vector<LossBreakdown> history;
};

TrainResult train(const std::vector<LoadedSubject>& subjects, const TrainConfig& cfg);
/// Trains on the train split of a manifest.
TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg);

/// K-fold ensemble: member k is trained without the k-th fold of subjects.
/// With one fold the single member sees every subject.
std::vector<TrainResult> train_folds(const std::vector<LoadedSubject>& subjects,
                                     const TrainConfig& cfg, int folds);

/// Relative error |a - n| / max(|a|, |n|) between the analytic weight gradient
/// and central finite differences, taken as vectors over every trainable weight.
double grad_check(const ToyModel& m, const TrainingSample& s, const LossConfig& cfg, int epoch,
                  int n_epochs, double step = 1e-3);

/// Adapter for run_subject.
SegmentationModel as_segmentation_model(const Ensemble& e);

}  // namespace lesionforge
