#pragma once

// Lesion-level augmentation: compositing bank lesions into an image
// (populating) and removing lesions by fast-marching inpainting, plus the
// longitudinal synthesis built on both.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionforge/manifest.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

/// A lesion cropped to its bounding box plus a one-voxel margin. `mask`
/// holds only this lesion; `intensity` is the image over the same box.
struct LesionSample {
  Volume intensity;
  Mask mask;
  std::string source_id;
};

struct LesionBank {
  std::vector<LesionSample> samples;
};

struct LabeledImage {
  Volume image;
  Mask lesions;
  std::string id;
};

/// One sample per connected lesion across all inputs. Throws ValidationError
/// if the inputs contain no lesion at all.
LesionBank build_bank(std::span<const LabeledImage> images,
                      Connectivity connectivity = Connectivity::TwentySix);

/// Parameters of one lesion-level augmentation; applying the same parameters
/// to the same sample is bit-reproducible.
struct AugmentParams {
  std::array<bool, 3> flip{false, false, false};
  double scale = 1.0;             // isotropic, nearest-neighbor
  double intensity_factor = 1.0;  // multiplicative
  double noise_sigma = 0.0;       // additive Gaussian, absolute units
  std::uint64_t noise_seed = 0;

  static AugmentParams identity() { return {}; }
};

struct AugmentRanges {
  double scale_min = 0.8;
  double scale_max = 1.25;
  double intensity_min = 0.9;
  double intensity_max = 1.1;
  /// Noise sigma as a fraction of the patch intensity range.
  double noise_fraction = 0.02;
  int max_retries = 5;
};

LesionSample apply_augmentation(const LesionSample& s, const AugmentParams& p);

struct AugmentedSample {
  LesionSample sample;
  AugmentParams params;  // identity when every retry emptied the mask
};

/// Random flips, scaling, intensity scaling and noise. Draws that empty the
/// mask are retried; after `max_retries` failures the sample passes through.
AugmentedSample augment_sample(const LesionSample& s, Rng& rng,
                               const AugmentRanges& ranges = {});

struct PlacementOp {
  std::size_t sample_index = 0;
  AugmentParams params;
  Index3 offset{0, 0, 0};  // grid position of the patch origin
  double volume_mm3 = 0.0;
};

struct RemovalOp {
  std::size_t component_index = 0;  // into connected_components(input, 26)
  double volume_mm3 = 0.0;
};

/// Everything needed to replay an augmentation on the same input.
struct AugmentPlan {
  double target_load_mm3 = 0.0;
  double alpha = 1.0;
  double inpaint_sigma_mm = 1.0;
  std::vector<PlacementOp> placements;
  std::vector<RemovalOp> removals;
  /// Set when populating stopped before reaching the target.
  bool target_missed = false;
  std::string warning;

  [[nodiscard]] double max_lesion_volume_mm3() const;
};

void to_json(nlohmann::json& j, const AugmentPlan& p);
void from_json(const nlohmann::json& j, AugmentPlan& p);

struct AugmentResult {
  Volume image;
  Mask lesions;
  Mask changed;  // union of placed (populate) or removed (inpaint) masks
  AugmentPlan plan;
};

struct PopulateOptions {
  AugmentRanges ranges;
  /// Consecutive failed placements before giving up.
  int max_failed_placements = 50;
};

/// Adds bank lesions until the lesion load reaches `target_load_mm3`.
///
/// Each placement must lie inside `wm` and may neither overlap nor touch
/// (26-neighborhood) an existing lesion. Compositing is hard:
/// X' = X (1 - M) + F M and Y' = Y (1 - M) + M.
/// Throws ArgumentError when the target is below the current load.
AugmentResult populate(const Volume& image, const Mask& lesions, const LesionBank& bank,
                       const Mask& wm, double target_load_mm3, Rng& rng,
                       const PopulateOptions& options = {});

/// Telea-style fast-marching inpainting of the `unknown` voxels from the
/// known band around them (first-order extrapolation weighted by direction,
/// distance and arrival-time level, neighborhood radius in voxels).
Volume fast_marching_inpaint(const Volume& image, const Mask& unknown, int radius = 3);

/// Removes the listed components (indices into connected_components(lesions,
/// 26)). The region is filled by repeated boundary peeling: at each step the
/// remaining region is inpainted and its boundary layer takes the blurred
/// inpainting. Y' = Y - M exactly and voxels outside M are untouched.
AugmentResult inpaint(const Volume& image, const Mask& lesions,
                      const std::vector<std::size_t>& components_to_remove,
                      double sigma_mm = 1.0);

/// Replays a populate and/or inpaint plan (removals first, then placements).
AugmentResult apply_plan(const Volume& image, const Mask& lesions, const LesionBank& bank,
                         const AugmentPlan& plan);

struct SynthConfig {
  double alpha_low = 0.8;
  double alpha_high = 1.2;
  double inpaint_sigma_mm = 1.0;
  /// Fixes alpha instead of sampling it uniformly from [alpha_low, alpha_high].
  std::optional<double> alpha;
  PopulateOptions populate;
};

struct LongitudinalSynth {
  Volume image_t2;
  Mask all_t2;
  Mask new_lesions;
  Mask vanishing;
  AugmentPlan plan;
};

/// Second timepoint with lesion load alpha times the first. alpha >= 1
/// populates (placed lesions become `new_lesions`); alpha < 1 inpaints the
/// smallest lesions first until the load drops to the target (removed lesions
/// become `vanishing`). all_t2 == (lesions - vanishing) | new_lesions.
LongitudinalSynth synth_longitudinal(const Volume& image, const Mask& lesions,
                                     const LesionBank& bank, const Mask& wm,
                                     const SynthConfig& cfg, Rng& rng);

struct BalanceResult {
  DatasetManifest manifest;  // base_dir is the output directory
  std::vector<std::string> generated_ids;
};

/// Pads the train split of every dataset in the manifest to
/// `per_dataset_target` subjects with synthesized two-timepoint subjects
/// carrying all four labels. Files and per-subject plan JSON go to `out_dir`.
BalanceResult balance_dataset(const DatasetManifest& manifest, const LesionBank& bank,
                              int per_dataset_target, Rng& rng,
                              const std::filesystem::path& out_dir,
                              const SynthConfig& cfg = {});

/// Lesion bank from every labeled timepoint of the given split.
LesionBank bank_from_manifest(const DatasetManifest& manifest, Split split);

}  // namespace lesionforge
