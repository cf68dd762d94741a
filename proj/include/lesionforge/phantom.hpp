#pragma once

// Synthetic brain-like phantoms with known lesion ground truth.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionforge/lesionmix.hpp"
#include "lesionforge/manifest.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

struct PhantomSpec {
  Index3 dims{32, 32, 32};
  Eigen::Vector3d spacing{1.0, 1.0, 1.0};
  double background_intensity = 0.0;
  double tissue_intensity = 0.3;  // head outside white matter
  double wm_intensity = 0.5;
  std::pair<double, double> lesion_intensity_range{0.85, 1.0};
  int n_lesions = 4;
  std::pair<double, double> lesion_radius_range_mm{1.5, 2.5};
  /// Hyperintense blobs placed in head tissue outside white matter.
  int n_distractors = 0;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  /// Throws ArgumentError naming the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct Phantom {
  Volume image;
  Mask wm;
  Mask lesions;
  Mask distractors;
};

/// Ellipsoidal head around an ellipsoidal white-matter shell, with lesions
/// made of 1 to 3 overlapping spheres placed inside white matter without
/// touching each other. Deterministic per seed. Throws ValidationError when a
/// lesion cannot be placed.
Phantom make_phantom(const PhantomSpec& spec);

struct PhantomSeries {
  std::vector<Volume> images;
  Mask wm;
  std::vector<Mask> all;
  /// Per timepoint; entry 0 is empty.
  std::vector<Mask> new_lesions;
  std::vector<Mask> vanishing;
  std::vector<AugmentPlan> plans;  // one per step
};

/// T timepoints where step k scales the lesion load by alphas[k] (each in
/// [0.5, 2]) through synth_longitudinal, using the baseline lesions as bank.
PhantomSeries make_longitudinal(const PhantomSpec& spec, int timepoints,
                                const std::vector<double>& alphas);

struct PhantomDatasetOptions {
  std::string name = "phantom";
  int subjects = 4;
  int timepoints = 1;
  int test_subjects = 0;  // the last ones become the test split
  double alpha_low = 0.8;
  double alpha_high = 1.2;
};

/// Writes phantom subjects as NIfTI files plus `manifest.json` into `out_dir`
/// and returns the manifest. Subject i uses a seed forked from spec.seed.
DatasetManifest write_phantom_dataset(const PhantomSpec& spec, const PhantomDatasetOptions& opt,
                                      const std::filesystem::path& out_dir);

}  // namespace lesionforge
