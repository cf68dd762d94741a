#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "lesionforge/volume.hpp"

namespace lesionforge {

/// The four segmentation outputs: all lesions at both timepoints, new and
/// vanishing lesions at the second timepoint.
enum class Head { AllT1 = 0, AllT2 = 1, NewT2 = 2, VanishingT2 = 3 };

inline constexpr std::array<Head, 4> kHeads{Head::AllT1, Head::AllT2, Head::NewT2,
                                            Head::VanishingT2};

constexpr std::string_view head_name(Head h) {
  switch (h) {
    case Head::AllT1: return "all_t1";
    case Head::AllT2: return "all_t2";
    case Head::NewT2: return "new_t2";
    case Head::VanishingT2: return "vanishing_t2";
  }
  return "";
}

/// One value per head.
template <typename T>
struct HeadSet {
  T all_t1{};
  T all_t2{};
  T new_t2{};
  T vanishing_t2{};

  T& operator[](Head h) {
    switch (h) {
      case Head::AllT1: return all_t1;
      case Head::AllT2: return all_t2;
      case Head::NewT2: return new_t2;
      case Head::VanishingT2: break;
    }
    return vanishing_t2;
  }
  const T& operator[](Head h) const { return const_cast<HeadSet&>(*this)[h]; }
};

/// Probability maps in [0, 1], one per head.
using PredictionSet = HeadSet<Volume>;
/// Per-voxel partial derivatives of a loss with respect to each map.
using GradientSet = HeadSet<Volume>;
/// Ground truth per head; absent when the dataset does not annotate it.
using SampleLabels = HeadSet<std::optional<Mask>>;

/// Throws ContractError if the maps are not grid compatible or leave [0, 1].
void validate_predictions(const PredictionSet& p);

}  // namespace lesionforge
