#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesionforge/error.hpp"

namespace lesionforge {

enum class SubjectFormat { CrossSectional, Longitudinal };
enum class Split { Train, Test };

/// Which of the four label maps a subject's dataset annotates.
struct LabelAvailability {
  bool all_t1 = false;
  bool all_t2 = false;
  bool new_t2 = false;
  bool vanishing_t2 = false;

  bool operator==(const LabelAvailability&) const = default;
};

/// File paths for one scan. Paths are kept as written; relative paths are
/// resolved against DatasetManifest::base_dir.
struct TimepointPaths {
  std::string image;
  std::optional<std::string> wm;
  std::optional<std::string> all;
  std::optional<std::string> new_lesions;
  std::optional<std::string> vanishing;

  bool operator==(const TimepointPaths&) const = default;
};

struct SubjectRecord {
  std::string id;
  SubjectFormat format = SubjectFormat::CrossSectional;
  LabelAvailability availability;
  Split split = Split::Train;
  std::vector<TimepointPaths> timepoints;
  /// Source dataset for multi-dataset manifests; empty means the manifest name.
  std::string dataset;

  bool operator==(const SubjectRecord&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::vector<SubjectRecord> subjects;
  std::filesystem::path base_dir;

  [[nodiscard]] std::filesystem::path resolve(const std::string& p) const;
  [[nodiscard]] std::string dataset_of(const SubjectRecord& s) const {
    return s.dataset.empty() ? name : s.dataset;
  }
};

inline constexpr int kManifestSchemaVersion = 1;

/// Schema violations; the message lists every offending JSON pointer.
class ManifestParseError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Reads and validates a manifest file. Relative paths resolve against the
/// manifest's directory.
DatasetManifest parse_manifest(const std::filesystem::path& path);

/// Schema-level decoding only (no invariant or file checks).
DatasetManifest manifest_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir);
nlohmann::json manifest_to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// Checks every record invariant and, when `check_files` is set, that each
/// referenced file exists and that grids within a subject cover the same
/// physical extent. All problems are gathered into one ValidationError.
void validate_manifest(const DatasetManifest& m, bool check_files = true);

/// Structural invariants of one subject; returns problems instead of throwing.
std::vector<std::string> subject_problems(const SubjectRecord& s);

struct SummaryRow {
  std::string dataset;
  int train_subjects = 0;
  int test_subjects = 0;
  int train_scans = 0;
  int test_scans = 0;
  int cross_sectional = 0;
  int longitudinal = 0;
  int all_t1 = 0;
  int all_t2 = 0;
  int new_t2 = 0;
  int vanishing_t2 = 0;

  SummaryRow& operator+=(const SummaryRow& o);
  bool operator==(const SummaryRow&) const = default;
};

struct ManifestSummary {
  std::vector<SummaryRow> rows;  // one per dataset, in first-seen order
  SummaryRow total;
};

ManifestSummary summarize(const DatasetManifest& m);
std::string format_summary(const ManifestSummary& s);

/// Conventional file name for one channel of one scan, e.g.
/// "s01_tp2_new.nii.gz". Timepoints are 1-based.
std::string scan_filename(const std::string& id, int timepoint, const std::string& kind);

/// Subjects of `b` appended to `a`; the name and base_dir of `a` are kept.
DatasetManifest concat(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace lesionforge
