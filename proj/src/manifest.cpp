#include "lesionforge/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "lesionforge/nifti.hpp"

namespace lesionforge {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path DatasetManifest::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

namespace {

// Collects schema problems as "<json pointer>: <message>".
class SchemaReader {
 public:
  std::vector<std::string> problems;

  const json* object_at(const json& parent, const std::string& key,
                        const std::string& ptr, bool required = true) {
    auto it = parent.find(key);
    if (it == parent.end()) {
      if (required) problems.push_back(ptr + "/" + key + ": missing");
      return nullptr;
    }
    return &*it;
  }

  std::optional<std::string> string_at(const json& parent, const std::string& key,
                                       const std::string& ptr, bool required = true) {
    const json* v = object_at(parent, key, ptr, required);
    if (v == nullptr) return std::nullopt;
    if (!v->is_string()) {
      problems.push_back(ptr + "/" + key + ": expected string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  bool bool_at(const json& parent, const std::string& key, const std::string& ptr) {
    const json* v = object_at(parent, key, ptr);
    if (v == nullptr) return false;
    if (!v->is_boolean()) {
      problems.push_back(ptr + "/" + key + ": expected boolean");
      return false;
    }
    return v->get<bool>();
  }
};

std::string format_name(SubjectFormat f) {
  return f == SubjectFormat::CrossSectional ? "cross_sectional" : "longitudinal";
}

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

}  // namespace

DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir) {
  SchemaReader r;
  DatasetManifest m;
  m.base_dir = base_dir;
  if (!j.is_object()) throw ManifestParseError("manifest: expected a JSON object at \"\"");

  if (const json* v = r.object_at(j, "schema", "")) {
    if (!v->is_number_integer() || v->get<int>() != kManifestSchemaVersion) {
      r.problems.push_back("/schema: expected " + std::to_string(kManifestSchemaVersion));
    }
  }
  m.name = r.string_at(j, "name", "").value_or("");

  const json* subjects = r.object_at(j, "subjects", "");
  if (subjects != nullptr && !subjects->is_array()) {
    r.problems.push_back("/subjects: expected array");
    subjects = nullptr;
  }
  if (subjects != nullptr) {
    for (std::size_t i = 0; i < subjects->size(); ++i) {
      const json& sj = (*subjects)[i];
      const std::string ptr = "/subjects/" + std::to_string(i);
      if (!sj.is_object()) {
        r.problems.push_back(ptr + ": expected object");
        continue;
      }
      SubjectRecord s;
      s.id = r.string_at(sj, "id", ptr).value_or("");
      s.dataset = r.string_at(sj, "dataset", ptr, false).value_or("");
      if (auto f = r.string_at(sj, "format", ptr)) {
        if (*f == "cross_sectional") {
          s.format = SubjectFormat::CrossSectional;
        } else if (*f == "longitudinal") {
          s.format = SubjectFormat::Longitudinal;
        } else {
          r.problems.push_back(ptr + "/format: expected \"cross_sectional\" or \"longitudinal\"");
        }
      }
      if (auto sp = r.string_at(sj, "split", ptr)) {
        if (*sp == "train") {
          s.split = Split::Train;
        } else if (*sp == "test") {
          s.split = Split::Test;
        } else {
          r.problems.push_back(ptr + "/split: expected \"train\" or \"test\"");
        }
      }
      if (const json* av = r.object_at(sj, "availability", ptr)) {
        const std::string ap = ptr + "/availability";
        if (!av->is_object()) {
          r.problems.push_back(ap + ": expected object");
        } else {
          s.availability.all_t1 = r.bool_at(*av, "all_t1", ap);
          s.availability.all_t2 = r.bool_at(*av, "all_t2", ap);
          s.availability.new_t2 = r.bool_at(*av, "new_t2", ap);
          s.availability.vanishing_t2 = r.bool_at(*av, "vanishing_t2", ap);
        }
      }
      if (const json* tps = r.object_at(sj, "timepoints", ptr)) {
        if (!tps->is_array()) {
          r.problems.push_back(ptr + "/timepoints: expected array");
        } else {
          for (std::size_t k = 0; k < tps->size(); ++k) {
            const json& tj = (*tps)[k];
            const std::string tp = ptr + "/timepoints/" + std::to_string(k);
            if (!tj.is_object()) {
              r.problems.push_back(tp + ": expected object");
              continue;
            }
            TimepointPaths t;
            t.image = r.string_at(tj, "image", tp).value_or("");
            t.wm = r.string_at(tj, "wm", tp, false);
            t.all = r.string_at(tj, "all", tp, false);
            t.new_lesions = r.string_at(tj, "new", tp, false);
            t.vanishing = r.string_at(tj, "vanishing", tp, false);
            s.timepoints.push_back(std::move(t));
          }
        }
      }
      m.subjects.push_back(std::move(s));
    }
  }

  if (!r.problems.empty()) {
    std::string msg = "manifest schema violation:";
    for (const auto& p : r.problems) msg += "\n  " + p;
    throw ManifestParseError(msg);
  }
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) {
    json tps = json::array();
    for (const auto& t : s.timepoints) {
      json tj{{"image", t.image}};
      if (t.wm) tj["wm"] = *t.wm;
      if (t.all) tj["all"] = *t.all;
      if (t.new_lesions) tj["new"] = *t.new_lesions;
      if (t.vanishing) tj["vanishing"] = *t.vanishing;
      tps.push_back(std::move(tj));
    }
    json sj{{"id", s.id},
            {"format", format_name(s.format)},
            {"availability",
             {{"all_t1", s.availability.all_t1},
              {"all_t2", s.availability.all_t2},
              {"new_t2", s.availability.new_t2},
              {"vanishing_t2", s.availability.vanishing_t2}}},
            {"split", split_name(s.split)},
            {"timepoints", std::move(tps)}};
    if (!s.dataset.empty()) sj["dataset"] = s.dataset;
    subjects.push_back(std::move(sj));
  }
  return json{{"schema", kManifestSchemaVersion}, {"name", m.name}, {"subjects", subjects}};
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << std::setw(2) << manifest_to_json(m) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> subject_problems(const SubjectRecord& s) {
  std::vector<std::string> out;
  const std::string who = "subject \"" + s.id + "\": ";
  const auto& a = s.availability;
  const auto n = s.timepoints.size();
  if (s.id.empty()) out.push_back(who + "empty id");
  if (s.format == SubjectFormat::CrossSectional) {
    if (n != 1) out.push_back(who + "cross-sectional subjects need exactly one timepoint");
    if (a.new_t2 || a.vanishing_t2 || a.all_t2) {
      out.push_back(who + "second-timepoint labels require a longitudinal subject");
    }
  } else if (n < 2) {
    out.push_back(who + "longitudinal subjects need at least two timepoints");
  }
  if (n == 0) return out;

  for (std::size_t k = 0; k < n; ++k) {
    if (s.timepoints[k].image.empty()) {
      out.push_back(who + "timepoint " + std::to_string(k + 1) + " has no image");
    }
  }
  if (a.all_t1 != s.timepoints[0].all.has_value()) {
    out.push_back(who + "all_t1 flag disagrees with the first timepoint's \"all\" label");
  }
  if (s.timepoints[0].new_lesions || s.timepoints[0].vanishing) {
    out.push_back(who + "the first timepoint cannot carry new/vanishing labels");
  }
  auto check_later = [&](bool flag, auto member, const char* name) {
    for (std::size_t k = 1; k < n; ++k) {
      if (flag != (s.timepoints[k].*member).has_value()) {
        out.push_back(who + name + " flag disagrees with timepoint " + std::to_string(k + 1));
      }
    }
  };
  check_later(a.all_t2, &TimepointPaths::all, "all_t2");
  check_later(a.new_t2, &TimepointPaths::new_lesions, "new_t2");
  check_later(a.vanishing_t2, &TimepointPaths::vanishing, "vanishing_t2");
  return out;
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
  std::vector<std::string> problems;
  std::set<std::string> ids;
  for (const auto& s : m.subjects) {
    if (!ids.insert(s.id).second) problems.push_back("duplicate subject id \"" + s.id + "\"");
    auto sp = subject_problems(s);
    problems.insert(problems.end(), sp.begin(), sp.end());
  }

  if (check_files) {
    std::vector<std::string> missing;
    for (const auto& s : m.subjects) {
      std::vector<Grid> grids;
      auto visit = [&](const std::optional<std::string>& p) {
        if (!p || p->empty()) return;
        const fs::path full = m.resolve(*p);
        if (!fs::exists(full)) {
          missing.push_back(full.string());
          return;
        }
        try {
          grids.push_back(read_nifti_grid(full));
        } catch (const Error& e) {
          problems.push_back("subject \"" + s.id + "\": " + e.what());
        }
      };
      for (const auto& t : s.timepoints) {
        visit(t.image);
        visit(t.wm);
        visit(t.all);
        visit(t.new_lesions);
        visit(t.vanishing);
      }
      for (std::size_t i = 1; i < grids.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
          const double e0 = grids[0].dims[a] * grids[0].spacing[a];
          const double ei = grids[i].dims[a] * grids[i].spacing[a];
          const double tol = std::max(grids[0].spacing[a], grids[i].spacing[a]);
          if (std::abs(e0 - ei) > tol) {
            problems.push_back("subject \"" + s.id +
                               "\": images do not cover the same physical extent");
            a = 3;
            i = grids.size();
          }
        }
      }
    }
    if (!missing.empty()) {
      std::string msg = "missing files:";
      for (const auto& p : missing) msg += "\n    " + p;
      problems.push_back(msg);
    }
  }

  if (!problems.empty()) {
    std::string msg = "manifest \"" + m.name + "\" failed validation:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

DatasetManifest parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing files:\n    " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestParseError("manifest is not valid JSON: " + std::string(e.what()));
  }
  DatasetManifest m = manifest_from_json(j, path.parent_path());
  validate_manifest(m, true);
  return m;
}

SummaryRow& SummaryRow::operator+=(const SummaryRow& o) {
  train_subjects += o.train_subjects;
  test_subjects += o.test_subjects;
  train_scans += o.train_scans;
  test_scans += o.test_scans;
  cross_sectional += o.cross_sectional;
  longitudinal += o.longitudinal;
  all_t1 += o.all_t1;
  all_t2 += o.all_t2;
  new_t2 += o.new_t2;
  vanishing_t2 += o.vanishing_t2;
  return *this;
}

ManifestSummary summarize(const DatasetManifest& m) {
  ManifestSummary out;
  out.total.dataset = "Total";
  std::map<std::string, std::size_t> row_of;
  for (const auto& s : m.subjects) {
    const std::string ds = m.dataset_of(s);
    auto [it, inserted] = row_of.try_emplace(ds, out.rows.size());
    if (inserted) out.rows.push_back(SummaryRow{.dataset = ds});
    SummaryRow add;
    const int scans = static_cast<int>(s.timepoints.size());
    (s.split == Split::Train ? add.train_subjects : add.test_subjects) = 1;
    (s.split == Split::Train ? add.train_scans : add.test_scans) = scans;
    (s.format == SubjectFormat::CrossSectional ? add.cross_sectional : add.longitudinal) = 1;
    add.all_t1 = s.availability.all_t1;
    add.all_t2 = s.availability.all_t2;
    add.new_t2 = s.availability.new_t2;
    add.vanishing_t2 = s.availability.vanishing_t2;
    out.rows[it->second] += add;
    out.total += add;
  }
  return out;
}

std::string format_summary(const ManifestSummary& s) {
  std::ostringstream os;
  auto line = [&](const SummaryRow& r) {
    os << std::left << std::setw(14) << r.dataset << std::right << std::setw(8)
       << r.train_subjects << std::setw(8) << r.test_subjects << std::setw(8)
       << r.train_scans << std::setw(8) << r.test_scans << std::setw(7)
       << r.cross_sectional << std::setw(7) << r.longitudinal << std::setw(7)
       << r.all_t1 << std::setw(7) << r.all_t2 << std::setw(7) << r.new_t2
       << std::setw(7) << r.vanishing_t2 << '\n';
  };
  os << std::left << std::setw(14) << "dataset" << std::right << std::setw(8) << "train"
     << std::setw(8) << "test" << std::setw(8) << "trscan" << std::setw(8) << "tescan"
     << std::setw(7) << "cross" << std::setw(7) << "long" << std::setw(7) << "Ya_t1"
     << std::setw(7) << "Ya_t2" << std::setw(7) << "Yn_t2" << std::setw(7) << "Yv_t2"
     << '\n';
  for (const auto& r : s.rows) line(r);
  line(s.total);
  return os.str();
}

DatasetManifest concat(const DatasetManifest& a, const DatasetManifest& b) {
  DatasetManifest out = a;
  for (SubjectRecord s : b.subjects) {
    s.dataset = b.dataset_of(s);
    if (b.base_dir != a.base_dir) {
      auto fix = [&](std::string& p) { p = b.resolve(p).string(); };
      auto fix_opt = [&](std::optional<std::string>& p) {
        if (p) fix(*p);
      };
      for (auto& t : s.timepoints) {
        fix(t.image);
        fix_opt(t.wm);
        fix_opt(t.all);
        fix_opt(t.new_lesions);
        fix_opt(t.vanishing);
      }
    }
    out.subjects.push_back(std::move(s));
  }
  for (auto& s : out.subjects) {
    if (s.dataset.empty()) s.dataset = a.name;
  }
  return out;
}

std::string scan_filename(const std::string& id, int timepoint, const std::string& kind) {
  return id + "_tp" + std::to_string(timepoint) + "_" + kind + ".nii.gz";
}

}  // namespace lesionforge
