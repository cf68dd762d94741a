// Command-line front end: assemble, loss-check, augment, score, synth,
// train-toy, predict.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lesionforge/assembly.hpp"
#include "lesionforge/gradcheck.hpp"
#include "lesionforge/lesionmix.hpp"
#include "lesionforge/manifest.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/nifti.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/toytrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lesionforge;

namespace {

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

const SubjectRecord& find_subject(const DatasetManifest& m, const std::string& id) {
  for (const auto& s : m.subjects)
    if (s.id == id) return s;
  throw ArgumentError("subject " + id + " not found in manifest " + m.name);
}

std::vector<const SubjectRecord*> select_split(const DatasetManifest& m, const std::string& split) {
  std::vector<const SubjectRecord*> out;
  for (const auto& s : m.subjects) {
    if (split == "all" || (split == "train" && s.split == Split::Train) ||
        (split == "test" && s.split == Split::Test))
      out.push_back(&s);
  }
  return out;
}

// ---------------------------------------------------------------- assemble

struct AssembleArgs {
  std::string manifest, subject, out;
  int first = 0, second = 0;
  double prior_prob = 1.0;
  std::uint64_t seed = 0;
};

int run_assemble(const AssembleArgs& a) {
  const DatasetManifest m = parse_manifest(a.manifest);
  const SubjectRecord& rec = find_subject(m, a.subject);
  const LoadedSubject subj = load_subject(m, rec);
  WindowPair pair{1, subj.size() >= 2 ? 2 : 1};
  if (a.first > 0) pair.first = a.first;
  if (a.second > 0) pair.second = a.second;
  Rng rng(a.seed);
  const ModelInput in = assemble(subj, pair, LabelSource::GroundTruth, a.prior_prob, rng);
  const fs::path out(a.out);
  fs::create_directories(out);
  save_nifti(in.x_t1, out / "x_t1.nii.gz");
  save_nifti(in.x_t2, out / "x_t2.nii.gz");
  save_nifti(in.y_a_t1, out / "y_a_t1.nii.gz");
  save_nifti(in.wm_t2, out / "wm_t2.nii.gz");
  write_json_file({{"subject", rec.id},
                   {"pair", {pair.first, pair.second}},
                   {"t2_duplicated", in.flags.t2_duplicated},
                   {"label_zero_substituted", in.flags.label_zero_substituted},
                   {"label_from_prediction", in.flags.label_from_prediction}},
                  out / "flags.json");
  std::cout << "wrote 4 channels for " << rec.id << " window (" << pair.first << ", "
            << pair.second << ") to " << out.string() << '\n';
  return 0;
}

// --------------------------------------------------------------- loss-check

int run_loss_check(const GradCheckOptions& o) {
  const auto rows = run_gradient_suite(o);
  std::cout << format_gradient_table(rows);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
  return ok ? 0 : 1;
}

// ------------------------------------------------------------------ augment

struct AugmentArgs {
  std::string manifest, bank_from = "train", out;
  int target = 80;
  std::uint64_t seed = 0;
  double alpha_low = 0.8, alpha_high = 1.2;
};

int run_augment(const AugmentArgs& a) {
  const DatasetManifest m = parse_manifest(a.manifest);
  Split split = Split::Train;
  if (a.bank_from == "test") split = Split::Test;
  else if (a.bank_from != "train") throw ArgumentError("--bank-from must be train or test");
  const LesionBank bank = bank_from_manifest(m, split);
  Rng rng(a.seed);
  SynthConfig cfg;
  cfg.alpha_low = a.alpha_low;
  cfg.alpha_high = a.alpha_high;
  const BalanceResult r = balance_dataset(m, bank, a.target, rng, a.out, cfg);
  save_manifest(r.manifest, fs::path(a.out) / "manifest.json");
  std::cout << "lesion bank: " << bank.samples.size() << " lesions\n"
            << "generated " << r.generated_ids.size() << " subjects\n"
            << format_summary(summarize(r.manifest));
  return 0;
}

// -------------------------------------------------------------------- score

struct ScoreArgs {
  std::string pred, gt, task = "all", rule = "lower_only", json_out;
  double min_volume = 3.0;
};

int run_score(const ScoreArgs& a) {
  if (a.task != "all" && a.task != "new" && a.task != "vanishing")
    throw ArgumentError("--task must be all, new or vanishing");
  DetectionOptions opt;
  opt.rule = detection_rule_from_string(a.rule);
  opt.min_volume_mm3 = a.min_volume;
  const std::string suffix_gz = "_" + a.task + ".nii.gz", suffix = "_" + a.task + ".nii";
  auto matches = [&](const std::string& n) {
    auto ends = [&](const std::string& s) {
      return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
    };
    return ends(suffix_gz) || ends(suffix);
  };
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a.pred))
    if (e.is_regular_file() && matches(e.path().filename().string()))
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty())
    throw ValidationError("no *" + suffix_gz + " predictions in " + a.pred);

  json cases = json::array();
  double dice_sum = 0.0, f1_sum = 0.0;
  std::printf("%-36s %8s %8s %8s %8s\n", "case", "dice", "S_L", "P_L", "F1");
  for (const auto& n : names) {
    const fs::path gt = fs::path(a.gt) / n;
    if (!fs::exists(gt)) throw ValidationError("no ground truth for prediction " + n);
    const Mask p = load_mask(fs::path(a.pred) / n), g = load_mask(gt);
    const double d = dice_score(p, g);
    const DetectionReport r = detection_f1(p, g, opt);
    dice_sum += d;
    f1_sum += r.f1;
    std::printf("%-36s %8.4f %8.4f %8.4f %8.4f\n", n.c_str(), d, r.sensitivity, r.precision, r.f1);
    cases.push_back({{"case", n}, {"dice", d}, {"detection", r}});
  }
  const double k = static_cast<double>(names.size());
  std::printf("%-36s %8.4f %17s %8.4f\n", "mean", dice_sum / k, "", f1_sum / k);
  if (!a.json_out.empty()) {
    write_json_file({{"task", a.task},
                     {"rule", to_string(opt.rule)},
                     {"min_volume_mm3", opt.min_volume_mm3},
                     {"mean_dice", dice_sum / k},
                     {"mean_f1", f1_sum / k},
                     {"cases", cases}},
                    a.json_out);
  }
  return 0;
}

// -------------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec, out, name = "phantom";
  int subjects = 4, timepoints = 1, test = 0;
  double alpha_low = 0.8, alpha_high = 1.2;
};

int run_synth(const SynthArgs& a) {
  const PhantomSpec spec = a.spec.empty() ? PhantomSpec{} : read_json_file(a.spec).get<PhantomSpec>();
  PhantomDatasetOptions o;
  o.name = a.name;
  o.subjects = a.subjects;
  o.timepoints = a.timepoints;
  o.test_subjects = a.test;
  o.alpha_low = a.alpha_low;
  o.alpha_high = a.alpha_high;
  const DatasetManifest m = write_phantom_dataset(spec, o, a.out);
  std::cout << format_summary(summarize(m)) << "manifest: "
            << (fs::path(a.out) / "manifest.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train-toy

struct TrainArgs {
  std::string manifest, config, out, history;
  int folds = 1;
};

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = a.config.empty() ? TrainConfig{} : read_json_file(a.config).get<TrainConfig>();
  const DatasetManifest m = parse_manifest(a.manifest);
  std::vector<LoadedSubject> subjects;
  for (const auto* r : select_split(m, "train")) subjects.push_back(load_subject(m, *r));
  if (subjects.empty()) throw ValidationError("manifest has no train subjects");
  const auto results = train_folds(subjects, cfg, a.folds);
  Ensemble e;
  json history = json::array();
  for (const auto& r : results) {
    e.push_back(r.model);
    json rows = json::array();
    for (const auto& row : r.history) rows.push_back(row);
    history.push_back(rows);
    const auto& last = r.history.back();
    std::printf("member %zu: final total %.6f (dice %.6f long %.6f vol %.6f spat %.6f)\n",
                e.size(), last.total, last.dice, last.longitudinal, last.volumetric, last.spatial);
  }
  save_ensemble(e, a.out);
  if (!a.history.empty()) write_json_file(history, a.history);
  std::cout << "saved " << e.size() << " member(s) to " << a.out << '\n';
  return 0;
}

// ------------------------------------------------------------------ predict

struct PredictArgs {
  std::string model, manifest, out, split = "test";
  double threshold = 0.5;
  bool with_prior = true;
};

int run_predict(const PredictArgs& a) {
  const Ensemble e = load_ensemble(a.model);
  const DatasetManifest m = parse_manifest(a.manifest);
  const fs::path out(a.out);
  fs::create_directories(out);
  RunOptions ro;
  ro.with_prior = a.with_prior;
  ro.threshold = a.threshold;
  const SegmentationModel model = as_segmentation_model(e);
  int written = 0;
  for (const auto* rec : select_split(m, a.split)) {
    const LoadedSubject subj = load_subject(m, *rec);
    const auto outs = run_subject(subj, model, ro);
    for (std::size_t k = 0; k < outs.size(); ++k) {
      // Window 0 is (1, 1); window k > 0 predicts timepoint k + 1.
      const int target = static_cast<int>(k) + 1;
      const PredictionSet& p = outs[k];
      for (Head h : kHeads)
        save_nifti(p[h], out / scan_filename(rec->id, target, "prob_" + std::string(head_name(h))));
      if (k == 0) {
        save_nifti(binarize(p.all_t1, a.threshold), out / scan_filename(rec->id, 1, "all"));
      } else {
        save_nifti(binarize(p.all_t2, a.threshold), out / scan_filename(rec->id, target, "all"));
        save_nifti(binarize(p.new_t2, a.threshold), out / scan_filename(rec->id, target, "new"));
        save_nifti(binarize(p.vanishing_t2, a.threshold),
                   out / scan_filename(rec->id, target, "vanishing"));
      }
      ++written;
    }
  }
  std::cout << "wrote " << written << " windows to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Longitudinal lesion segmentation toolkit"};
  app.require_subcommand(1);

  AssembleArgs as;
  auto* c_as = app.add_subcommand("assemble", "Write the four model input channels of a subject");
  c_as->add_option("--manifest", as.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_as->add_option("--subject", as.subject, "Subject id")->required();
  c_as->add_option("--out", as.out, "Output directory")->required();
  c_as->add_option("--first", as.first, "First timepoint of the window (1-based)");
  c_as->add_option("--second", as.second, "Second timepoint of the window (1-based)");
  c_as->add_option("--prior-prob", as.prior_prob, "Probability of keeping the baseline label")
      ->check(CLI::Range(0.0, 1.0));
  c_as->add_option("--seed", as.seed, "Random seed");

  GradCheckOptions gc;
  auto* c_gc = app.add_subcommand("loss-check", "Verify loss gradients by finite differences");
  c_gc->add_option("--instances", gc.instances, "Random instances per gradient")->check(CLI::PositiveNumber);
  c_gc->add_option("--seed", gc.seed, "Random seed");
  c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error");

  AugmentArgs au;
  auto* c_au = app.add_subcommand("augment", "Pad each dataset with synthesized longitudinal subjects");
  c_au->add_option("--manifest", au.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_au->add_option("--bank-from", au.bank_from, "Split providing the lesion bank (train or test)");
  c_au->add_option("--target-per-dataset", au.target, "Train subjects per dataset")->required();
  c_au->add_option("--seed", au.seed, "Random seed");
  c_au->add_option("--alpha-low", au.alpha_low, "Lower lesion-load ratio");
  c_au->add_option("--alpha-high", au.alpha_high, "Upper lesion-load ratio");
  c_au->add_option("--out", au.out, "Output directory")->required();

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "Dice and lesion-wise F1 of predicted masks");
  c_sc->add_option("--pred", sc.pred, "Directory of predicted masks")->required()->check(CLI::ExistingDirectory);
  c_sc->add_option("--gt", sc.gt, "Directory of ground-truth masks")->required()->check(CLI::ExistingDirectory);
  c_sc->add_option("--task", sc.task, "all, new or vanishing");
  c_sc->add_option("--rule", sc.rule, "Detection rule: lower_only or literal");
  c_sc->add_option("--min-volume", sc.min_volume, "Lesions below this volume (mm3) are ignored");
  c_sc->add_option("--json", sc.json_out, "Write the full report here");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Generate a phantom dataset");
  c_sy->add_option("--spec", sy.spec, "Phantom spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  c_sy->add_option("--subjects", sy.subjects, "Number of subjects")->check(CLI::PositiveNumber);
  c_sy->add_option("--timepoints", sy.timepoints, "Timepoints per subject")->check(CLI::PositiveNumber);
  c_sy->add_option("--test", sy.test, "How many of the subjects form the test split");
  c_sy->add_option("--name", sy.name, "Dataset name and subject id prefix");
  c_sy->add_option("--alpha-low", sy.alpha_low, "Lower lesion-load ratio per step");
  c_sy->add_option("--alpha-high", sy.alpha_high, "Upper lesion-load ratio per step");
  c_sy->add_option("--out", sy.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train-toy", "Train the per-voxel toy model");
  c_tr->add_option("--manifest", tr.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);
  c_tr->add_option("--folds", tr.folds, "Ensemble members trained on K folds")->check(CLI::PositiveNumber);
  c_tr->add_option("--history", tr.history, "Write per-epoch loss history JSON here");
  c_tr->add_option("--out", tr.out, "Model JSON")->required();

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Run a trained model over a manifest");
  c_pr->add_option("--model", pr.model, "Model JSON")->required()->check(CLI::ExistingFile);
  c_pr->add_option("--manifest", pr.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_pr->add_option("--split", pr.split, "test, train or all");
  c_pr->add_option("--threshold", pr.threshold, "Binarization threshold");
  c_pr->add_flag("--with-prior,!--no-prior", pr.with_prior,
                 "Feed the stored baseline label into the first follow-up window (default on)");
  c_pr->add_option("--out", pr.out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_as->parsed()) return run_assemble(as);
    if (c_gc->parsed()) return run_loss_check(gc);
    if (c_au->parsed()) return run_augment(au);
    if (c_sc->parsed()) return run_score(sc);
    if (c_sy->parsed()) return run_synth(sy);
    if (c_tr->parsed()) return run_train(tr);
    if (c_pr->parsed()) return run_predict(pr);
  } catch (const lesionforge::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
