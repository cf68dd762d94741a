#include "lesionforge/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lesionforge {

namespace {

constexpr std::array<const char*, kFeatureCount> kFeatureNames{
    "x1", "x2", "x2_minus_x1", "mean3_x1", "mean3_x2", "wm", "prior", "bias"};

Eigen::ArrayXd normalized(const Volume& x, const Mask& wm) {
  double sum = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (wm[i]) {
      sum += x[i];
      ++n;
    }
  double ref = n > 0 ? sum / static_cast<double>(n) : x.data().mean();
  if (std::abs(ref) < 1e-12) ref = 1.0;
  return x.data() / ref - 1.0;
}

/// Clamped 3x3x3 box mean, applied one axis at a time.
Eigen::ArrayXd box_mean3(const Eigen::ArrayXd& v, const Grid& g) {
  Eigen::ArrayXd cur = v, next(v.size());
  for (int a = 0; a < 3; ++a) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const Index3 p = g.coords(i);
      double s = 0.0;
      for (int d = -1; d <= 1; ++d) {
        Index3 q = p;
        q[a] = std::clamp(p[a] + d, 0, g.dims[a] - 1);
        s += cur[g.index(q[0], q[1], q[2])];
      }
      next[i] = s / 3.0;
    }
    std::swap(cur, next);
  }
  return cur;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

template <typename Scalar>
Image<Scalar> crop_to(const Image<Scalar>& v, const Index3& lo, const Index3& size) {
  return crop(v, lo, {lo[0] + size[0] - 1, lo[1] + size[1] - 1, lo[2] + size[2] - 1});
}

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
  a.dice += b.dice;
  a.longitudinal += b.longitudinal;
  a.volumetric += b.volumetric;
  a.spatial += b.spatial;
  a.total += b.total;
  a.active_constraints = a.active_constraints || b.active_constraints;
  a.longitudinal_applied = a.longitudinal_applied || b.longitudinal_applied;
  return a;
}

}  // namespace

FeatureMatrix compute_features(const ModelInput& in) {
  const Grid& g = in.x_t1.grid();
  require_compatible(g, in.x_t2.grid(), "features x_t2");
  require_compatible(g, in.y_a_t1.grid(), "features prior label");
  require_compatible(g, in.wm_t2.grid(), "features wm");
  const Eigen::ArrayXd x1 = normalized(in.x_t1, in.wm_t2);
  const Eigen::ArrayXd x2 = normalized(in.x_t2, in.wm_t2);
  FeatureMatrix phi(g.size(), static_cast<int>(kFeatureCount));
  phi.col(kX1) = x1.matrix();
  phi.col(kX2) = x2.matrix();
  phi.col(kDiff) = (x2 - x1).matrix();
  phi.col(kMean1) = box_mean3(x1, g).matrix();
  phi.col(kMean2) = box_mean3(x2, g).matrix();
  phi.col(kWm) = in.wm_t2.data().cast<double>().matrix();
  phi.col(kPrior) = in.y_a_t1.data().cast<double>().matrix();
  phi.col(kBias).setOnes();
  return phi;
}

HeadWeights ToyModel::default_head_mask() {
  HeadWeights m = HeadWeights::Ones();
  m(static_cast<int>(Head::AllT1), kPrior) = 0.0;
  return m;
}

void to_json(nlohmann::json& j, const ToyModel& m) {
  nlohmann::json heads, mask;
  for (Head h : kHeads) {
    const int r = static_cast<int>(h);
    std::vector<double> w(kFeatureCount), k(kFeatureCount);
    for (int f = 0; f < kFeatureCount; ++f) {
      w[f] = m.weights(r, f);
      k[f] = m.head_mask(r, f);
    }
    heads[std::string(head_name(h))] = w;
    mask[std::string(head_name(h))] = k;
  }
  j = {{"feature_bank", kFeatureBankId},
       {"features", kFeatureNames},
       {"heads", heads},
       {"head_mask", mask}};
}

void from_json(const nlohmann::json& j, ToyModel& m) {
  try {
    if (j.at("feature_bank").get<std::string>() != kFeatureBankId)
      throw FormatError("model uses feature bank " + j.at("feature_bank").get<std::string>() +
                        ", expected " + kFeatureBankId);
    for (Head h : kHeads) {
      const int r = static_cast<int>(h);
      const std::string name(head_name(h));
      const auto w = j.at("heads").at(name).get<std::vector<double>>();
      const auto k = j.at("head_mask").at(name).get<std::vector<double>>();
      if (w.size() != kFeatureCount || k.size() != kFeatureCount)
        throw FormatError("head " + name + " must have " + std::to_string(kFeatureCount) +
                          " weights");
      for (int f = 0; f < kFeatureCount; ++f) {
        m.head_mask(r, f) = k[f] != 0.0 ? 1.0 : 0.0;
        m.weights(r, f) = w[f] * m.head_mask(r, f);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model: ") + e.what());
  }
  if (m.head_mask(static_cast<int>(Head::AllT1), kPrior) != 0.0)
    throw ValidationError("the all_t1 head must not read the baseline label channel");
}

ToyModel load_model(const std::filesystem::path& path) {
  const Ensemble e = load_ensemble(path);
  if (e.size() != 1) throw ValidationError("model file " + path.string() + " holds an ensemble");
  return e.front();
}

void save_model(const ToyModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model " + path.string() + " is not JSON: " + e.what());
  }
}

}  // namespace

Ensemble load_ensemble(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  Ensemble e;
  if (j.contains("members")) {
    for (const auto& m : j.at("members")) e.push_back(m.get<ToyModel>());
  } else {
    e.push_back(j.get<ToyModel>());
  }
  if (e.empty()) throw ValidationError("model file " + path.string() + " has no members");
  return e;
}

void save_ensemble(const Ensemble& e, const std::filesystem::path& path) {
  if (e.size() == 1) return save_model(e.front(), path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model " + path.string());
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : e) members.push_back(m);
  out << nlohmann::json{{"members", members}}.dump(2) << '\n';
}

PredictionSet forward(const ToyModel& m, const FeatureMatrix& phi, const Grid& grid) {
  const HeadWeights w = m.weights.cwiseProduct(m.head_mask);
  const Eigen::Matrix<double, Eigen::Dynamic, 4> z = phi * w.transpose();
  PredictionSet out;
  for (Head h : kHeads) {
    Volume p(grid);
    p.data() = z.col(static_cast<int>(h)).array().unaryExpr(&sigmoid);
    out[h] = std::move(p);
  }
  return out;
}

PredictionSet forward(const ToyModel& m, const ModelInput& in) {
  return forward(m, compute_features(in), in.x_t1.grid());
}

PredictionSet ensemble_predict(const Ensemble& e, const ModelInput& in) {
  if (e.empty()) throw ArgumentError("ensemble has no members");
  const FeatureMatrix phi = compute_features(in);
  PredictionSet sum = forward(e.front(), phi, in.x_t1.grid());
  for (std::size_t k = 1; k < e.size(); ++k) {
    const PredictionSet p = forward(e[k], phi, in.x_t1.grid());
    for (Head h : kHeads) sum[h].data() += p[h].data();
  }
  if (e.size() > 1)
    for (Head h : kHeads) sum[h].data() /= static_cast<double>(e.size());
  return sum;
}

SegmentationModel as_segmentation_model(const Ensemble& e) {
  if (e.empty()) throw ArgumentError("ensemble has no members");
  return [e](const ModelInput& in) { return ensemble_predict(e, in); };
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ArgumentError("epochs must be positive");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  if (batch_size < 0) throw ArgumentError("batch size must be non-negative");
  for (int a = 0; a < 3; ++a)
    if (patch_size[a] < 1) throw ArgumentError("patch size must be positive");
  if (prior_prob < 0.0 || prior_prob > 1.0) throw ArgumentError("prior_prob must lie in [0, 1]");
  loss.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},         {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size}, {"loss", c.loss},
       {"patch_size", c.patch_size}, {"seed", c.seed},
       {"prior_prob", c.prior_prob}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("loss")) {
      // Keys absent from the file keep the training defaults.
      nlohmann::json merged = c.loss;
      merged.update(j.at("loss"));
      c.loss = merged.get<LossConfig>();
    }
    c.patch_size = j.value("patch_size", c.patch_size);
    c.seed = j.value("seed", c.seed);
    c.prior_prob = j.value("prior_prob", c.prior_prob);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
}

TrainingSample draw_sample(const LoadedSubject& subject, const TrainConfig& cfg, Rng& rng) {
  TrainingSample s;
  WindowPair pair{1, 1};
  if (subject.format == SubjectFormat::Longitudinal && subject.size() >= 2) {
    const int k = static_cast<int>(rng.uniform_int(1, subject.size() - 1));
    pair = {k, k + 1};
    s.kind = SampleKind::Longitudinal;
  }
  ModelInput in = assemble(subject, pair, LabelSource::GroundTruth, cfg.prior_prob, rng);
  const Timepoint& a = subject.timepoints[pair.first - 1];
  const Timepoint& b = subject.timepoints[pair.second - 1];
  s.labels.all_t1 = a.all;
  if (pair.first == pair.second) {
    s.labels.all_t2 = a.all;
  } else {
    s.labels.all_t2 = b.all;
    s.labels.new_t2 = b.new_lesions;
    s.labels.vanishing_t2 = b.vanishing;
  }

  const Index3& dims = in.x_t1.dims();
  Index3 size, lo;
  bool full = true;
  for (int ax = 0; ax < 3; ++ax) {
    size[ax] = std::min(cfg.patch_size[ax], dims[ax]);
    lo[ax] = static_cast<int>(rng.uniform_int(0, dims[ax] - size[ax]));
    full = full && size[ax] == dims[ax];
  }
  if (!full) {
    in.x_t1 = crop_to(in.x_t1, lo, size);
    in.x_t2 = crop_to(in.x_t2, lo, size);
    in.y_a_t1 = crop_to(in.y_a_t1, lo, size);
    in.wm_t2 = crop_to(in.wm_t2, lo, size);
    for (Head h : kHeads)
      if (s.labels[h]) s.labels[h] = crop_to(*s.labels[h], lo, size);
  }
  s.input = std::move(in);
  return s;
}

ModelLoss model_loss(const ToyModel& m, const FeatureMatrix& phi, const TrainingSample& s,
                     const LossConfig& cfg, int epoch, int n_epochs) {
  const PredictionSet p = forward(m, phi, s.input.x_t1.grid());
  const TotalLoss t = total_loss(p, s.labels, s.input.wm_t2, cfg, epoch, n_epochs, s.kind);
  ModelLoss out;
  out.breakdown = t.breakdown;
  for (Head h : kHeads) {
    const int r = static_cast<int>(h);
    const Eigen::ArrayXd& ph = p[h].data();
    const Eigen::VectorXd dz = (t.grad[h].data() * ph * (1.0 - ph)).matrix();
    out.grad.row(r) = (phi.transpose() * dz).transpose().cwiseProduct(m.head_mask.row(r));
  }
  return out;
}

TrainResult train(const std::vector<LoadedSubject>& subjects, const TrainConfig& cfg) {
  cfg.validate();
  if (subjects.empty()) throw ArgumentError("training needs at least one subject");
  Rng rng(cfg.seed);
  TrainResult result;
  const auto n = subjects.size();
  const std::size_t batch =
      cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
    LossBreakdown mean;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      HeadWeights grad = HeadWeights::Zero();
      for (std::size_t i = start; i < end; ++i) {
        const TrainingSample s = draw_sample(subjects[order[i]], cfg, rng);
        const ModelLoss l =
            model_loss(result.model, compute_features(s.input), s, cfg.loss, epoch, cfg.epochs);
        if (!std::isfinite(l.breakdown.total) || !l.grad.allFinite())
          throw DivergenceError(epoch, "non-finite loss for subject " + subjects[order[i]].id);
        grad += l.grad;
        mean += l.breakdown;
      }
      result.model.weights -= cfg.learning_rate / static_cast<double>(end - start) * grad;
      if (!result.model.weights.allFinite()) throw DivergenceError(epoch, "non-finite weights");
    }
    const double inv = 1.0 / static_cast<double>(n);
    mean.dice *= inv;
    mean.longitudinal *= inv;
    mean.volumetric *= inv;
    mean.spatial *= inv;
    mean.total *= inv;
    result.history.push_back(mean);
  }
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg) {
  std::vector<LoadedSubject> subjects;
  for (const auto& r : manifest.subjects)
    if (r.split == Split::Train) subjects.push_back(load_subject(manifest, r));
  if (subjects.empty()) throw ValidationError("manifest has no train subjects");
  return train(subjects, cfg);
}

std::vector<TrainResult> train_folds(const std::vector<LoadedSubject>& subjects,
                                     const TrainConfig& cfg, int folds) {
  if (folds < 1) throw ArgumentError("need at least one fold");
  if (folds > 1 && static_cast<std::size_t>(folds) > subjects.size())
    throw ArgumentError("more folds than training subjects");
  if (folds == 1) return {train(subjects, cfg)};
  std::vector<TrainResult> out;
  for (int k = 0; k < folds; ++k) {
    std::vector<LoadedSubject> part;
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (static_cast<int>(i % static_cast<std::size_t>(folds)) != k) part.push_back(subjects[i]);
    TrainConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    out.push_back(train(part, c));
  }
  return out;
}

double grad_check(const ToyModel& m, const TrainingSample& s, const LossConfig& cfg, int epoch,
                  int n_epochs, double step) {
  const FeatureMatrix phi = compute_features(s.input);
  const ModelLoss base = model_loss(m, phi, s, cfg, epoch, n_epochs);
  HeadWeights numeric = HeadWeights::Zero();
  ToyModel probe = m;
  for (int r = 0; r < 4; ++r)
    for (int f = 0; f < kFeatureCount; ++f) {
      if (m.head_mask(r, f) == 0.0) continue;
      const double w = m.weights(r, f);
      probe.weights(r, f) = w + step;
      const double up = model_loss(probe, phi, s, cfg, epoch, n_epochs).breakdown.total;
      probe.weights(r, f) = w - step;
      const double down = model_loss(probe, phi, s, cfg, epoch, n_epochs).breakdown.total;
      probe.weights(r, f) = w;
      numeric(r, f) = (up - down) / (2.0 * step);
    }
  const HeadWeights analytic = base.grad.cwiseProduct(m.head_mask);
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

}  // namespace lesionforge
