#include "lesionforge/phantom.hpp"

#include <cmath>
#include <cstdio>

#include "lesionforge/nifti.hpp"
#include "lesionforge/rng.hpp"

namespace lesionforge {

namespace fs = std::filesystem;

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 8) throw ArgumentError("phantom dims must be at least 8 per axis");
    if (!(spacing[a] > 0.0)) throw ArgumentError("phantom spacing must be positive");
  }
  if (!(lesion_intensity_range.first > wm_intensity))
    throw ArgumentError("lesion intensities must lie above the white-matter intensity");
  if (lesion_intensity_range.second < lesion_intensity_range.first)
    throw ArgumentError("lesion intensity range is reversed");
  if (!(lesion_radius_range_mm.first > 0.0) ||
      lesion_radius_range_mm.second < lesion_radius_range_mm.first)
    throw ArgumentError("lesion radii must be positive and ordered");
  if (n_lesions < 0 || n_distractors < 0) throw ArgumentError("lesion counts must be non-negative");
  if (noise_sigma < 0.0) throw ArgumentError("noise sigma must be non-negative");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  j = {{"dims", s.dims},
       {"spacing", {s.spacing.x(), s.spacing.y(), s.spacing.z()}},
       {"background_intensity", s.background_intensity},
       {"tissue_intensity", s.tissue_intensity},
       {"wm_intensity", s.wm_intensity},
       {"lesion_intensity_range", {s.lesion_intensity_range.first, s.lesion_intensity_range.second}},
       {"n_lesions", s.n_lesions},
       {"lesion_radius_range_mm",
        {s.lesion_radius_range_mm.first, s.lesion_radius_range_mm.second}},
       {"n_distractors", s.n_distractors},
       {"noise_sigma", s.noise_sigma},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  s = PhantomSpec{};
  try {
    if (j.contains("dims")) s.dims = j.at("dims").get<Index3>();
    if (j.contains("spacing")) {
      const auto v = j.at("spacing").get<std::array<double, 3>>();
      s.spacing = {v[0], v[1], v[2]};
    }
    s.background_intensity = j.value("background_intensity", s.background_intensity);
    s.tissue_intensity = j.value("tissue_intensity", s.tissue_intensity);
    s.wm_intensity = j.value("wm_intensity", s.wm_intensity);
    s.lesion_intensity_range = j.value("lesion_intensity_range", s.lesion_intensity_range);
    s.n_lesions = j.value("n_lesions", s.n_lesions);
    s.lesion_radius_range_mm = j.value("lesion_radius_range_mm", s.lesion_radius_range_mm);
    s.n_distractors = j.value("n_distractors", s.n_distractors);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed phantom spec: ") + e.what());
  }
  s.validate();
}

namespace {

/// Normalized ellipsoid radius of voxel p around the grid center.
double ellipsoid_r(const Grid& g, const Index3& p, double fraction) {
  double r2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double c = 0.5 * (g.dims[a] - 1);
    const double d = (p[a] - c) / (fraction * 0.5 * g.dims[a]);
    r2 += d * d;
  }
  return std::sqrt(r2);
}

/// Union of 1-3 spheres jittered around `center`, in physical units.
std::vector<Eigen::Index> blob(const Grid& g, const Index3& center, Rng& rng,
                               std::pair<double, double> radius) {
  const int parts = static_cast<int>(rng.uniform_int(1, 3));
  std::vector<std::pair<Eigen::Vector3d, double>> spheres;
  const double r0 = rng.uniform(radius.first, radius.second);
  Eigen::Vector3d c0;
  for (int a = 0; a < 3; ++a) c0[a] = center[a] * g.spacing[a];
  spheres.push_back({c0, r0});
  for (int k = 1; k < parts; ++k) {
    const double r = rng.uniform(radius.first, radius.second);
    Eigen::Vector3d off;
    for (int a = 0; a < 3; ++a) off[a] = rng.uniform(-0.6, 0.6) * r0;
    spheres.push_back({c0 + off, r});
  }
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const Index3 p = g.coords(i);
    const Eigen::Vector3d x(p[0] * g.spacing[0], p[1] * g.spacing[1], p[2] * g.spacing[2]);
    for (const auto& [c, r] : spheres)
      if ((x - c).squaredNorm() <= r * r) {
        out.push_back(i);
        break;
      }
  }
  return out;
}

/// Places `n` blobs whose voxels all satisfy `allowed` and that neither
/// overlap nor touch anything already in `taken`.
Mask place_blobs(const Grid& g, int n, const Mask& allowed, Mask& taken, Rng& rng,
                 std::pair<double, double> radius, const char* what) {
  Mask out(g);
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index i = 0; i < g.size(); ++i)
    if (allowed[i]) candidates.push_back(i);
  constexpr int kAttempts = 2000;
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed && !candidates.empty(); ++attempt) {
      const auto pick = candidates[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
      const auto voxels = blob(g, g.coords(pick), rng, radius);
      bool ok = true;
      for (Eigen::Index v : voxels)
        if (!allowed[v] || taken[v]) {
          ok = false;
          break;
        }
      if (!ok) continue;
      for (Eigen::Index v : voxels) {
        out[v] = 1;
        const Index3 p = g.coords(v);
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (g.contains(p[0] + dx, p[1] + dy, p[2] + dz))
                taken(p[0] + dx, p[1] + dy, p[2] + dz) = 1;
      }
      placed = true;
    }
    if (!placed)
      throw ValidationError("could not place " + std::string(what) + " " + std::to_string(k + 1) +
                            " of " + std::to_string(n) + " without overlap after " +
                            std::to_string(kAttempts) + " attempts");
  }
  return out;
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Grid g(spec.dims, spec.spacing);
  Phantom p{Volume(g), Mask(g), Mask(g), Mask(g)};
  Mask head(g), tissue(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const Index3 c = g.coords(i);
    const double r = ellipsoid_r(g, c, 0.95);
    head[i] = r <= 1.0;
    const double wr = ellipsoid_r(g, c, 0.65);
    const double hole = ellipsoid_r(g, c, 0.15);
    p.wm[i] = wr <= 1.0 && hole > 1.0;
    tissue[i] = head[i] && !p.wm[i];
    p.image[i] = p.wm[i] ? spec.wm_intensity : head[i] ? spec.tissue_intensity
                                                       : spec.background_intensity;
  }
  Mask taken(g);
  p.lesions = place_blobs(g, spec.n_lesions, p.wm, taken, rng, spec.lesion_radius_range_mm,
                          "lesion");
  // Distractors also stay clear of white matter by one voxel.
  Mask clear(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) clear[i] = tissue[i];
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!p.wm[i]) continue;
    const Index3 c = g.coords(i);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (g.contains(c[0] + dx, c[1] + dy, c[2] + dz)) clear(c[0] + dx, c[1] + dy, c[2] + dz) = 0;
  }
  p.distractors = place_blobs(g, spec.n_distractors, clear, taken, rng,
                              spec.lesion_radius_range_mm, "distractor");

  const auto [lo, hi] = spec.lesion_intensity_range;
  for (const Mask* m : {&p.lesions, &p.distractors})
    for (const auto& c : connected_components(*m)) {
      const double v = rng.uniform(lo, hi);
      for (Eigen::Index i : c.voxels) p.image[i] = v;
    }
  if (spec.noise_sigma > 0.0)
    for (Eigen::Index i = 0; i < g.size(); ++i) p.image[i] += rng.normal(0.0, spec.noise_sigma);
  return p;
}

PhantomSeries make_longitudinal(const PhantomSpec& spec, int timepoints,
                                const std::vector<double>& alphas) {
  if (timepoints < 2) throw ArgumentError("a longitudinal phantom needs at least two timepoints");
  if (static_cast<int>(alphas.size()) != timepoints - 1)
    throw ArgumentError("need one alpha per step (" + std::to_string(timepoints - 1) + ")");
  for (double a : alphas)
    if (!(a >= 0.5 && a <= 2.0)) throw ArgumentError("alpha must lie in [0.5, 2]");

  const Phantom base = make_phantom(spec);
  PhantomSeries s;
  s.wm = base.wm;
  s.images.push_back(base.image);
  s.all.push_back(base.lesions);
  s.new_lesions.push_back(Mask(base.wm.grid()));
  s.vanishing.push_back(Mask(base.wm.grid()));
  std::vector<LabeledImage> labeled{{base.image, base.lesions, "baseline"}};
  const LesionBank bank = build_bank(labeled);
  Rng rng(spec.seed ^ 0xA5A5A5A5ULL);
  for (int k = 1; k < timepoints; ++k) {
    SynthConfig cfg;
    cfg.alpha = alphas[k - 1];
    LongitudinalSynth y = synth_longitudinal(s.images.back(), s.all.back(), bank, s.wm, cfg, rng);
    s.images.push_back(std::move(y.image_t2));
    s.all.push_back(std::move(y.all_t2));
    s.new_lesions.push_back(std::move(y.new_lesions));
    s.vanishing.push_back(std::move(y.vanishing));
    s.plans.push_back(std::move(y.plan));
  }
  return s;
}

DatasetManifest write_phantom_dataset(const PhantomSpec& spec, const PhantomDatasetOptions& opt,
                                      const fs::path& out_dir) {
  if (opt.subjects < 1) throw ArgumentError("need at least one subject");
  if (opt.timepoints < 1) throw ArgumentError("need at least one timepoint");
  if (opt.test_subjects < 0 || opt.test_subjects > opt.subjects)
    throw ArgumentError("test subject count out of range");
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.name = opt.name;
  m.base_dir = out_dir;
  Rng master(spec.seed);
  for (int i = 0; i < opt.subjects; ++i) {
    PhantomSpec s = spec;
    s.seed = master.fork_seed();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03d", opt.name.c_str(), i + 1);
    SubjectRecord rec;
    rec.id = buf;
    rec.split = i >= opt.subjects - opt.test_subjects ? Split::Test : Split::Train;
    auto write = [&](const auto& img, int tp, const std::string& kind) {
      const std::string name = scan_filename(rec.id, tp, kind);
      save_nifti(img, out_dir / name);
      return name;
    };
    if (opt.timepoints == 1) {
      const Phantom p = make_phantom(s);
      rec.format = SubjectFormat::CrossSectional;
      rec.availability.all_t1 = true;
      TimepointPaths t;
      t.image = write(p.image, 1, "image");
      t.wm = write(p.wm, 1, "wm");
      t.all = write(p.lesions, 1, "all");
      rec.timepoints.push_back(t);
    } else {
      Rng alpha_rng(s.seed ^ 0x5DEECE66DULL);
      std::vector<double> alphas;
      for (int k = 1; k < opt.timepoints; ++k)
        alphas.push_back(alpha_rng.uniform(opt.alpha_low, opt.alpha_high));
      const PhantomSeries series = make_longitudinal(s, opt.timepoints, alphas);
      rec.format = SubjectFormat::Longitudinal;
      rec.availability = {true, true, true, true};
      for (int k = 0; k < opt.timepoints; ++k) {
        TimepointPaths t;
        t.image = write(series.images[k], k + 1, "image");
        t.wm = write(series.wm, k + 1, "wm");
        t.all = write(series.all[k], k + 1, "all");
        if (k > 0) {
          t.new_lesions = write(series.new_lesions[k], k + 1, "new");
          t.vanishing = write(series.vanishing[k], k + 1, "vanishing");
        }
        rec.timepoints.push_back(t);
      }
    }
    m.subjects.push_back(std::move(rec));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace lesionforge
