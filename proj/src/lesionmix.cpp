#include "lesionforge/lesionmix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <queue>

#include "lesionforge/assembly.hpp"
#include "lesionforge/nifti.hpp"

namespace lesionforge {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- bank

LesionBank build_bank(std::span<const LabeledImage> images, Connectivity connectivity) {
  LesionBank bank;
  for (const auto& li : images) {
    require_compatible(li.image.grid(), li.lesions.grid(), "lesion bank input");
    const Index3& d = li.image.dims();
    for (const auto& c : connected_components(li.lesions, connectivity)) {
      Index3 lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::max(0, c.bbox_min[a] - 1);
        hi[a] = std::min(d[a] - 1, c.bbox_max[a] + 1);
      }
      LesionSample s;
      s.intensity = crop(li.image, lo, hi);
      s.mask = Mask(s.intensity.grid());
      for (Eigen::Index v : c.voxels) {
        const Index3 p = li.image.grid().coords(v);
        s.mask(p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]) = 1;
      }
      s.source_id = li.id;
      bank.samples.push_back(std::move(s));
    }
  }
  if (bank.samples.empty()) throw ValidationError("lesion bank inputs contain no lesions");
  return bank;
}

LesionBank bank_from_manifest(const DatasetManifest& manifest, Split split) {
  LesionBank bank;
  for (const auto& rec : manifest.subjects) {
    if (rec.split != split) continue;
    const LoadedSubject subj = load_subject(manifest, rec);
    std::vector<LabeledImage> labeled;
    for (int k = 0; k < subj.size(); ++k) {
      const Timepoint& tp = subj.timepoints[k];
      std::optional<Mask> y = tp.all;
      if (!y && tp.new_lesions) y = tp.new_lesions;
      if (!y || count(*y) == 0) continue;
      labeled.push_back({tp.image, *y, rec.id + "_tp" + std::to_string(k + 1)});
    }
    if (labeled.empty()) continue;
    LesionBank part = build_bank(labeled);
    for (auto& s : part.samples) bank.samples.push_back(std::move(s));
  }
  if (bank.samples.empty()) throw ValidationError("no labeled lesions in the requested split");
  return bank;
}

// ---------------------------------------------------------- augmentation

LesionSample apply_augmentation(const LesionSample& s, const AugmentParams& p) {
  if (!(p.scale > 0.0)) throw ArgumentError("augmentation scale must be positive");
  const Index3 n = s.mask.dims();
  Index3 m;
  for (int a = 0; a < 3; ++a) m[a] = std::max(1, static_cast<int>(std::lround(n[a] * p.scale)));
  LesionSample out;
  out.source_id = s.source_id;
  Grid g(m, s.mask.spacing());
  out.intensity = Volume(g);
  out.mask = Mask(g);
  auto src = [&](int i, int a) {
    int k = std::min(n[a] - 1, static_cast<int>(std::floor((i + 0.5) / p.scale)));
    return p.flip[a] ? n[a] - 1 - k : k;
  };
  for (int z = 0; z < m[2]; ++z)
    for (int y = 0; y < m[1]; ++y)
      for (int x = 0; x < m[0]; ++x) {
        const int sx = src(x, 0), sy = src(y, 1), sz = src(z, 2);
        out.intensity(x, y, z) = s.intensity(sx, sy, sz) * p.intensity_factor;
        out.mask(x, y, z) = s.mask(sx, sy, sz);
      }
  if (p.noise_sigma > 0.0) {
    Rng noise(p.noise_seed);
    for (Eigen::Index i = 0; i < out.intensity.size(); ++i)
      out.intensity[i] += noise.normal(0.0, p.noise_sigma);
  }
  return out;
}

AugmentedSample augment_sample(const LesionSample& s, Rng& rng, const AugmentRanges& r) {
  const double range = s.intensity.size() > 0
                           ? s.intensity.data().maxCoeff() - s.intensity.data().minCoeff()
                           : 0.0;
  for (int attempt = 0; attempt < r.max_retries; ++attempt) {
    AugmentParams p;
    for (auto& f : p.flip) f = rng.bernoulli(0.5);
    p.scale = rng.uniform(r.scale_min, r.scale_max);
    p.intensity_factor = rng.uniform(r.intensity_min, r.intensity_max);
    p.noise_sigma = r.noise_fraction * range;
    p.noise_seed = rng.next_u64();
    LesionSample out = apply_augmentation(s, p);
    if (count(out.mask) > 0) return {std::move(out), p};
  }
  return {s, AugmentParams::identity()};
}

// ------------------------------------------------------------- populate

namespace {

void mark_forbidden(Mask& forbidden, const Grid& g, Eigen::Index v) {
  const Index3 p = g.coords(v);
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (g.contains(p[0] + dx, p[1] + dy, p[2] + dz))
          forbidden(p[0] + dx, p[1] + dy, p[2] + dz) = 1;
}

bool fits(const Grid& g, const LesionSample& s, const Index3& off, const Mask& forbidden) {
  const Index3& d = s.mask.dims();
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!s.mask(x, y, z)) continue;
        if (!g.contains(off[0] + x, off[1] + y, off[2] + z)) return false;
        if (forbidden(off[0] + x, off[1] + y, off[2] + z)) return false;
      }
  return true;
}

/// Hard composite; returns the number of voxels written.
Eigen::Index composite(AugmentResult& r, const LesionSample& s, const Index3& off,
                       Mask* forbidden) {
  const Grid& g = r.image.grid();
  const Index3& d = s.mask.dims();
  Eigen::Index n = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!s.mask(x, y, z)) continue;
        const int gx = off[0] + x, gy = off[1] + y, gz = off[2] + z;
        if (!g.contains(gx, gy, gz)) throw ValidationError("placement falls outside the image grid");
        r.image(gx, gy, gz) = s.intensity(x, y, z);
        r.lesions(gx, gy, gz) = 1;
        r.changed(gx, gy, gz) = 1;
        if (forbidden) mark_forbidden(*forbidden, g, g.index(gx, gy, gz));
        ++n;
      }
  return n;
}

}  // namespace

AugmentResult populate(const Volume& image, const Mask& lesions, const LesionBank& bank,
                       const Mask& wm, double target_load_mm3, Rng& rng,
                       const PopulateOptions& options) {
  require_compatible(image.grid(), lesions.grid(), "populate lesions");
  require_compatible(image.grid(), wm.grid(), "populate wm");
  if (bank.samples.empty()) throw ValidationError("lesion bank is empty");
  const Grid& g = image.grid();
  const double vox = g.voxel_volume();
  Eigen::Index voxels = count(lesions);
  const double current = static_cast<double>(voxels) * vox;
  if (target_load_mm3 < current) {
    throw ArgumentError("target load " + std::to_string(target_load_mm3) +
                        " mm3 is below the current load " + std::to_string(current) + " mm3");
  }

  AugmentResult r{image, lesions, Mask(g), {}};
  r.plan.target_load_mm3 = target_load_mm3;
  r.plan.alpha = current > 0.0 ? target_load_mm3 / current : 1.0;

  Mask forbidden(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!wm[i]) forbidden[i] = 1;
    if (lesions[i]) mark_forbidden(forbidden, g, i);
  }

  // Candidate anchors: voxels a lesion voxel may occupy.
  std::vector<Eigen::Index> allowed;
  auto refresh_allowed = [&] {
    allowed.clear();
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (!forbidden[i]) allowed.push_back(i);
  };
  refresh_allowed();

  int failures = 0;
  const auto n_samples = static_cast<std::int64_t>(bank.samples.size());
  while (static_cast<double>(voxels) * vox < target_load_mm3 &&
         failures < options.max_failed_placements) {
    if (allowed.empty()) {
      failures = options.max_failed_placements;
      break;
    }
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, n_samples - 1));
    AugmentedSample aug = augment_sample(bank.samples[idx], rng, options.ranges);
    const Mask& sm = aug.sample.mask;
    const Index3& pd = sm.dims();
    std::vector<Eigen::Index> own;
    for (Eigen::Index i = 0; i < sm.size(); ++i)
      if (sm[i]) own.push_back(i);
    if (own.empty()) {
      ++failures;
      continue;
    }
    // A random lesion voxel of the sample lands on a random allowed voxel.
    const Index3 at = g.coords(allowed[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(allowed.size()) - 1))]);
    const Index3 pin = sm.grid().coords(
        own[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(own.size()) - 1))]);
    Index3 off{0, 0, 0};
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      off[a] = at[a] - pin[a];
      if (off[a] < 0 || off[a] + pd[a] > g.dims[a]) inside = false;
    }
    if (!inside || !fits(g, aug.sample, off, forbidden)) {
      ++failures;
      continue;
    }
    failures = 0;
    const Eigen::Index n = composite(r, aug.sample, off, &forbidden);
    refresh_allowed();
    voxels += n;
    r.plan.placements.push_back({idx, aug.params, off, static_cast<double>(n) * vox});
  }
  if (static_cast<double>(voxels) * vox < target_load_mm3) {
    r.plan.target_missed = true;
    r.plan.warning = "stopped after " + std::to_string(options.max_failed_placements) +
                     " consecutive failed placements at " +
                     std::to_string(static_cast<double>(voxels) * vox) + " of " +
                     std::to_string(target_load_mm3) + " mm3";
  }
  return r;
}

// ------------------------------------------------------------- inpaint

namespace {

constexpr std::array<Index3, 3> kAxes{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

/// Upwind solution of |grad T| = 1 from the per-axis minimum neighbor times.
double solve_eikonal(std::array<double, 3> a) {
  std::sort(a.begin(), a.end());
  double t = a[0] + 1.0;
  if (t > a[1]) {
    const double d = a[0] - a[1];
    t = 0.5 * (a[0] + a[1] + std::sqrt(2.0 - d * d));
    if (t > a[2]) {
      const double s = a[0] + a[1] + a[2];
      const double q = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
      t = (s + std::sqrt(std::max(0.0, s * s - 3.0 * (q - 1.0)))) / 3.0;
    }
  }
  return t;
}

}  // namespace

Volume fast_marching_inpaint(const Volume& image, const Mask& unknown, int radius) {
  require_compatible(image.grid(), unknown.grid(), "inpaint region");
  if (radius < 1) throw ArgumentError("inpaint radius must be at least 1");
  enum : std::uint8_t { Known, Band, Inside };
  const Grid& g = image.grid();
  const Eigen::Index n = g.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> flag(static_cast<std::size_t>(n), Known);
  std::vector<double> T(static_cast<std::size_t>(n), 0.0);
  Volume out = image;
  for (Eigen::Index i = 0; i < n; ++i)
    if (unknown[i]) {
      flag[i] = Inside;
      T[i] = inf;
    }

  using Entry = std::pair<double, Eigen::Index>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;

  // Returns the neighbor index along axis `a` in direction `s`, or -1.
  auto step = [&](const Index3& p, int a, int s) -> Eigen::Index {
    const int x = p[0] + s * kAxes[a][0], y = p[1] + s * kAxes[a][1], z = p[2] + s * kAxes[a][2];
    return g.contains(x, y, z) ? g.index(x, y, z) : -1;
  };
  auto valid = [&](Eigen::Index j) { return j >= 0 && flag[j] != Inside; };

  for (Eigen::Index i = 0; i < n; ++i) {
    if (flag[i] != Known) continue;
    const Index3 p = g.coords(i);
    bool edge = false;
    for (int a = 0; a < 3 && !edge; ++a)
      for (int s : {-1, 1}) {
        const Eigen::Index j = step(p, a, s);
        if (j >= 0 && flag[j] == Inside) edge = true;
      }
    if (edge) {
      flag[i] = Band;
      heap.push({0.0, i});
    }
  }

  auto arrival = [&](Eigen::Index j) {
    const Index3 p = g.coords(j);
    std::array<double, 3> a{inf, inf, inf};
    for (int ax = 0; ax < 3; ++ax)
      for (int s : {-1, 1}) {
        const Eigen::Index k = step(p, ax, s);
        if (valid(k)) a[ax] = std::min(a[ax], T[k]);
      }
    return solve_eikonal(a);
  };

  // One-sided or central difference of `f` along each axis over valid voxels.
  auto gradient = [&](Eigen::Index j, auto&& f) {
    const Index3 p = g.coords(j);
    Eigen::Vector3d d = Eigen::Vector3d::Zero();
    for (int a = 0; a < 3; ++a) {
      const Eigen::Index fw = step(p, a, 1), bw = step(p, a, -1);
      const bool has_f = valid(fw), has_b = valid(bw);
      if (has_f && has_b) d[a] = 0.5 * (f(fw) - f(bw));
      else if (has_f) d[a] = f(fw) - f(j);
      else if (has_b) d[a] = f(j) - f(bw);
    }
    return d;
  };
  auto t_of = [&](Eigen::Index k) { return T[k]; };
  auto i_of = [&](Eigen::Index k) { return out[k]; };

  auto extrapolate = [&](Eigen::Index j) {
    const Index3 p = g.coords(j);
    const Eigen::Vector3d grad_t = gradient(j, t_of);
    double sum = 0.0, wsum = 0.0;
    double lo = inf, hi = -inf;
    const int r2 = radius * radius;
    for (int dz = -radius; dz <= radius; ++dz)
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int len2 = dx * dx + dy * dy + dz * dz;
          if (len2 == 0 || len2 > r2) continue;
          const int qx = p[0] + dx, qy = p[1] + dy, qz = p[2] + dz;
          if (!g.contains(qx, qy, qz)) continue;
          const Eigen::Index q = g.index(qx, qy, qz);
          if (flag[q] == Inside) continue;
          const Eigen::Vector3d r(-dx, -dy, -dz);  // from q to p
          double dir = r.dot(grad_t);
          if (std::abs(dir) <= 0.01) dir = 1e-6;
          const double dst = 1.0 / (len2 * std::sqrt(static_cast<double>(len2)));
          const double lev = 1.0 / (1.0 + std::abs(T[q] - T[j]));
          const double w = std::abs(dir * dst * lev);
          sum += w * (out[q] + gradient(q, i_of).dot(r));
          wsum += w;
          lo = std::min(lo, out[q]);
          hi = std::max(hi, out[q]);
        }
    if (!(wsum > 0.0)) return out[j];
    return std::clamp(sum / wsum, lo, hi);
  };

  while (!heap.empty()) {
    const auto [t, i] = heap.top();
    heap.pop();
    if (flag[i] != Band || t != T[i]) continue;
    flag[i] = Known;
    const Index3 p = g.coords(i);
    for (int a = 0; a < 3; ++a)
      for (int s : {-1, 1}) {
        const Eigen::Index j = step(p, a, s);
        if (j < 0 || flag[j] == Known) continue;
        const bool fresh = flag[j] == Inside;
        const double tj = arrival(j);
        if (fresh) {
          T[j] = tj;
          out[j] = extrapolate(j);
          flag[j] = Band;
          heap.push({T[j], j});
        } else if (tj < T[j]) {
          T[j] = tj;
          heap.push({T[j], j});
        }
      }
  }
  return out;
}

namespace {

/// Gaussian blur of `f` evaluated only where `where` is set; the crop keeps
/// every kernel tap inside so the values match a full-volume blur.
Volume blur_on(const Volume& f, const Mask& where, double sigma_mm) {
  Volume out = f;
  if (sigma_mm == 0.0) return out;
  const Grid& g = f.grid();
  Index3 lo = g.dims, hi{-1, -1, -1};
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!where[i]) continue;
    const Index3 p = g.coords(i);
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  if (hi[0] < 0) return out;
  for (int a = 0; a < 3; ++a) {
    const int pad = static_cast<int>(std::ceil(3.0 * sigma_mm / g.spacing[a])) + 1;
    lo[a] = std::max(0, lo[a] - pad);
    hi[a] = std::min(g.dims[a] - 1, hi[a] + pad);
  }
  const Volume blurred = gaussian_blur(crop(f, lo, hi), sigma_mm);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!where[i]) continue;
    const Index3 p = g.coords(i);
    out[i] = blurred(p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]);
  }
  return out;
}

}  // namespace

AugmentResult inpaint(const Volume& image, const Mask& lesions,
                      const std::vector<std::size_t>& components_to_remove, double sigma_mm) {
  require_compatible(image.grid(), lesions.grid(), "inpaint lesions");
  if (sigma_mm < 0.0) throw ArgumentError("inpaint sigma must be non-negative");
  const Grid& g = image.grid();
  const auto comps = connected_components(lesions, Connectivity::TwentySix);
  AugmentResult r{image, lesions, Mask(g), {}};
  r.plan.inpaint_sigma_mm = sigma_mm;
  for (std::size_t c : components_to_remove) {
    if (c >= comps.size())
      throw ArgumentError("component index " + std::to_string(c) + " out of range (" +
                          std::to_string(comps.size()) + " lesions)");
    for (Eigen::Index v : comps[c].voxels) {
      if (r.changed[v]) throw ArgumentError("component " + std::to_string(c) + " listed twice");
      r.changed[v] = 1;
    }
    r.plan.removals.push_back({c, comps[c].volume_mm3});
  }
  const double before = load_mm3(lesions);
  r.plan.target_load_mm3 = before - load_mm3(r.changed);
  r.plan.alpha = before > 0.0 ? r.plan.target_load_mm3 / before : 1.0;

  Mask remaining = r.changed;
  while (count(remaining) > 0) {
    const Volume filled = fast_marching_inpaint(r.image, remaining);
    const Mask layer = boundary(remaining, Connectivity::Six);
    const Volume smooth = blur_on(filled, layer, sigma_mm);
    for (Eigen::Index i = 0; i < g.size(); ++i)
      if (layer[i]) {
        r.image[i] = smooth[i];
        remaining[i] = 0;
      }
  }
  r.lesions = mask_difference(lesions, r.changed);
  return r;
}

AugmentResult apply_plan(const Volume& image, const Mask& lesions, const LesionBank& bank,
                         const AugmentPlan& plan) {
  std::vector<std::size_t> idx;
  for (const auto& op : plan.removals) idx.push_back(op.component_index);
  AugmentResult r = idx.empty() ? AugmentResult{image, lesions, Mask(image.grid()), {}}
                                : inpaint(image, lesions, idx, plan.inpaint_sigma_mm);
  for (const auto& op : plan.placements) {
    if (op.sample_index >= bank.samples.size())
      throw ValidationError("plan references lesion sample " + std::to_string(op.sample_index) +
                            " but the bank holds " + std::to_string(bank.samples.size()));
    composite(r, apply_augmentation(bank.samples[op.sample_index], op.params), op.offset, nullptr);
  }
  r.plan = plan;
  return r;
}

double AugmentPlan::max_lesion_volume_mm3() const {
  double m = 0.0;
  for (const auto& p : placements) m = std::max(m, p.volume_mm3);
  for (const auto& p : removals) m = std::max(m, p.volume_mm3);
  return m;
}

// --------------------------------------------------------------- json

void to_json(json& j, const AugmentPlan& p) {
  json placements = json::array();
  for (const auto& op : p.placements) {
    placements.push_back({{"sample", op.sample_index},
                          {"position", op.offset},
                          {"volume_mm3", op.volume_mm3},
                          {"flip", op.params.flip},
                          {"scale", op.params.scale},
                          {"intensity_factor", op.params.intensity_factor},
                          {"noise_sigma", op.params.noise_sigma},
                          {"noise_seed", op.params.noise_seed}});
  }
  json removals = json::array();
  for (const auto& op : p.removals)
    removals.push_back({{"component", op.component_index}, {"volume_mm3", op.volume_mm3}});
  j = {{"target_load_mm3", p.target_load_mm3},
       {"alpha", p.alpha},
       {"inpaint_sigma_mm", p.inpaint_sigma_mm},
       {"populate", placements},
       {"inpaint", removals},
       {"target_missed", p.target_missed}};
  if (!p.warning.empty()) j["warning"] = p.warning;
}

void from_json(const json& j, AugmentPlan& p) {
  p = AugmentPlan{};
  try {
    p.target_load_mm3 = j.at("target_load_mm3").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.inpaint_sigma_mm = j.value("inpaint_sigma_mm", 1.0);
    for (const auto& e : j.at("populate")) {
      PlacementOp op;
      op.sample_index = e.at("sample").get<std::size_t>();
      op.offset = e.at("position").get<Index3>();
      op.volume_mm3 = e.value("volume_mm3", 0.0);
      op.params.flip = e.at("flip").get<std::array<bool, 3>>();
      op.params.scale = e.at("scale").get<double>();
      op.params.intensity_factor = e.at("intensity_factor").get<double>();
      op.params.noise_sigma = e.at("noise_sigma").get<double>();
      op.params.noise_seed = e.at("noise_seed").get<std::uint64_t>();
      p.placements.push_back(op);
    }
    for (const auto& e : j.at("inpaint"))
      p.removals.push_back({e.at("component").get<std::size_t>(), e.value("volume_mm3", 0.0)});
    p.target_missed = j.value("target_missed", false);
    p.warning = j.value("warning", std::string{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed augmentation plan: ") + e.what());
  }
}

// ---------------------------------------------------------- longitudinal

LongitudinalSynth synth_longitudinal(const Volume& image, const Mask& lesions,
                                     const LesionBank& bank, const Mask& wm,
                                     const SynthConfig& cfg, Rng& rng) {
  if (!(cfg.alpha_low > 0.0) || cfg.alpha_low > cfg.alpha_high)
    throw ArgumentError("alpha range must satisfy 0 < alpha_low <= alpha_high");
  const double load = load_mm3(lesions);
  if (load == 0.0) throw ArgumentError("longitudinal synthesis needs at least one lesion");
  const double alpha = cfg.alpha ? *cfg.alpha : rng.uniform(cfg.alpha_low, cfg.alpha_high);
  if (!(alpha > 0.0)) throw ArgumentError("alpha must be positive");
  const double target = alpha * load;

  LongitudinalSynth out;
  const Mask empty(image.grid());
  if (alpha >= 1.0) {
    AugmentResult r = populate(image, lesions, bank, wm, target, rng, cfg.populate);
    out.image_t2 = std::move(r.image);
    out.all_t2 = std::move(r.lesions);
    out.new_lesions = std::move(r.changed);
    out.vanishing = empty;
    out.plan = std::move(r.plan);
  } else {
    const auto comps = connected_components(lesions, Connectivity::TwentySix);
    std::vector<std::size_t> order(comps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return comps[a].voxels.size() < comps[b].voxels.size();
    });
    std::vector<std::size_t> chosen;
    double remaining = load;
    for (std::size_t c : order) {
      if (remaining <= target) break;
      chosen.push_back(c);
      remaining -= comps[c].volume_mm3;
    }
    AugmentResult r = inpaint(image, lesions, chosen, cfg.inpaint_sigma_mm);
    out.image_t2 = std::move(r.image);
    out.all_t2 = std::move(r.lesions);
    out.new_lesions = empty;
    out.vanishing = std::move(r.changed);
    out.plan = std::move(r.plan);
  }
  out.plan.alpha = alpha;
  out.plan.target_load_mm3 = target;
  return out;
}

// ------------------------------------------------------------- balance

namespace {

struct Source {
  std::string id;
  int timepoint = 1;
  Volume image;
  Mask lesions;
  Mask wm;
};

std::optional<Source> usable_source(const DatasetManifest& m, const SubjectRecord& rec) {
  const LoadedSubject s = load_subject(m, rec);
  for (int k = 0; k < s.size(); ++k) {
    const Timepoint& tp = s.timepoints[k];
    if (!tp.wm || !tp.all || count(*tp.all) == 0) continue;
    return Source{rec.id, k + 1, tp.image, *tp.all, *tp.wm};
  }
  return std::nullopt;
}

}  // namespace

BalanceResult balance_dataset(const DatasetManifest& manifest, const LesionBank& bank,
                              int per_dataset_target, Rng& rng, const fs::path& out_dir,
                              const SynthConfig& cfg) {
  if (per_dataset_target < 0) throw ArgumentError("per-dataset target must be non-negative");
  fs::create_directories(out_dir);

  BalanceResult result;
  result.manifest.name = manifest.name;
  result.manifest.base_dir = out_dir;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SubjectRecord*>> train;
  std::map<std::string, bool> taken;
  for (const auto& rec : manifest.subjects) {
    SubjectRecord copy = rec;
    copy.dataset = manifest.dataset_of(rec);
    auto abs = [&](std::string& p) { p = fs::absolute(manifest.resolve(p)).string(); };
    for (auto& tp : copy.timepoints) {
      abs(tp.image);
      for (auto* o : {&tp.wm, &tp.all, &tp.new_lesions, &tp.vanishing})
        if (*o) abs(**o);
    }
    result.manifest.subjects.push_back(copy);
    taken[rec.id] = true;
    if (!train.count(copy.dataset)) {
      order.push_back(copy.dataset);
      train[copy.dataset];
    }
    if (rec.split == Split::Train) train[copy.dataset].push_back(&rec);
  }

  for (const auto& ds : order) {
    auto& records = train[ds];
    const int missing = per_dataset_target - static_cast<int>(records.size());
    if (missing < 0)
      throw ArgumentError("dataset " + ds + " already has " + std::to_string(records.size()) +
                          " train subjects, above the target of " +
                          std::to_string(per_dataset_target));
    if (missing == 0) continue;
    std::vector<Source> sources;
    for (const auto* rec : records)
      if (auto s = usable_source(manifest, *rec)) sources.push_back(std::move(*s));
    if (sources.empty())
      throw ValidationError("dataset " + ds +
                            " has no train subject with a lesion label and white-matter mask");

    for (int k = 0; k < missing; ++k) {
      const Source& src = sources[static_cast<std::size_t>(k) % sources.size()];
      const std::uint64_t seed = rng.fork_seed();
      Rng local(seed);
      const LongitudinalSynth syn =
          synth_longitudinal(src.image, src.lesions, bank, src.wm, cfg, local);

      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "_lm%03d", k + 1);
      std::string id = ds + suffix;
      while (taken.count(id)) id += "x";
      taken[id] = true;

      auto write = [&](const auto& img, int tp, const std::string& kind) {
        const std::string name = scan_filename(id, tp, kind);
        save_nifti(img, out_dir / name);
        return name;
      };
      SubjectRecord rec;
      rec.id = id;
      rec.dataset = ds;
      rec.format = SubjectFormat::Longitudinal;
      rec.split = Split::Train;
      rec.availability = {true, true, true, true};
      TimepointPaths t1, t2;
      t1.image = write(src.image, 1, "image");
      t1.wm = write(src.wm, 1, "wm");
      t1.all = write(src.lesions, 1, "all");
      t2.image = write(syn.image_t2, 2, "image");
      t2.wm = write(src.wm, 2, "wm");
      t2.all = write(syn.all_t2, 2, "all");
      t2.new_lesions = write(syn.new_lesions, 2, "new");
      t2.vanishing = write(syn.vanishing, 2, "vanishing");
      rec.timepoints = {t1, t2};

      json plan = {{"subject", id},
                   {"source_subject", src.id},
                   {"source_timepoint", src.timepoint},
                   {"seed", seed},
                   {"plan", syn.plan}};
      std::ofstream(out_dir / (id + "_plan.json")) << plan.dump(2) << '\n';

      result.manifest.subjects.push_back(std::move(rec));
      result.generated_ids.push_back(id);
    }
  }
  return result;
}

}  // namespace lesionforge
