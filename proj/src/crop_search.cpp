#include "pfseg/crop_search.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace pfseg {

double patch_variance(const Volume& v, const PatchSpec& s) {
  if (!s.inside(v.w, v.h, v.d))
    throw ValidationError("patch_variance spec origin " + dims_str({s.x0, s.y0, s.z0}) +
                          " size " + dims_str({s.w, s.h, s.d}) + " outside volume " +
                          dims_str({v.w, v.h, v.d}));
  const std::int64_t n = s.w * s.h * s.d * v.c;
  double mean = 0.0;
  for (std::int64_t ch = 0; ch < v.c; ++ch)
    for (std::int64_t z = s.z0; z < s.z0 + s.d; ++z)
      for (std::int64_t y = s.y0; y < s.y0 + s.h; ++y)
        for (std::int64_t x = s.x0; x < s.x0 + s.w; ++x) mean += v.at(x, y, z, ch);
  mean /= static_cast<double>(n);
  double acc = 0.0;
  for (std::int64_t ch = 0; ch < v.c; ++ch)
    for (std::int64_t z = s.z0; z < s.z0 + s.d; ++z)
      for (std::int64_t y = s.y0; y < s.y0 + s.h; ++y)
        for (std::int64_t x = s.x0; x < s.x0 + s.w; ++x) {
          const double e = v.at(x, y, z, ch) - mean;
          acc += e * e;
        }
  return acc / static_cast<double>(n);
}

std::array<std::int64_t, 3> spherical_to_center(double r, double theta, double phi,
                                                std::int64_t w, std::int64_t h,
                                                std::int64_t d) {
  if (r < 0) throw ValidationError("spherical radius must be non-negative");
  const double st = std::sin(theta);
  return {std::llround(r * st * std::cos(phi) + static_cast<double>(w) / 2.0),
          std::llround(r * st * std::sin(phi) + static_cast<double>(h) / 2.0),
          std::llround(r * std::cos(theta) + static_cast<double>(d) / 2.0)};
}

namespace {

PatchSpec spec_at(std::int64_t cx, std::int64_t cy, std::int64_t cz,
                  const CropSearchConfig& cfg) {
  return {cx - cfg.patch_w / 2, cy - cfg.patch_h / 2, cz - cfg.patch_d / 2,
          cfg.patch_w, cfg.patch_h, cfg.patch_d};
}

void validate_config(const Volume& v, const CropSearchConfig& cfg) {
  if (cfg.patch_w < 1 || cfg.patch_h < 1 || cfg.patch_d < 1 || cfg.patch_w > v.w ||
      cfg.patch_h > v.h || cfg.patch_d > v.d)
    throw ValidationError("crop-search patch " +
                          dims_str({cfg.patch_w, cfg.patch_h, cfg.patch_d}) +
                          " does not fit volume " + dims_str({v.w, v.h, v.d}));
  if (!(cfg.r_step > 0) || !(cfg.theta_step > 0) || !(cfg.phi_step > 0))
    throw ValidationError("crop-search step sizes must be positive");
  if (cfg.patience < 1) throw ValidationError("crop-search patience must be >= 1");
}

}  // namespace

std::pair<PatchSpec, CropSearchTrace> selective_crop(const Volume& v,
                                                     const CropSearchConfig& cfg) {
  validate_config(v, cfg);
  CropSearchTrace trace;
  trace.exit_reason = CropExit::exhausted;

  const PatchSpec central = central_crop(v, cfg.patch_w, cfg.patch_h, cfg.patch_d);
  trace.best = central;
  trace.best_variance = patch_variance(v, central);
  trace.visited.push_back({central.x0 + cfg.patch_w / 2, central.y0 + cfg.patch_h / 2,
                           central.z0 + cfg.patch_d / 2, trace.best_variance});

  std::set<std::array<std::int64_t, 3>> seen = {
      {trace.visited[0].x, trace.visited[0].y, trace.visited[0].z}};
  int stall = 0;

  const double hw = static_cast<double>(v.w) / 2.0, hh = static_cast<double>(v.h) / 2.0,
               hd = static_cast<double>(v.d) / 2.0;
  const double L = std::sqrt(hw * hw + hh * hh + hd * hd);
  constexpr double pi = std::numbers::pi;
  const double eps = 1e-9;

  for (std::int64_t ri = 1; ri * cfg.r_step * L <= L + eps; ++ri) {
    const double r = ri * cfg.r_step * L;
    for (std::int64_t ti = 0; ti * cfg.theta_step <= pi + eps; ++ti) {
      const double theta = ti * cfg.theta_step;
      for (std::int64_t pi_i = 0; pi_i * cfg.phi_step <= 2.0 * pi + eps; ++pi_i) {
        const double phi = pi_i * cfg.phi_step;
        const auto c = spherical_to_center(r, theta, phi, v.w, v.h, v.d);
        const PatchSpec s = spec_at(c[0], c[1], c[2], cfg);
        if (!s.inside(v.w, v.h, v.d)) {
          if (cfg.scan_strict) {
            trace.exit_reason = CropExit::boundary;
            return {trace.best, trace};
          }
          continue;  // prune just this candidate, keep scanning
        }
        if (!seen.insert(c).second) continue;  // pole/azimuth degeneracy
        const double var = patch_variance(v, s);
        trace.visited.push_back({c[0], c[1], c[2], var});
        if (var > trace.best_variance) {
          trace.best_variance = var;
          trace.best = s;
          stall = 0;
        } else if (++stall >= cfg.patience) {
          trace.exit_reason = CropExit::patience;
          return {trace.best, trace};
        }
      }
    }
  }
  return {trace.best, trace};
}

PatchSpec central_crop(const Volume& v, std::int64_t w, std::int64_t h, std::int64_t d) {
  if (w < 1 || h < 1 || d < 1 || w > v.w || h > v.h || d > v.d)
    throw ValidationError("central crop " + dims_str({w, h, d}) +
                          " does not fit volume " + dims_str({v.w, v.h, v.d}));
  return {(v.w - w) / 2, (v.h - h) / 2, (v.d - d) / 2, w, h, d};
}

PatchSpec random_crop(const Volume& v, std::int64_t w, std::int64_t h, std::int64_t d,
                      Rng& rng) {
  if (w < 1 || h < 1 || d < 1 || w > v.w || h > v.h || d > v.d)
    throw ValidationError("random crop " + dims_str({w, h, d}) +
                          " does not fit volume " + dims_str({v.w, v.h, v.d}));
  return {rng.uniform_int(0, v.w - w), rng.uniform_int(0, v.h - h),
          rng.uniform_int(0, v.d - d), w, h, d};
}

std::string trace_tsv(const CropSearchTrace& trace) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const CropCandidate& c : trace.visited)
    os << c.x << '\t' << c.y << '\t' << c.z << '\t' << c.variance << '\n';
  return os.str();
}

}  // namespace pfseg
