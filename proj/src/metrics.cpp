#include "pfseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace pfseg {

namespace {

void require_mask_pair(const Volume& a, const Volume& b, const char* what) {
  if (a.c != 1 || b.c != 1)
    throw ValidationError(std::string(what) + ": masks must be single-channel");
  if (a.w != b.w || a.h != b.h || a.d != b.d)
    throw ValidationError(std::string(what) + ": mask dims differ");
  for (const Volume* v : {&a, &b})
    for (float x : v->data)
      if (x != 0.0f && x != 1.0f)
        throw ValidationError(std::string(what) + ": mask must be binary");
}

struct Overlap {
  std::int64_t na = 0, nb = 0, inter = 0;
};

Overlap count_overlap(const Volume& a, const Volume& b) {
  Overlap o;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool fa = a.data[i] == 1.0f, fb = b.data[i] == 1.0f;
    o.na += fa;
    o.nb += fb;
    o.inter += fa && fb;
  }
  return o;
}

// Felzenszwalb-Huttenlocher 1D squared distance transform; exact for the
// integer site squared-distances produced here.
void dt_1d(const double* f, double* out, int n, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[k];
      s = (f[q] + static_cast<double>(q) * q - f[p] - static_cast<double>(p) * p) /
          (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = dq * dq + f[v[k]];
  }
}

// Exact squared EDT to the set marked true in `site`, over a W*H*D grid.
// Non-site cells start at a large finite sentinel (keeps the envelope
// arithmetic NaN-free); any true distance beats it, so results are exact.
std::vector<double> edt_squared(const std::vector<char>& site, int w, int h, int d) {
  const double inf = 1e18;
  std::vector<double> dist(site.size());
  for (std::size_t i = 0; i < site.size(); ++i) dist[i] = site[i] ? 0.0 : inf;

  const int nmax = std::max(w, std::max(h, d));
  std::vector<double> f(static_cast<std::size_t>(nmax)), g(static_cast<std::size_t>(nmax));
  std::vector<int> v(static_cast<std::size_t>(nmax));
  std::vector<double> z(static_cast<std::size_t>(nmax) + 1);
  auto idx = [w, h](int x, int y, int zc) {
    return (static_cast<std::size_t>(zc) * h + y) * w + x;
  };

  for (int zc = 0; zc < d; ++zc)
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = dist[idx(x, y, zc)];
      dt_1d(f.data(), g.data(), w, v.data(), z.data());
      for (int x = 0; x < w; ++x) dist[idx(x, y, zc)] = g[static_cast<std::size_t>(x)];
    }
  for (int zc = 0; zc < d; ++zc)
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = dist[idx(x, y, zc)];
      dt_1d(f.data(), g.data(), h, v.data(), z.data());
      for (int y = 0; y < h; ++y) dist[idx(x, y, zc)] = g[static_cast<std::size_t>(y)];
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int zc = 0; zc < d; ++zc) f[static_cast<std::size_t>(zc)] = dist[idx(x, y, zc)];
      dt_1d(f.data(), g.data(), d, v.data(), z.data());
      for (int zc = 0; zc < d; ++zc) dist[idx(x, y, zc)] = g[static_cast<std::size_t>(zc)];
    }
  return dist;
}

double percentile_95(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  if (m == 1) return v[0];
  const double pos = 0.95 * static_cast<double>(m - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= m) return v[m - 1];
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

double dice_score(const Volume& a, const Volume& b) {
  require_mask_pair(a, b, "dice_score");
  const Overlap o = count_overlap(a, b);
  if (o.na + o.nb == 0) return 1.0;
  return 2.0 * static_cast<double>(o.inter) / static_cast<double>(o.na + o.nb);
}

double jaccard(const Volume& a, const Volume& b) {
  require_mask_pair(a, b, "jaccard");
  const Overlap o = count_overlap(a, b);
  const std::int64_t uni = o.na + o.nb - o.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(o.inter) / static_cast<double>(uni);
}

std::vector<std::array<int, 3>> boundary_voxels(const Volume& mask) {
  std::vector<std::array<int, 3>> out;
  auto fg = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= mask.w || y >= mask.h || z >= mask.d) return false;
    return mask.at(x, y, z) == 1.0f;
  };
  for (int z = 0; z < mask.d; ++z)
    for (int y = 0; y < mask.h; ++y)
      for (int x = 0; x < mask.w; ++x) {
        if (!fg(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) ||
            !fg(x, y, z - 1) || !fg(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

Hd95Result hd95(const Volume& a, const Volume& b) {
  require_mask_pair(a, b, "hd95");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) return {};

  auto mark = [&](const std::vector<std::array<int, 3>>& pts) {
    std::vector<char> site(static_cast<std::size_t>(a.w) * a.h * a.d, 0);
    for (const auto& p : pts)
      site[(static_cast<std::size_t>(p[2]) * a.h + p[1]) * a.w + p[0]] = 1;
    return site;
  };
  const std::vector<double> to_b = edt_squared(mark(bb), a.w, a.h, a.d);
  const std::vector<double> to_a = edt_squared(mark(ba), a.w, a.h, a.d);

  std::vector<double> pooled;
  pooled.reserve(ba.size() + bb.size());
  auto flat = [&](const std::array<int, 3>& p) {
    return (static_cast<std::size_t>(p[2]) * a.h + p[1]) * a.w + p[0];
  };
  for (const auto& p : ba) pooled.push_back(std::sqrt(to_b[flat(p)]));
  for (const auto& p : bb) pooled.push_back(std::sqrt(to_a[flat(p)]));
  return {percentile_95(pooled), true};
}

}  // namespace pfseg
