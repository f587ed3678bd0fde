#include "pfseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pfseg {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'V', '1'};
constexpr std::uint64_t kMaxElements = (1ull << 31) - 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

const char* kind_name(VolumeKind k) {
  switch (k) {
    case VolumeKind::image: return "image";
    case VolumeKind::soft_mask: return "soft-mask";
    case VolumeKind::binary_mask: return "binary-mask";
  }
  return "?";
}

}  // namespace

Volume Volume::zeros(std::int64_t w, std::int64_t h, std::int64_t d, VolumeKind kind,
                     std::int64_t c) {
  Volume v;
  v.w = w;
  v.h = h;
  v.d = d;
  v.c = c;
  v.kind = kind;
  if (w < 1 || h < 1 || d < 1 || c < 1)
    throw ValidationError("volume dims must be >= 1, got " + dims_str({w, h, d, c}));
  v.data.assign(static_cast<std::size_t>(w * h * d * c), 0.0f);
  return v;
}

void Volume::validate() const {
  if (w < 1 || h < 1 || d < 1 || c < 1)
    throw ValidationError("volume dims must be >= 1, got " + dims_str({w, h, d, c}));
  if (static_cast<std::int64_t>(data.size()) != size())
    throw ValidationError("volume data length " + std::to_string(data.size()) +
                          " does not match dims " + dims_str({w, h, d, c}));
  if (kind == VolumeKind::binary_mask) {
    for (float v : data)
      if (v != 0.0f && v != 1.0f)
        throw ValidationError("binary-mask volume contains non-binary value " +
                              std::to_string(v));
  } else if (kind == VolumeKind::soft_mask) {
    for (float v : data)
      if (!(v >= 0.0f && v <= 1.0f))
        throw ValidationError("soft-mask volume contains out-of-range value " +
                              std::to_string(v));
  }
}

Volume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open volume file " + path);
  unsigned char header[24];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() < 4 || std::memcmp(header, kMagic, 4) != 0)
    throw IoError(IoError::Kind::BadMagic, path + ": not a PFV1 volume");
  if (in.gcount() != sizeof(header))
    throw IoError(IoError::Kind::Truncated, path + ": truncated header");
  const std::uint32_t w = get_u32(header + 4), h = get_u32(header + 8),
                      d = get_u32(header + 12), c = get_u32(header + 16);
  const std::uint8_t kind = header[20];
  if (w == 0 || h == 0 || d == 0 || c == 0)
    throw IoError(IoError::Kind::BadHeader, path + ": zero extent in header");
  if (kind > 2 || header[21] != 0 || header[22] != 0 || header[23] != 0)
    throw IoError(IoError::Kind::BadHeader, path + ": bad kind or reserved bytes");
  const std::uint64_t total = static_cast<std::uint64_t>(w) * h * d * c;
  if (total > kMaxElements)
    throw IoError(IoError::Kind::DimOverflow,
                  path + ": header declares " + std::to_string(total) + " elements");
  Volume v;
  v.w = w;
  v.h = h;
  v.d = d;
  v.c = c;
  v.kind = static_cast<VolumeKind>(kind);
  v.data.resize(static_cast<std::size_t>(total));
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(total * sizeof(float)))
    throw IoError(IoError::Kind::Truncated, path + ": truncated payload");
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw IoError(IoError::Kind::BadHeader, path + ": trailing bytes after payload");
  v.validate();
  return v;
}

void save_volume(const Volume& v, const std::string& path) {
  v.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot write volume file " + path);
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(v.w));
  put_u32(out, static_cast<std::uint32_t>(v.h));
  put_u32(out, static_cast<std::uint32_t>(v.d));
  put_u32(out, static_cast<std::uint32_t>(v.c));
  const unsigned char tail[4] = {static_cast<unsigned char>(v.kind), 0, 0, 0};
  out.write(reinterpret_cast<const char*>(tail), 4);
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!out) throw IoError(IoError::Kind::OpenFailed, "short write to " + path);
}

std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open manifest " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": manifest line is not image<TAB>mask");
    out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

void save_manifest(const std::vector<std::pair<std::string, std::string>>& entries,
                   const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot write manifest " + path);
  for (const auto& [img, mask] : entries) out << img << '\t' << mask << '\n';
}

Volume downsample(const Volume& v, int factor) {
  v.validate();
  if (factor < 1) throw ValidationError("downsample factor must be >= 1");
  if (v.w % factor || v.h % factor || v.d % factor)
    throw ValidationError("downsample: dims " + dims_str({v.w, v.h, v.d}) +
                          " not divisible by " + std::to_string(factor));
  Volume o = Volume::zeros(v.w / factor, v.h / factor, v.d / factor,
                           v.kind == VolumeKind::binary_mask ? VolumeKind::soft_mask
                                                             : v.kind,
                           v.c);
  const double inv = 1.0 / (static_cast<double>(factor) * factor * factor);
  for (std::int64_t ch = 0; ch < v.c; ++ch)
    for (std::int64_t z = 0; z < o.d; ++z)
      for (std::int64_t y = 0; y < o.h; ++y)
        for (std::int64_t x = 0; x < o.w; ++x) {
          double acc = 0.0;
          for (std::int64_t dz = 0; dz < factor; ++dz)
            for (std::int64_t dy = 0; dy < factor; ++dy)
              for (std::int64_t dx = 0; dx < factor; ++dx)
                acc += v.at(x * factor + dx, y * factor + dy, z * factor + dz, ch);
          o.at(x, y, z, ch) = static_cast<float>(acc * inv);
        }
  return o;
}

Volume downsample_mask_max(const Volume& v, int factor) {
  v.validate();
  if (factor < 1) throw ValidationError("downsample factor must be >= 1");
  if (v.w % factor || v.h % factor || v.d % factor)
    throw ValidationError("downsample: dims " + dims_str({v.w, v.h, v.d}) +
                          " not divisible by " + std::to_string(factor));
  Volume o = Volume::zeros(v.w / factor, v.h / factor, v.d / factor, v.kind, v.c);
  for (std::int64_t ch = 0; ch < v.c; ++ch)
    for (std::int64_t z = 0; z < o.d; ++z)
      for (std::int64_t y = 0; y < o.h; ++y)
        for (std::int64_t x = 0; x < o.w; ++x) {
          float best = v.at(x * factor, y * factor, z * factor, ch);
          for (std::int64_t dz = 0; dz < factor; ++dz)
            for (std::int64_t dy = 0; dy < factor; ++dy)
              for (std::int64_t dx = 0; dx < factor; ++dx)
                best = std::max(best,
                                v.at(x * factor + dx, y * factor + dy, z * factor + dz, ch));
          o.at(x, y, z, ch) = best;
        }
  return o;
}

double catmull_rom_1d(const double p[4], double t) {
  const double t2 = t * t, t3 = t2 * t;
  const double w0 = 0.5 * (-t3 + 2.0 * t2 - t);
  const double w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
  const double w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
  const double w3 = 0.5 * (t3 - t2);
  return w0 * p[0] + w1 * p[1] + w2 * p[2] + w3 * p[3];
}

namespace {

struct CubicTaps {
  std::int64_t i[4];
  double w[4];
};

std::vector<CubicTaps> cubic_axis_taps(std::int64_t n_in, int factor) {
  std::vector<CubicTaps> taps(static_cast<std::size_t>(n_in * factor));
  for (std::int64_t o = 0; o < n_in * factor; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const double fl = std::floor(src);
    const std::int64_t base = static_cast<std::int64_t>(fl);
    const double t = src - fl;
    const double t2 = t * t, t3 = t2 * t;
    CubicTaps& ct = taps[static_cast<std::size_t>(o)];
    ct.w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
    ct.w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
    ct.w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
    ct.w[3] = 0.5 * (t3 - t2);
    for (int k = 0; k < 4; ++k)
      ct.i[k] = std::clamp<std::int64_t>(base - 1 + k, 0, n_in - 1);
  }
  return taps;
}

}  // namespace

Volume upsample_tricubic(const Volume& v, int factor) {
  v.validate();
  if (factor < 2) throw ValidationError("upsample_tricubic needs factor >= 2");
  Volume o = Volume::zeros(v.w * factor, v.h * factor, v.d * factor,
                           v.kind == VolumeKind::binary_mask ? VolumeKind::soft_mask
                                                             : v.kind,
                           v.c);
  const auto tx = cubic_axis_taps(v.w, factor);
  const auto ty = cubic_axis_taps(v.h, factor);
  const auto tz = cubic_axis_taps(v.d, factor);
  for (std::int64_t ch = 0; ch < v.c; ++ch)
#pragma omp parallel for schedule(static) num_threads(worker_threads())
    for (std::int64_t zo = 0; zo < o.d; ++zo) {
      const CubicTaps& az = tz[static_cast<std::size_t>(zo)];
      for (std::int64_t yo = 0; yo < o.h; ++yo) {
        const CubicTaps& ay = ty[static_cast<std::size_t>(yo)];
        for (std::int64_t xo = 0; xo < o.w; ++xo) {
          const CubicTaps& ax = tx[static_cast<std::size_t>(xo)];
          double acc = 0.0;
          for (int kz = 0; kz < 4; ++kz)
            for (int ky = 0; ky < 4; ++ky) {
              double row = 0.0;
              for (int kx = 0; kx < 4; ++kx)
                row += ax.w[kx] * v.at(ax.i[kx], ay.i[ky], az.i[kz], ch);
              acc += az.w[kz] * ay.w[ky] * row;
            }
          o.at(xo, yo, zo, ch) = static_cast<float>(acc);
        }
      }
    }
  if (o.kind == VolumeKind::soft_mask)  // cubic lobes can overshoot [0,1]
    for (float& f : o.data) f = std::clamp(f, 0.0f, 1.0f);
  return o;
}

Volume normalize(const Volume& v) {
  v.validate();
  if (v.kind != VolumeKind::image)
    throw ValidationError(std::string("normalize expects an image volume, got ") +
                          kind_name(v.kind));
  double mean = 0.0;
  for (float f : v.data) mean += f;
  mean /= static_cast<double>(v.data.size());
  double var = 0.0;
  for (float f : v.data) {
    const double d0 = f - mean;
    var += d0 * d0;
  }
  var /= static_cast<double>(v.data.size());
  const double denom = std::max(std::sqrt(var), 1e-6);
  Volume o = v;
  for (float& f : o.data) f = static_cast<float>((f - mean) / denom);
  return o;
}

Volume crop(const Volume& v, const PatchSpec& s) {
  v.validate();
  if (!s.inside(v.w, v.h, v.d))
    throw ValidationError("crop spec origin " + dims_str({s.x0, s.y0, s.z0}) + " size " +
                          dims_str({s.w, s.h, s.d}) + " outside volume " +
                          dims_str({v.w, v.h, v.d}));
  Volume o = Volume::zeros(s.w, s.h, s.d, v.kind, v.c);
  for (std::int64_t ch = 0; ch < v.c; ++ch)
    for (std::int64_t z = 0; z < s.d; ++z)
      for (std::int64_t y = 0; y < s.h; ++y) {
        const std::int64_t src = ((ch * v.d + s.z0 + z) * v.h + s.y0 + y) * v.w + s.x0;
        std::memcpy(&o.at(0, y, z, ch), v.data.data() + src,
                    static_cast<std::size_t>(s.w) * sizeof(float));
      }
  return o;
}

void paste(Volume& dst, const Volume& src, std::int64_t x0, std::int64_t y0,
           std::int64_t z0) {
  if (src.c != dst.c || x0 < 0 || y0 < 0 || z0 < 0 || x0 + src.w > dst.w ||
      y0 + src.h > dst.h || z0 + src.d > dst.d)
    throw ValidationError("paste target region outside destination volume");
  for (std::int64_t ch = 0; ch < src.c; ++ch)
    for (std::int64_t z = 0; z < src.d; ++z)
      for (std::int64_t y = 0; y < src.h; ++y) {
        const std::int64_t row = ((ch * src.d + z) * src.h + y) * src.w;
        std::memcpy(&dst.at(x0, y0 + y, z0 + z, ch), src.data.data() + row,
                    static_cast<std::size_t>(src.w) * sizeof(float));
      }
}

Tensor<float> to_tensor(const Volume& v) {
  return Tensor<float>::from_data({v.c, v.w, v.h, v.d}, v.data);
}

Volume to_volume(const Tensor<float>& t, VolumeKind kind) {
  if (t.rank() != 4)
    throw ShapeError("to_volume expects a rank-4 tensor, got " + dims_str(t.shape()));
  Volume v;
  v.c = t.extent(0);
  v.w = t.extent(1);
  v.h = t.extent(2);
  v.d = t.extent(3);
  v.kind = kind;
  v.data = t.data();
  v.validate();
  return v;
}

namespace {

// Piecewise-trilinear interpolation of a coarse random grid: cheap, smooth at
// the voxel scale, and libm-free.
struct CoarseField {
  std::int64_t gw, gh, gd, fs;
  std::vector<float> g;

  CoarseField(std::int64_t w, std::int64_t h, std::int64_t d, std::int64_t fs_, Rng& rng,
              double lo, double hi)
      : gw((w - 1) / fs_ + 2), gh((h - 1) / fs_ + 2), gd((d - 1) / fs_ + 2), fs(fs_) {
    g.resize(static_cast<std::size_t>(gw * gh * gd));
    for (auto& v : g) v = static_cast<float>(rng.uniform(lo, hi));
  }

  float node(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return g[static_cast<std::size_t>((k * gh + j) * gw + i)];
  }

  double at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    const std::int64_t i = x / fs, j = y / fs, k = z / fs;
    const double tx = static_cast<double>(x % fs) / static_cast<double>(fs);
    const double ty = static_cast<double>(y % fs) / static_cast<double>(fs);
    const double tz = static_cast<double>(z % fs) / static_cast<double>(fs);
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          acc += (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz) *
                 node(i + dx, j + dy, k + dz);
    return acc;
  }
};

std::int64_t iceil(double r) {
  auto t = static_cast<std::int64_t>(r);
  return r > static_cast<double>(t) ? t + 1 : t;
}

}  // namespace

std::pair<Volume, Volume> generate_phantom(const PhantomSpec& spec) {
  if (spec.w < 8 || spec.h < 8 || spec.d < 8)
    throw ValidationError("phantom dims must be >= 8, got " +
                          dims_str({spec.w, spec.h, spec.d}));
  const std::int64_t cr_max = iceil(spec.radius_max);
  if (2 * cr_max + 1 > std::min({spec.w, spec.h, spec.d}))
    throw ValidationError("phantom lesion radius " + std::to_string(spec.radius_max) +
                          " does not fit inside dims " +
                          dims_str({spec.w, spec.h, spec.d}));
  if (spec.lesions_min < 1 || spec.lesions_max < spec.lesions_min)
    throw ValidationError("phantom lesion count range invalid");
  if (!(spec.radius_min > 0) || spec.radius_max < spec.radius_min)
    throw ValidationError("phantom radius range invalid");
  auto band_ok = [](double lo, double hi) { return 0.0 <= lo && lo <= hi && hi <= 1.0; };
  if (!band_ok(spec.bg_lo, spec.bg_hi) || !band_ok(spec.lesion_lo, spec.lesion_hi))
    throw ValidationError("phantom intensity bands must lie in [0,1]");
  if (spec.noise_std < 0 || spec.field_scale < 2)
    throw ValidationError("phantom noise/field parameters invalid");
  if (!(spec.min_mask_fraction > 0) || spec.max_mask_fraction <= spec.min_mask_fraction ||
      spec.max_mask_fraction > 1)
    throw ValidationError("phantom mask fraction range invalid");

  Rng rng_field(derive_seed(spec.seed, 1));
  const CoarseField field(spec.w, spec.h, spec.d, spec.field_scale, rng_field,
                          spec.bg_lo, spec.bg_hi);
  Volume background = Volume::zeros(spec.w, spec.h, spec.d, VolumeKind::image);
  for (std::int64_t z = 0; z < spec.d; ++z)
    for (std::int64_t y = 0; y < spec.h; ++y)
      for (std::int64_t x = 0; x < spec.w; ++x)
        background.at(x, y, z) = static_cast<float>(field.at(x, y, z));

  const std::int64_t total = spec.w * spec.h * spec.d;
  Volume image, mask;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 100 && !ok; ++attempt) {
    image = background;
    mask = Volume::zeros(spec.w, spec.h, spec.d, VolumeKind::binary_mask);
    Rng rng(derive_seed(spec.seed, 2, attempt));
    const std::int64_t n_lesions = rng.uniform_int(spec.lesions_min, spec.lesions_max);
    for (std::int64_t li = 0; li < n_lesions; ++li) {
      const double rx = rng.uniform(spec.radius_min, spec.radius_max);
      const double ry = rng.uniform(spec.radius_min, spec.radius_max);
      const double rz = rng.uniform(spec.radius_min, spec.radius_max);
      const std::int64_t mx = iceil(rx), my = iceil(ry), mz = iceil(rz);
      const std::int64_t cx = rng.uniform_int(mx, spec.w - 1 - mx);
      const std::int64_t cy = rng.uniform_int(my, spec.h - 1 - my);
      const std::int64_t cz = rng.uniform_int(mz, spec.d - 1 - mz);
      const double base = rng.uniform(spec.lesion_lo, spec.lesion_hi);
      for (std::int64_t z = cz - mz; z <= cz + mz; ++z)
        for (std::int64_t y = cy - my; y <= cy + my; ++y)
          for (std::int64_t x = cx - mx; x <= cx + mx; ++x) {
            const double ux = (x - cx) / rx, uy = (y - cy) / ry, uz = (z - cz) / rz;
            const double rho2 = ux * ux + uy * uy + uz * uz;
            if (rho2 <= 1.0) {
              mask.at(x, y, z) = 1.0f;
              // bright core fading toward the rim: in-lesion texture
              image.at(x, y, z) = static_cast<float>(base - 0.12 * rho2);
            }
          }
    }
    std::int64_t count = 0;
    for (float v : mask.data) count += v != 0.0f;
    const double frac = static_cast<double>(count) / static_cast<double>(total);
    ok = frac >= spec.min_mask_fraction && frac <= spec.max_mask_fraction;
  }
  if (!ok)
    throw RuntimeFailure("phantom generator could not hit the mask-fraction band for seed " +
                         std::to_string(spec.seed));

  Rng rng_noise(derive_seed(spec.seed, 3));
  for (float& v : image.data)
    v = static_cast<float>(v + spec.noise_std * rng_noise.gauss());
  return {std::move(image), std::move(mask)};
}

}  // namespace pfseg
