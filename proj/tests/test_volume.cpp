#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pfseg/ops.hpp"
#include "pfseg/volume.hpp"

using namespace pfseg;

namespace {

std::string tmp_path(const std::string& name) {
  return "pfseg_test_" + name;  // ctest runs each binary in its own build dir
}

Volume random_volume(std::int64_t w, std::int64_t h, std::int64_t d, std::int64_t c,
                     std::uint64_t seed, VolumeKind kind = VolumeKind::image) {
  Volume v = Volume::zeros(w, h, d, kind, c);
  Rng rng(seed);
  for (float& f : v.data) {
    if (kind == VolumeKind::binary_mask)
      f = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    else if (kind == VolumeKind::soft_mask)
      f = static_cast<float>(rng.uniform());
    else
      f = static_cast<float>(rng.uniform(-2.0, 2.0));
  }
  return v;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::vector<unsigned char> pfv1_header(std::uint32_t w, std::uint32_t h, std::uint32_t d,
                                       std::uint32_t c, unsigned char kind) {
  std::vector<unsigned char> b = {'P', 'F', 'V', '1'};
  push_u32(b, w);
  push_u32(b, h);
  push_u32(b, d);
  push_u32(b, c);
  b.push_back(kind);
  b.insert(b.end(), {0, 0, 0});
  return b;
}

void push_f32(std::vector<unsigned char>& b, float f) {
  unsigned char raw[4];
  std::memcpy(raw, &f, 4);
  b.insert(b.end(), raw, raw + 4);
}

// Piecewise-trilinear field sampled at voxel centers: the lesion-free,
// band-limited background the phantom generator starts from.
Volume smooth_field(std::int64_t w, std::int64_t h, std::int64_t d, std::int64_t fs,
                    std::uint64_t seed) {
  const std::int64_t gw = (w - 1) / fs + 2, gh = (h - 1) / fs + 2, gd = (d - 1) / fs + 2;
  std::vector<double> node(static_cast<std::size_t>(gw * gh * gd));
  Rng rng(seed);
  for (double& n : node) n = rng.uniform(0.25, 0.45);
  Volume v = Volume::zeros(w, h, d);
  for (std::int64_t z = 0; z < d; ++z)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t i = x / fs, j = y / fs, k = z / fs;
        const double tx = double(x % fs) / double(fs), ty = double(y % fs) / double(fs),
                     tz = double(z % fs) / double(fs);
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              acc += (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz) *
                     node[static_cast<std::size_t>(((k + dz) * gh + j + dy) * gw + i + dx)];
        v.at(x, y, z) = static_cast<float>(acc);
      }
  return v;
}

Volume down_up_roundtrip(const Volume& v) {
  NoGradGuard ng;
  Tensor<float> up = upsample_trilinear(to_tensor(v), 2);
  return downsample(to_volume(up, v.kind), 2);
}

}  // namespace

TEST_CASE("pfv1 save/load round-trips bit-exactly") {
  const Volume v = random_volume(8, 8, 8, 2, 19);
  const std::string path = tmp_path("rt.pfv");
  save_volume(v, path);
  const Volume r = load_volume(path);
  CHECK(r.w == v.w);
  CHECK(r.h == v.h);
  CHECK(r.d == v.d);
  CHECK(r.c == v.c);
  CHECK(r.kind == v.kind);
  CHECK(r.data == v.data);  // exact float compare: bit-wise round trip
  std::remove(path.c_str());
}

TEST_CASE("pfv1 preserves mask kinds") {
  const Volume m = random_volume(6, 5, 4, 1, 23, VolumeKind::binary_mask);
  const std::string path = tmp_path("mask.pfv");
  save_volume(m, path);
  const Volume r = load_volume(path);
  CHECK(r.kind == VolumeKind::binary_mask);
  CHECK(r.data == m.data);
  std::remove(path.c_str());
}

TEST_CASE("pfv1 corruption cases map to distinct error kinds") {
  auto kind_of = [](const std::string& path) {
    try {
      load_volume(path);
    } catch (const IoError& e) {
      return e.kind;
    }
    FAIL("expected IoError for ", path);
    return IoError::Kind::OpenFailed;
  };

  SUBCASE("missing file") { CHECK(kind_of("does_not_exist.pfv") == IoError::Kind::OpenFailed); }

  SUBCASE("bad magic") {
    const std::string p = tmp_path("badmagic.pfv");
    write_bytes(p, {'X', 'X', 'X', 'X', 0, 0, 0, 0});
    CHECK(kind_of(p) == IoError::Kind::BadMagic);
    std::remove(p.c_str());
  }

  SUBCASE("truncated header") {
    const std::string p = tmp_path("shorthdr.pfv");
    write_bytes(p, {'P', 'F', 'V', '1', 1, 0});
    CHECK(kind_of(p) == IoError::Kind::Truncated);
    std::remove(p.c_str());
  }

  SUBCASE("truncated payload") {
    const std::string p = tmp_path("shortpay.pfv");
    auto b = pfv1_header(2, 2, 2, 1, 0);
    for (int i = 0; i < 5; ++i) push_f32(b, 1.0f);  // 5 of 8 voxels
    write_bytes(p, b);
    CHECK(kind_of(p) == IoError::Kind::Truncated);
    std::remove(p.c_str());
  }

  SUBCASE("declared size of 2^31 voxels rejected before allocation") {
    const std::string p = tmp_path("huge.pfv");
    write_bytes(p, pfv1_header(2048, 1024, 1024, 1, 0));  // header only, no payload
    CHECK(kind_of(p) == IoError::Kind::DimOverflow);
    std::remove(p.c_str());
  }

  SUBCASE("zero extent") {
    const std::string p = tmp_path("zerodim.pfv");
    write_bytes(p, pfv1_header(0, 4, 4, 1, 0));
    CHECK(kind_of(p) == IoError::Kind::BadHeader);
    std::remove(p.c_str());
  }

  SUBCASE("unknown kind code") {
    const std::string p = tmp_path("badkind.pfv");
    auto b = pfv1_header(1, 1, 1, 1, 7);
    push_f32(b, 0.0f);
    write_bytes(p, b);
    CHECK(kind_of(p) == IoError::Kind::BadHeader);
    std::remove(p.c_str());
  }

  SUBCASE("trailing bytes") {
    const std::string p = tmp_path("trailing.pfv");
    auto b = pfv1_header(1, 1, 1, 1, 0);
    push_f32(b, 0.5f);
    b.push_back(9);
    write_bytes(p, b);
    CHECK(kind_of(p) == IoError::Kind::BadHeader);
    std::remove(p.c_str());
  }

  SUBCASE("payload violating declared kind") {
    const std::string p = tmp_path("badmask.pfv");
    auto b = pfv1_header(1, 1, 1, 1, 2);  // binary mask
    push_f32(b, 0.5f);
    write_bytes(p, b);
    CHECK_THROWS_AS(load_volume(p), ValidationError);
    std::remove(p.c_str());
  }
}

TEST_CASE("manifest round-trip and validation") {
  const std::string p = tmp_path("manifest.tsv");
  const std::vector<std::pair<std::string, std::string>> entries = {
      {"a/img0.pfv", "a/mask0.pfv"}, {"b/img1.pfv", "b/mask1.pfv"}};
  save_manifest(entries, p);
  CHECK(load_manifest(p) == entries);

  std::ofstream(p, std::ios::app) << "no_tab_here\n";
  CHECK_THROWS_AS(load_manifest(p), ValidationError);
  std::remove(p.c_str());
  CHECK_THROWS_AS(load_manifest(p), IoError);
}

TEST_CASE("downsample block averaging") {
  SUBCASE("constant stays constant") {
    Volume v = Volume::zeros(4, 4, 4);
    for (float& f : v.data) f = 0.7f;
    const Volume o = downsample(v, 2);
    CHECK(o.w == 2);
    for (float f : o.data) CHECK(f == doctest::Approx(0.7).epsilon(1e-7));
  }

  SUBCASE("2x2x2 of 0..7 collapses to 3.5") {
    Volume v = Volume::zeros(2, 2, 2);
    for (int i = 0; i < 8; ++i) v.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const Volume o = downsample(v, 2);
    REQUIRE(o.size() == 1);
    CHECK(o.data[0] == doctest::Approx(3.5));
  }

  SUBCASE("mean is preserved exactly") {
    const Volume v = random_volume(8, 8, 8, 1, 31);
    const Volume o = downsample(v, 2);
    double mv = 0, mo = 0;
    for (float f : v.data) mv += f;
    for (float f : o.data) mo += f;
    CHECK(mv / v.data.size() == doctest::Approx(mo / o.data.size()).epsilon(1e-6));
  }

  SUBCASE("binary masks decay to soft masks") {
    const Volume m = random_volume(4, 4, 4, 1, 37, VolumeKind::binary_mask);
    const Volume o = downsample(m, 2);
    CHECK(o.kind == VolumeKind::soft_mask);
    for (float f : o.data) CHECK((f >= 0.0f && f <= 1.0f));
  }

  SUBCASE("indivisible dims rejected") {
    const Volume v = random_volume(5, 4, 4, 1, 41);
    CHECK_THROWS_AS(downsample(v, 2), ValidationError);
  }
}

TEST_CASE("downsample_mask_max keeps thin positives") {
  Volume m = Volume::zeros(4, 4, 4, VolumeKind::binary_mask);
  m.at(3, 0, 0) = 1.0f;  // single voxel in one block
  const Volume o = downsample_mask_max(m, 2);
  CHECK(o.kind == VolumeKind::binary_mask);
  CHECK(o.at(1, 0, 0) == 1.0f);
  std::int64_t ones = 0;
  for (float f : o.data) ones += f == 1.0f;
  CHECK(ones == 1);
}

TEST_CASE("catmull-rom scalar reference") {
  SUBCASE("frozen midpoint of (0,1,2,1)") {
    const double p[4] = {0, 1, 2, 1};
    CHECK(catmull_rom_1d(p, 0.5) == doctest::Approx(1.625).epsilon(1e-12));
  }
  SUBCASE("reproduces linear data for any t") {
    const double p[4] = {-1.0, 0.5, 2.0, 3.5};  // slope 1.5
    for (double t : {0.0, 0.125, 0.5, 0.9})
      CHECK(catmull_rom_1d(p, t) == doctest::Approx(0.5 + 1.5 * t).epsilon(1e-12));
  }
  SUBCASE("interpolates endpoints") {
    const double p[4] = {3.0, -2.0, 7.0, 0.0};
    CHECK(catmull_rom_1d(p, 0.0) == doctest::Approx(-2.0));
    CHECK(catmull_rom_1d(p, 1.0) == doctest::Approx(7.0));
  }
}

TEST_CASE("upsample_tricubic") {
  SUBCASE("constant volume stays constant") {
    Volume v = Volume::zeros(3, 4, 2);
    for (float& f : v.data) f = -1.25f;
    const Volume o = upsample_tricubic(v, 2);
    CHECK(o.w == 6);
    CHECK(o.h == 8);
    CHECK(o.d == 4);
    for (float f : o.data) CHECK(f == doctest::Approx(-1.25).epsilon(1e-7));
  }

  SUBCASE("linear ramp reproduced away from clamped borders") {
    Volume v = Volume::zeros(16, 4, 4);
    for (std::int64_t z = 0; z < 4; ++z)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 16; ++x) v.at(x, y, z) = static_cast<float>(x) / 8.0f;
    const Volume o = upsample_tricubic(v, 2);
    for (std::int64_t xo = 3; xo < o.w - 3; ++xo) {
      const double src = (xo + 0.5) / 2.0 - 0.5;
      CHECK(o.at(xo, 4, 4) == doctest::Approx(src / 8.0).epsilon(1e-6));
    }
  }

  SUBCASE("matches the scalar reference along interior x lines") {
    const Volume v = random_volume(12, 1, 1, 1, 43);
    const Volume o = upsample_tricubic(v, 2);
    for (std::int64_t xo = 3; xo <= 20; ++xo) {  // keeps base-1 .. base+2 unclamped
      const double src = (xo + 0.5) / 2.0 - 0.5;
      const auto base = static_cast<std::int64_t>(src);
      const double t = src - static_cast<double>(base);
      const double p[4] = {v.at(base - 1, 0, 0), v.at(base, 0, 0), v.at(base + 1, 0, 0),
                           v.at(base + 2, 0, 0)};
      CHECK(o.at(xo, 0, 0) == doctest::Approx(catmull_rom_1d(p, t)).epsilon(1e-6));
    }
  }

  SUBCASE("factor below 2 rejected") {
    const Volume v = random_volume(4, 4, 4, 1, 47);
    CHECK_THROWS_AS(upsample_tricubic(v, 1), ValidationError);
  }
}

TEST_CASE("downsample inverts trilinear upsampling on smooth fields") {
  // down(up(v)) = v + 0.125 * (second difference) per axis, so the residual is
  // bounded by the field's curvature. A linear ramp has none away from the
  // clamped borders:
  SUBCASE("exact on a linear ramp interior") {
    Volume v = Volume::zeros(8, 8, 8);
    for (std::int64_t z = 0; z < 8; ++z)
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
          v.at(x, y, z) = static_cast<float>(0.01 * x + 0.02 * y + 0.04 * z);
    const Volume r = down_up_roundtrip(v);
    for (std::int64_t z = 1; z < 7; ++z)
      for (std::int64_t y = 1; y < 7; ++y)
        for (std::int64_t x = 1; x < 7; ++x)
          CHECK(std::abs(r.at(x, y, z) - v.at(x, y, z)) < 1e-5);
  }

  // Piecewise-trilinear backgrounds have slope kinks every field_scale voxels,
  // each contributing up to 0.125 * slope-jump (~6e-3 per axis at this field
  // amplitude). Worst residual measured over seeds 1..5 was 1.03e-2, at a kink
  // corner; budget = 1.5x that measurement.
  SUBCASE("bounded residual on lesion-free background fields") {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Volume v = smooth_field(24, 24, 16, 8, seed);
      const Volume r = down_up_roundtrip(v);
      for (std::int64_t i = 0; i < v.size(); ++i) {
        const double e = std::abs(static_cast<double>(r.data[static_cast<std::size_t>(i)]) -
                                  v.data[static_cast<std::size_t>(i)]);
        worst = std::max(worst, e);
      }
    }
    CAPTURE(worst);
    CHECK(worst < 1.55e-2);
  }
}

TEST_CASE("normalize") {
  SUBCASE("zero mean unit std") {
    const Volume v = random_volume(8, 8, 8, 1, 53);
    const Volume n = normalize(v);
    double mean = 0;
    for (float f : n.data) mean += f;
    mean /= static_cast<double>(n.data.size());
    double var = 0;
    for (float f : n.data) var += (f - mean) * (f - mean);
    var /= static_cast<double>(n.data.size());
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-4));
  }

  SUBCASE("constant volume maps to zeros via the std floor") {
    Volume v = Volume::zeros(4, 4, 4);
    for (float& f : v.data) f = 3.0f;
    const Volume n = normalize(v);
    for (float f : n.data) CHECK(f == 0.0f);
  }

  SUBCASE("idempotent") {
    const Volume v = random_volume(8, 8, 8, 1, 59);
    const Volume n1 = normalize(v);
    const Volume n2 = normalize(n1);
    for (std::int64_t i = 0; i < v.size(); ++i)
      CHECK(n2.data[static_cast<std::size_t>(i)] ==
            doctest::Approx(n1.data[static_cast<std::size_t>(i)]).epsilon(1e-5));
  }

  SUBCASE("masks rejected") {
    const Volume m = random_volume(4, 4, 4, 1, 61, VolumeKind::binary_mask);
    CHECK_THROWS_AS(normalize(m), ValidationError);
  }
}

TEST_CASE("crop and paste") {
  const Volume v = random_volume(8, 6, 5, 2, 67);

  SUBCASE("full-volume crop is the identity") {
    const Volume o = crop(v, {0, 0, 0, 8, 6, 5});
    CHECK(o.data == v.data);
  }

  SUBCASE("single-voxel crop picks that voxel") {
    const Volume o = crop(v, {0, 0, 0, 1, 1, 1});
    CHECK(o.size() == 2);  // one voxel per channel
    CHECK(o.at(0, 0, 0, 0) == v.at(0, 0, 0, 0));
    CHECK(o.at(0, 0, 0, 1) == v.at(0, 0, 0, 1));
  }

  SUBCASE("crop then paste back is the identity, elsewhere untouched") {
    const PatchSpec s{2, 1, 1, 4, 3, 2};
    const Volume patch = crop(v, s);
    Volume w = v;
    paste(w, patch, s.x0, s.y0, s.z0);
    CHECK(w.data == v.data);

    Volume z = Volume::zeros(8, 6, 5, VolumeKind::image, 2);
    paste(z, patch, s.x0, s.y0, s.z0);
    for (std::int64_t ch = 0; ch < 2; ++ch)
      for (std::int64_t zz = 0; zz < 5; ++zz)
        for (std::int64_t yy = 0; yy < 6; ++yy)
          for (std::int64_t xx = 0; xx < 8; ++xx) {
            const bool in = xx >= s.x0 && xx < s.x0 + s.w && yy >= s.y0 &&
                            yy < s.y0 + s.h && zz >= s.z0 && zz < s.z0 + s.d;
            CHECK(z.at(xx, yy, zz, ch) == (in ? v.at(xx, yy, zz, ch) : 0.0f));
          }
  }

  SUBCASE("out-of-bounds specs rejected") {
    CHECK_THROWS_AS(crop(v, {6, 0, 0, 4, 2, 2}), ValidationError);
    CHECK_THROWS_AS(crop(v, {-1, 0, 0, 2, 2, 2}), ValidationError);
    Volume w = v;
    const Volume patch = crop(v, {0, 0, 0, 4, 3, 2});
    CHECK_THROWS_AS(paste(w, patch, 6, 0, 0), ValidationError);
  }
}

TEST_CASE("tensor conversion round-trip") {
  const Volume v = random_volume(5, 4, 3, 2, 71);
  const Tensor<float> t = to_tensor(v);
  REQUIRE(t.shape() == Shape({2, 5, 4, 3}));
  CHECK(t.at4(1, 4, 3, 2) == v.at(4, 3, 2, 1));
  const Volume r = to_volume(t, v.kind);
  CHECK(r.data == v.data);
  CHECK(r.w == v.w);

  const Tensor<float> bad = Tensor<float>::zeros({2, 3});
  CHECK_THROWS_AS(to_volume(bad, VolumeKind::image), ShapeError);
}

TEST_CASE("phantom generator") {
  SUBCASE("same seed is bit-identical") {
    PhantomSpec spec;
    spec.seed = 1234;
    const auto [img1, mask1] = generate_phantom(spec);
    const auto [img2, mask2] = generate_phantom(spec);
    CHECK(img1.data == img2.data);
    CHECK(mask1.data == mask2.data);
    CHECK(img1.kind == VolumeKind::image);
    CHECK(mask1.kind == VolumeKind::binary_mask);
    CHECK(img1.w == spec.w);
    CHECK(mask1.d == spec.d);
  }

  SUBCASE("mask fraction and lesion contrast over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      PhantomSpec spec;
      spec.seed = seed;
      const auto [img, mask] = generate_phantom(spec);
      double inside = 0, outside = 0;
      std::int64_t n_in = 0, n_out = 0;
      for (std::int64_t i = 0; i < mask.size(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        if (mask.data[idx] != 0.0f) {
          inside += img.data[idx];
          ++n_in;
        } else {
          outside += img.data[idx];
          ++n_out;
        }
      }
      const double frac = static_cast<double>(n_in) / static_cast<double>(mask.size());
      CAPTURE(seed);
      CHECK(frac >= 0.01);
      CHECK(frac <= 0.15);
      CHECK(inside / n_in - outside / n_out > spec.noise_std);
    }
  }

  SUBCASE("infeasible radius rejected") {
    PhantomSpec spec;
    spec.radius_min = 24.0;
    spec.radius_max = 24.0;
    CHECK_THROWS_AS(generate_phantom(spec), ValidationError);
  }

  SUBCASE("different seeds differ") {
    PhantomSpec a, b;
    a.seed = 1;
    b.seed = 2;
    CHECK(generate_phantom(a).first.data != generate_phantom(b).first.data);
  }
}
