#include "pfseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "pfseg/adam.hpp"

namespace pfseg {

NetworkConfig TrainConfig::effective_net() const {
  NetworkConfig n = net;
  n.use_hgm = use_hgm;
  n.encoder_block = use_msres ? BlockKind::msres : BlockKind::res;
  return n;
}

void TrainConfig::validate() const {
  if (batch_size != 1) throw ValidationError("batch size is fixed at 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (!(lr_init > 0.0)) throw ValidationError("lr_init must be positive");
  if (!(lr_divisor > 1.0)) throw ValidationError("lr_divisor must exceed 1");
  if (!(lr_floor > 0.0) || lr_floor >= lr_init)
    throw ValidationError("lr floor must sit in (0, lr_init)");
  if (plateau_patience < 1) throw ValidationError("plateau patience must be >= 1");
  effective_net().validate();
}

namespace {

PatchSpec pick_patch(const Volume& hr, CropStrategy strategy, Rng& rng) {
  const std::int64_t pw = hr.w / 4, ph = hr.h / 4, pd = hr.d / 4;
  switch (strategy) {
    case CropStrategy::central:
      return central_crop(hr, pw, ph, pd);
    case CropStrategy::random:
      return random_crop(hr, pw, ph, pd, rng);
    case CropStrategy::selective: {
      CropSearchConfig sc;
      sc.patch_w = pw;
      sc.patch_h = ph;
      sc.patch_d = pd;
      return selective_crop(hr, sc).first;
    }
  }
  throw ValidationError("unknown crop strategy");
}

}  // namespace

TrainingSample make_sample(const Volume& image, const Volume& mask, CropStrategy strategy,
                           Rng& rng) {
  if (image.kind != VolumeKind::image) throw ValidationError("make_sample expects an image");
  if (image.w % 4 || image.h % 4 || image.d % 4)
    throw ValidationError("make_sample: image dims must be divisible by 4");
  if (mask.w != image.w || mask.h != image.h || mask.d != image.d || mask.c != image.c)
    throw ValidationError("make_sample: mask dims differ from image");
  if (mask.kind != VolumeKind::binary_mask)
    throw ValidationError("make_sample: mask must be binary");
  mask.validate();

  TrainingSample s;
  s.x_hr = normalize(image);
  s.x_lr = downsample(s.x_hr, 2);
  s.x_patch = crop(s.x_hr, pick_patch(s.x_hr, strategy, rng));
  s.gt_mask = mask;
  return s;
}

Volume flip_volume(const Volume& v, int axis) {
  if (axis < 0 || axis > 2) throw ValidationError("flip axis must be 0..2");
  Volume out = v;
  for (std::int64_t c = 0; c < v.c; ++c)
    for (std::int64_t z = 0; z < v.d; ++z)
      for (std::int64_t y = 0; y < v.h; ++y)
        for (std::int64_t x = 0; x < v.w; ++x) {
          const std::int64_t sx = axis == 0 ? v.w - 1 - x : x;
          const std::int64_t sy = axis == 1 ? v.h - 1 - y : y;
          const std::int64_t sz = axis == 2 ? v.d - 1 - z : z;
          out.at(x, y, z, c) = v.at(sx, sy, sz, c);
        }
  return out;
}

Volume rotate90_xy(const Volume& v, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return v;
  if (v.w != v.h && k % 2 == 1)
    throw ValidationError("in-plane quarter rotation needs square x/y extents");
  Volume out = v;
  for (std::int64_t c = 0; c < v.c; ++c)
    for (std::int64_t z = 0; z < v.d; ++z)
      for (std::int64_t y = 0; y < v.h; ++y)
        for (std::int64_t x = 0; x < v.w; ++x) {
          std::int64_t sx = x, sy = y;
          // dst(x,y) = src applied k quarter turns back
          for (int t = 0; t < k; ++t) {
            const std::int64_t nx = sy;
            const std::int64_t ny = v.w - 1 - sx;
            sx = nx;
            sy = ny;
          }
          out.at(x, y, z, c) = v.at(sx, sy, z, c);
        }
  return out;
}

Volume shift_volume(const Volume& v, int sx, int sy, int sz) {
  Volume out = v;
  for (std::int64_t c = 0; c < v.c; ++c)
    for (std::int64_t z = 0; z < v.d; ++z)
      for (std::int64_t y = 0; y < v.h; ++y)
        for (std::int64_t x = 0; x < v.w; ++x) {
          const std::int64_t ox = x - sx, oy = y - sy, oz = z - sz;
          const bool in = ox >= 0 && ox < v.w && oy >= 0 && oy < v.h && oz >= 0 && oz < v.d;
          out.at(x, y, z, c) = in ? v.at(ox, oy, oz, c) : 0.0f;
        }
  return out;
}

TrainingSample augment(const TrainingSample& s, const TrainConfig& cfg, Rng& rng) {
  Volume hr = s.x_hr;
  Volume mask = s.gt_mask;
  if (cfg.augment_flip)
    for (int axis = 0; axis < 3; ++axis)
      if (rng.bernoulli(0.5)) {
        hr = flip_volume(hr, axis);
        mask = flip_volume(mask, axis);
      }
  if (cfg.augment_rotate) {
    const bool square = hr.w == hr.h;
    const int k = square ? static_cast<int>(rng.uniform_int(0, 3))
                         : 2 * static_cast<int>(rng.uniform_int(0, 1));
    if (k != 0) {
      hr = rotate90_xy(hr, k);
      mask = rotate90_xy(mask, k);
    }
  }
  if (cfg.augment_shift) {
    const int sx = static_cast<int>(rng.uniform_int(-(hr.w / 10), hr.w / 10));
    const int sy = static_cast<int>(rng.uniform_int(-(hr.h / 10), hr.h / 10));
    const int sz = static_cast<int>(rng.uniform_int(-(hr.d / 10), hr.d / 10));
    if (sx || sy || sz) {
      hr = shift_volume(hr, sx, sy, sz);
      mask = shift_volume(mask, sx, sy, sz);
    }
  }

  TrainingSample out;
  out.x_hr = std::move(hr);
  out.gt_mask = std::move(mask);
  out.x_lr = downsample(out.x_hr, 2);
  out.x_patch = crop(out.x_hr, pick_patch(out.x_hr, cfg.crop, rng));
  return out;
}

PlateauScheduler::PlateauScheduler(double lr0, int patience_, double divisor_, double floor_)
    : lr(lr0),
      divisor(divisor_),
      floor(floor_),
      patience(patience_),
      best(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::observe(double epoch_loss) {
  if (epoch_loss < best) {
    best = epoch_loss;
    stalled = 0;
    return false;
  }
  if (++stalled < patience) return false;
  lr /= divisor;
  stalled = 0;
  return true;
}

std::vector<TrainPair> load_dataset(const std::string& manifest_path) {
  const auto entries = load_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  std::vector<TrainPair> out;
  out.reserve(entries.size());
  for (const auto& [img, msk] : entries)
    out.push_back({load_volume(resolve(img)), load_volume(resolve(msk))});
  return out;
}

namespace {

ModelParams<float> clone_params(const ModelParams<float>& p) {
  ModelParams<float> out;
  for (const auto& name : p.names) {
    const Tensor<float>& t = p.at(name);
    out.add(name, Tensor<float>::from_data(t.shape(), t.data(), true));
  }
  return out;
}

std::string format_row(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.3f",
                s.epoch, s.loss, s.l_ust, s.l_srt, s.l_tel, s.l_ssl, s.lr, s.seconds);
  return buf;
}

}  // namespace

TrainResult train(const std::vector<TrainPair>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  const NetworkConfig net = cfg.effective_net();
  const auto hr = net.hr_dims();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].image.w != hr[0] || data[i].image.h != hr[1] || data[i].image.d != hr[2])
      throw ValidationError("case " + std::to_string(i) + ": dims do not match the network");

  ModelParams<float> params = make_params<float>(net, cfg.seed);
  std::vector<Tensor<float>> plist = params.all();
  AdamState<float> adam = AdamState<float>::init(plist);
  PlateauScheduler sched(cfg.lr_init, cfg.plateau_patience, cfg.lr_divisor, cfg.lr_floor);
  const LossWeights<float> weights;

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  const Tensor<float> zero = Tensor<float>::zeros({1});
  const bool any_augment = cfg.augment_flip || cfg.augment_rotate || cfg.augment_shift;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_used = sched.lr;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 11, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    double sum_total = 0, sum_ust = 0, sum_srt = 0, sum_tel = 0, sum_ssl = 0;
    for (const std::size_t idx : order) {
      Rng srng(derive_seed(cfg.seed, 7, idx, static_cast<std::uint64_t>(epoch)));
      TrainingSample sample = make_sample(data[idx].image, data[idx].mask, cfg.crop, srng);
      if (any_augment) sample = augment(sample, cfg, srng);

      const Tensor<float> tx_lr = to_tensor(sample.x_lr);
      const Tensor<float> tx_patch = to_tensor(sample.x_patch);
      const Tensor<float> tx_hr = to_tensor(sample.x_hr);
      const Tensor<float> tgt = to_tensor(sample.gt_mask);

      for (Tensor<float>& t : plist) t.zero_grad();
      auto [o_ust, o_srt] = forward_train(tx_lr, tx_patch, params, net);

      const Tensor<float> l_ust = ust_loss(o_ust, tgt);
      auto term = [&](bool on, auto&& fn) {
        if (on) return fn();
        NoGradGuard off;  // value for the log only
        return fn();
      };
      const Tensor<float> l_srt = term(cfg.use_srt, [&] { return srt_loss(o_srt, tx_hr); });
      const FusionPair<float> pair = fuse(o_srt, o_ust, tx_hr, tgt);
      const Tensor<float> l_tel = term(cfg.use_tel, [&] {
        return cfg.tel_target_only ? tel_loss_target_only(pair, tgt) : tel_loss(pair);
      });
      const Tensor<float> l_ssl = term(cfg.use_ssl, [&] { return ssl_loss(pair); });

      Tensor<float> total;
      try {
        total = total_loss(l_ust, cfg.use_srt ? l_srt : zero, cfg.use_tel ? l_tel : zero,
                           cfg.use_ssl ? l_ssl : zero, weights);
      } catch (const RuntimeFailure& e) {
        char ctx[256];
        std::snprintf(ctx, sizeof(ctx),
                      "epoch %d sample %zu: %s (ust=%g srt=%g tel=%g ssl=%g)", epoch, idx,
                      e.what(), static_cast<double>(l_ust.value()),
                      static_cast<double>(l_srt.value()), static_cast<double>(l_tel.value()),
                      static_cast<double>(l_ssl.value()));
        throw RuntimeFailure(ctx);
      }
      backward(total);
      adam_step(plist, adam, static_cast<float>(lr_used));

      sum_total += static_cast<double>(total.value());
      sum_ust += static_cast<double>(l_ust.value());
      sum_srt += static_cast<double>(l_srt.value());
      sum_tel += static_cast<double>(l_tel.value());
      sum_ssl += static_cast<double>(l_ssl.value());
    }

    const double n = static_cast<double>(data.size());
    EpochStats st;
    st.epoch = epoch;
    st.loss = sum_total / n;
    st.l_ust = sum_ust / n;
    st.l_srt = sum_srt / n;
    st.l_tel = sum_tel / n;
    st.l_ssl = sum_ssl / n;
    st.lr = lr_used;
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(st);

    if (st.loss < result.best_loss) {
      result.best_loss = st.loss;
      result.best_epoch = epoch;
      result.best = clone_params(params);
    }
    sched.observe(st.loss);
    if (sched.should_stop()) break;
  }
  return result;
}

std::string metrics_log(const std::vector<EpochStats>& history) {
  std::string out = "epoch\tloss\tl_ust\tl_srt\tl_tel\tl_ssl\tlr\tseconds\n";
  for (const EpochStats& s : history) {
    out += format_row(s);
    out += '\n';
  }
  return out;
}

void write_metrics_log(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(IoError::Kind::OpenFailed, "cannot open metrics log for writing: " + path);
  os << metrics_log(history);
}

}  // namespace pfseg
