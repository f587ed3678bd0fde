#include "pfseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace pfseg {

std::int64_t NetworkConfig::hgm_width() const {
  if (guidance_stages() == 0) return 1;  // guidance patch feeds the concat raw
  if (hgm_channels > 0) return hgm_channels;
  return std::max<std::int64_t>(1, stage_channels.back() / 4);
}

std::array<std::int64_t, 3> NetworkConfig::bottleneck_dims() const {
  const std::int64_t f = std::int64_t(1) << poolings();
  return {lr_dims[0] / f, lr_dims[1] / f, lr_dims[2] / f};
}

std::array<std::int64_t, 3> NetworkConfig::hr_dims() const {
  return {lr_dims[0] * 2, lr_dims[1] * 2, lr_dims[2] * 2};
}

void NetworkConfig::validate() const {
  if (stages() < 2) throw ValidationError("network needs at least 2 stages");
  for (std::int64_t c : stage_channels)
    if (c < 1) throw ValidationError("stage channels must be positive");
  if (msres_kernels.empty()) throw ValidationError("msres kernel set is empty");
  for (int k : msres_kernels)
    if (k < 1 || k % 2 == 0)
      throw ValidationError("msres kernels must be odd and positive, got " +
                            std::to_string(k));
  if (!(leaky_slope >= 0) || !(norm_eps > 0))
    throw ValidationError("activation/norm hyper-parameters invalid");
  const std::int64_t p = poolings();
  const std::int64_t fe = std::int64_t(1) << p;       // encoder reduction
  const std::int64_t fg = std::int64_t(1) << (p - 1); // guidance reduction
  for (int a = 0; a < 3; ++a) {
    if (lr_dims[a] % fe != 0)
      throw ValidationError("input dims " +
                            dims_str({lr_dims[0], lr_dims[1], lr_dims[2]}) +
                            " not divisible by 2^" + std::to_string(p));
    if (patch_dims[a] % fg != 0 || patch_dims[a] / fg != lr_dims[a] / fe)
      throw ValidationError(
          "guidance dims " + dims_str({patch_dims[0], patch_dims[1], patch_dims[2]}) +
          " misaligned with the bottleneck: need patch/2^" + std::to_string(p - 1) +
          " == input/2^" + std::to_string(p));
  }
}

NetworkConfig desk_config() {
  NetworkConfig cfg;
  cfg.stage_channels = {8, 8, 16, 32};
  cfg.lr_dims = {24, 24, 16};
  cfg.patch_dims = {12, 12, 8};
  return cfg;
}

NetworkConfig paper_config() { return {}; }

template <typename T>
void ModelParams<T>::add(const std::string& name, Tensor<T> t) {
  if (!by_name.emplace(name, t).second)
    throw ValidationError("duplicate parameter name " + name);
  names.push_back(name);
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ValidationError("unknown parameter " + name);
  return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ValidationError("unknown parameter " + name);
  return it->second;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::all() const {
  std::vector<Tensor<T>> out;
  out.reserve(names.size());
  for (const std::string& n : names) out.push_back(by_name.at(n));
  return out;
}

template <typename T>
std::int64_t ModelParams<T>::count(const std::string& prefix) const {
  std::int64_t total = 0;
  for (const std::string& n : names)
    if (n.rfind(prefix, 0) == 0) total += by_name.at(n).size();
  return total;
}

namespace {

struct BlockPlan {
  std::string prefix;
  BlockKind kind;
  std::int64_t cin, cout;
  int stride;
};

struct NetPlan {
  std::vector<BlockPlan> enc, hgm, dec_ust, dec_srt;
  std::int64_t head_cin;
};

NetPlan make_plan(const NetworkConfig& cfg) {
  cfg.validate();
  NetPlan pl;
  const auto& ch = cfg.stage_channels;
  const std::int64_t S = cfg.stages();
  std::int64_t cin = 1;
  for (std::int64_t i = 0; i < S; ++i) {
    pl.enc.push_back({"enc" + std::to_string(i) + ".", cfg.encoder_block, cin, ch[size_t(i)], 1});
    cin = ch[static_cast<std::size_t>(i)];
  }
  const std::int64_t hw = cfg.use_hgm ? cfg.hgm_width() : 0;
  cin = 1;
  if (cfg.use_hgm)
    for (std::int64_t i = 0; i < cfg.guidance_stages(); ++i) {
      pl.hgm.push_back({"hgm" + std::to_string(i) + ".", cfg.hgm_block, cin, hw, 2});
      cin = hw;
    }
  for (const char* task : {"ust", "srt"}) {
    std::int64_t cur = ch.back() + hw;
    auto& dst = std::string(task) == "ust" ? pl.dec_ust : pl.dec_srt;
    for (std::int64_t j = S - 2; j >= 0; --j) {
      dst.push_back({"dec_" + std::string(task) + std::to_string(j) + ".", BlockKind::res,
                     cur + ch[static_cast<std::size_t>(j)], ch[static_cast<std::size_t>(j)],
                     1});
      cur = ch[static_cast<std::size_t>(j)];
    }
  }
  pl.head_cin = ch.front();
  return pl;
}

template <typename T>
struct ParamBuilder {
  ModelParams<T>& p;
  Rng rng;

  // gain 2 for kernels feeding a rectifier; gain 1 for linear-output kernels
  // (shortcut projections, heads). He gain on a projection that feeds a bare
  // residual add doubles the stream variance at every channel change, which
  // compounds across stages and saturates both heads at init.
  void kernel(const std::string& name, std::int64_t co, std::int64_t ci, std::int64_t k,
              double gain = 2.0) {
    const double std_dev = std::sqrt(gain / (static_cast<double>(ci) * k * k * k));
    std::vector<T> data(static_cast<std::size_t>(co * ci * k * k * k));
    for (T& v : data) v = static_cast<T>(rng.gauss() * std_dev);
    p.add(name, Tensor<T>::from_data({co, ci, k, k, k}, std::move(data), true));
  }
  void vec(const std::string& name, std::int64_t n, T value) {
    p.add(name, Tensor<T>::full({n}, value, true));
  }

  void block(const BlockPlan& bp, const NetworkConfig& cfg) {
    if (bp.kind == BlockKind::res) {
      kernel(bp.prefix + "c1.w", bp.cout, bp.cin, 3);
      vec(bp.prefix + "c1.b", bp.cout, T(0));
      vec(bp.prefix + "n1.g", bp.cout, T(1));
      vec(bp.prefix + "n1.b", bp.cout, T(0));
      kernel(bp.prefix + "c2.w", bp.cout, bp.cout, 3);
      vec(bp.prefix + "c2.b", bp.cout, T(0));
      vec(bp.prefix + "n2.g", bp.cout, T(1));
      vec(bp.prefix + "n2.b", bp.cout, T(0));
    } else {
      for (int k : cfg.msres_kernels) {
        const std::string b = bp.prefix + "b" + std::to_string(k) + ".";
        kernel(b + "w", bp.cout, bp.cin, k);
        vec(b + "b", bp.cout, T(0));
        vec(b + "g", bp.cout, T(1));
        vec(b + "n", bp.cout, T(0));
      }
      kernel(bp.prefix + "fuse.w", bp.cout,
             bp.cout * static_cast<std::int64_t>(cfg.msres_kernels.size()), 1);
      vec(bp.prefix + "fuse.b", bp.cout, T(0));
      vec(bp.prefix + "nf.g", bp.cout, T(1));
      vec(bp.prefix + "nf.b", bp.cout, T(0));
    }
    if (bp.cin != bp.cout || bp.stride != 1) {
      kernel(bp.prefix + "sc.w", bp.cout, bp.cin, 1);
      vec(bp.prefix + "sc.b", bp.cout, T(0));
    }
  }
};

template <typename T>
Tensor<T> block_forward(const Tensor<T>& x, const ModelParams<T>& p, const BlockPlan& bp,
                        const NetworkConfig& cfg) {
  try {
    if (bp.kind == BlockKind::res)
      return res_block(x, p, bp.prefix, cfg, bp.stride);
    return msres_block(x, p, bp.prefix, cfg, bp.stride);
  } catch (const ShapeError& e) {
    throw ShapeError(bp.prefix + std::string(e.what()));
  }
}

}  // namespace

template <typename T>
ModelParams<T> make_params(const NetworkConfig& cfg, std::uint64_t seed) {
  const NetPlan plan = make_plan(cfg);
  ModelParams<T> p;
  ParamBuilder<T> b{p, Rng(derive_seed(seed, 17))};
  for (const BlockPlan& bp : plan.enc) b.block(bp, cfg);
  for (const BlockPlan& bp : plan.hgm) b.block(bp, cfg);
  for (const BlockPlan& bp : plan.dec_ust) b.block(bp, cfg);
  for (const BlockPlan& bp : plan.dec_srt) b.block(bp, cfg);
  for (const char* head : {"head_ust.", "head_srt."}) {
    b.kernel(std::string(head) + "w", 1, plan.head_cin, 1);
    b.vec(std::string(head) + "b", 1, T(0));
  }
  return p;
}

template <typename T>
Tensor<T> res_block(const Tensor<T>& x, const ModelParams<T>& p, const std::string& pre,
                    const NetworkConfig& cfg, int stride) {
  const T slope = static_cast<T>(cfg.leaky_slope);
  const T eps = static_cast<T>(cfg.norm_eps);
  Tensor<T> y = leaky_relu(
      instance_norm(conv3d(x, p.at(pre + "c1.w"), p.at(pre + "c1.b"), stride, 1),
                    p.at(pre + "n1.g"), p.at(pre + "n1.b"), eps),
      slope);
  y = leaky_relu(instance_norm(conv3d(y, p.at(pre + "c2.w"), p.at(pre + "c2.b"), 1, 1),
                               p.at(pre + "n2.g"), p.at(pre + "n2.b"), eps),
                 slope);
  const Tensor<T> sc = p.has(pre + "sc.w")
                           ? conv3d(x, p.at(pre + "sc.w"), p.at(pre + "sc.b"), stride, 0)
                           : x;
  return add(y, sc);
}

template <typename T>
Tensor<T> msres_block(const Tensor<T>& x, const ModelParams<T>& p, const std::string& pre,
                      const NetworkConfig& cfg, int stride) {
  const T slope = static_cast<T>(cfg.leaky_slope);
  const T eps = static_cast<T>(cfg.norm_eps);
  Tensor<T> cat;
  for (int k : cfg.msres_kernels) {
    const std::string b = pre + "b" + std::to_string(k) + ".";
    Tensor<T> branch = leaky_relu(
        instance_norm(conv3d(x, p.at(b + "w"), p.at(b + "b"), stride, (k - 1) / 2),
                      p.at(b + "g"), p.at(b + "n"), eps),
        slope);
    cat = cat.valid() ? concat_channels(cat, branch) : branch;
  }
  Tensor<T> fused = leaky_relu(
      instance_norm(conv3d(cat, p.at(pre + "fuse.w"), p.at(pre + "fuse.b"), 1, 0),
                    p.at(pre + "nf.g"), p.at(pre + "nf.b"), eps),
      slope);
  const Tensor<T> sc = p.has(pre + "sc.w")
                           ? conv3d(x, p.at(pre + "sc.w"), p.at(pre + "sc.b"), stride, 0)
                           : x;
  return add(fused, sc);
}

template <typename T>
EncoderOut<T> encoder_forward(const Tensor<T>& x_lr, const ModelParams<T>& p,
                              const NetworkConfig& cfg) {
  const NetPlan plan = make_plan(cfg);
  EncoderOut<T> out;
  Tensor<T> cur = x_lr;
  for (std::int64_t i = 0; i < cfg.stages(); ++i) {
    cur = block_forward(cur, p, plan.enc[static_cast<std::size_t>(i)], cfg);
    if (i < cfg.stages() - 1) {
      out.skips.push_back(cur);
      cur = max_pool2(cur);
    }
  }
  out.bottleneck = cur;
  return out;
}

template <typename T>
Tensor<T> hgm_forward(const Tensor<T>& x_patch, const ModelParams<T>& p,
                      const NetworkConfig& cfg) {
  const NetPlan plan = make_plan(cfg);
  Tensor<T> cur = x_patch;
  for (const BlockPlan& bp : plan.hgm) cur = block_forward(cur, p, bp, cfg);
  return cur;
}

namespace {

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& bottleneck, const Tensor<T>& f_hgm,
                          const std::vector<Tensor<T>>& skips, const ModelParams<T>& p,
                          const std::vector<BlockPlan>& blocks, const std::string& head,
                          bool squash, const NetworkConfig& cfg, bool upsample_head = true) {
  Tensor<T> cur;
  if (cfg.use_hgm) {
    try {
      cur = concat_channels(bottleneck, f_hgm);
    } catch (const ShapeError& e) {
      throw ShapeError("bottleneck concat: " + std::string(e.what()));
    }
  } else {
    cur = bottleneck;
  }
  const std::int64_t S = cfg.stages();
  for (std::int64_t j = S - 2; j >= 0; --j) {
    const BlockPlan& bp = blocks[static_cast<std::size_t>(S - 2 - j)];
    cur = upsample_trilinear(cur, 2);
    try {
      cur = concat_channels(cur, skips[static_cast<std::size_t>(j)]);
    } catch (const ShapeError& e) {
      throw ShapeError(bp.prefix + "skip concat: " + std::string(e.what()));
    }
    cur = block_forward(cur, p, bp, cfg);
  }
  Tensor<T> out = conv3d(cur, p.at(head + "w"), p.at(head + "b"), 1, 0);
  if (upsample_head) out = upsample_trilinear(out, 2);
  return squash ? sigmoid(out) : out;
}

template <typename T>
void check_input(const Tensor<T>& t, const std::array<std::int64_t, 3>& dims,
                 const char* what) {
  const Shape want = {1, dims[0], dims[1], dims[2]};
  if (t.shape() != want)
    throw ShapeError(std::string(what) + " expected " + dims_str(want) + ", got " +
                     dims_str(t.shape()));
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> forward_train(const Tensor<T>& x_lr,
                                              const Tensor<T>& x_patch,
                                              const ModelParams<T>& p,
                                              const NetworkConfig& cfg) {
  check_input(x_lr, cfg.lr_dims, "network input");
  check_input(x_patch, cfg.patch_dims, "guidance patch");
  const NetPlan plan = make_plan(cfg);
  const EncoderOut<T> enc = encoder_forward(x_lr, p, cfg);
  const Tensor<T> f_hgm = cfg.use_hgm ? hgm_forward(x_patch, p, cfg) : Tensor<T>();
  Tensor<T> o_ust = decoder_forward(enc.bottleneck, f_hgm, enc.skips, p, plan.dec_ust,
                                    "head_ust.", true, cfg);
  Tensor<T> o_srt = decoder_forward(enc.bottleneck, f_hgm, enc.skips, p, plan.dec_srt,
                                    "head_srt.", false, cfg);
  return {o_ust, o_srt};
}

Tensor<float> forward_infer_prob(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                                 const ModelParams<float>& p, const NetworkConfig& cfg) {
  NoGradGuard ng;
  check_input(x_lr, cfg.lr_dims, "network input");
  check_input(x_patch, cfg.patch_dims, "guidance patch");
  const NetPlan plan = make_plan(cfg);
  const EncoderOut<float> enc = encoder_forward(x_lr, p, cfg);
  const Tensor<float> f_hgm = cfg.use_hgm ? hgm_forward(x_patch, p, cfg) : Tensor<float>();
  return decoder_forward(enc.bottleneck, f_hgm, enc.skips, p, plan.dec_ust, "head_ust.",
                         true, cfg);
}

Tensor<float> forward_infer_prob_lr(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                                    const ModelParams<float>& p, const NetworkConfig& cfg) {
  NoGradGuard ng;
  check_input(x_lr, cfg.lr_dims, "network input");
  check_input(x_patch, cfg.patch_dims, "guidance patch");
  const NetPlan plan = make_plan(cfg);
  const EncoderOut<float> enc = encoder_forward(x_lr, p, cfg);
  const Tensor<float> f_hgm = cfg.use_hgm ? hgm_forward(x_patch, p, cfg) : Tensor<float>();
  return decoder_forward(enc.bottleneck, f_hgm, enc.skips, p, plan.dec_ust, "head_ust.",
                         true, cfg, /*upsample_head=*/false);
}

Volume forward_infer(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                     const ModelParams<float>& p, const NetworkConfig& cfg) {
  const Tensor<float> prob = forward_infer_prob(x_lr, x_patch, p, cfg);
  Volume mask = Volume::zeros(prob.extent(1), prob.extent(2), prob.extent(3),
                              VolumeKind::binary_mask);
  const std::vector<float>& pd = prob.data();
  for (std::size_t i = 0; i < pd.size(); ++i) mask.data[i] = pd[i] > 0.5f ? 1.0f : 0.0f;
  return mask;
}

ShapeReport simulate_shapes(const NetworkConfig& cfg) {
  cfg.validate();
  ShapeReport rep;
  auto half = [](std::array<std::int64_t, 3> d) {
    return std::array<std::int64_t, 3>{d[0] / 2, d[1] / 2, d[2] / 2};
  };
  auto twice = [](std::array<std::int64_t, 3> d) {
    return std::array<std::int64_t, 3>{d[0] * 2, d[1] * 2, d[2] * 2};
  };
  std::array<std::int64_t, 3> cur = cfg.lr_dims;
  for (std::int64_t i = 0; i < cfg.stages(); ++i) {
    rep.encoder.push_back(cur);  // blocks preserve dims
    if (i < cfg.stages() - 1) cur = half(cur);
  }
  rep.bottleneck = cur;
  std::array<std::int64_t, 3> g = cfg.patch_dims;
  for (std::int64_t i = 0; i < cfg.guidance_stages(); ++i) {
    g = half(g);
    rep.guidance.push_back(g);
  }
  for (std::int64_t j = cfg.stages() - 2; j >= 0; --j) {
    cur = twice(cur);
    rep.decoder.push_back(cur);
  }
  rep.output = twice(cur);
  return rep;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t take_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IoError(IoError::Kind::Truncated, path + ": truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ModelParams<float>& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::OpenFailed, "cannot write checkpoint " + path);
  out.write("PFW1", 4);
  put_u32(out, static_cast<std::uint32_t>(p.names.size()));
  for (const std::string& name : p.names) {
    const Tensor<float>& t = p.at(name);
    const std::uint16_t len = static_cast<std::uint16_t>(name.size());
    const unsigned char lb[2] = {static_cast<unsigned char>(len & 0xff),
                                 static_cast<unsigned char>(len >> 8)};
    out.write(reinterpret_cast<const char*>(lb), 2);
    out.write(name.data(), len);
    const unsigned char rank = static_cast<unsigned char>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (int a = 0; a < t.rank(); ++a)
      put_u32(out, static_cast<std::uint32_t>(t.extent(a)));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(float)));
  }
  if (!out) throw IoError(IoError::Kind::OpenFailed, "short write to " + path);
}

std::vector<std::pair<std::string, Tensor<float>>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "PFW1", 4) != 0)
    throw IoError(IoError::Kind::BadMagic, path + ": not a PFW1 checkpoint");
  const std::uint32_t count = take_u32(in, path);
  std::vector<std::pair<std::string, Tensor<float>>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char lb[2];
    in.read(reinterpret_cast<char*>(lb), 2);
    if (in.gcount() != 2) throw IoError(IoError::Kind::Truncated, path + ": truncated");
    const std::uint16_t len = static_cast<std::uint16_t>(lb[0] | (lb[1] << 8));
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw IoError(IoError::Kind::Truncated, path + ": truncated");
    unsigned char rank;
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (in.gcount() != 1) throw IoError(IoError::Kind::Truncated, path + ": truncated");
    if (rank < 1 || rank > 8)
      throw IoError(IoError::Kind::BadHeader, path + ": bad rank for " + name);
    Shape shape(rank);
    std::uint64_t total = 1;
    for (unsigned char a = 0; a < rank; ++a) {
      const std::uint32_t e = take_u32(in, path);
      if (e == 0) throw IoError(IoError::Kind::BadHeader, path + ": zero extent in " + name);
      shape[a] = e;
      total *= e;
      if (total > (1ull << 31) - 1)
        throw IoError(IoError::Kind::DimOverflow, path + ": oversized tensor " + name);
    }
    std::vector<float> data(static_cast<std::size_t>(total));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(total * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(total * sizeof(float)))
      throw IoError(IoError::Kind::Truncated, path + ": truncated payload in " + name);
    out.emplace_back(name, Tensor<float>::from_data(std::move(shape), std::move(data)));
  }
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw IoError(IoError::Kind::BadHeader, path + ": trailing bytes");
  return out;
}

void apply_checkpoint(ModelParams<float>& p,
                      const std::vector<std::pair<std::string, Tensor<float>>>& loaded) {
  std::set<std::string> seen;
  for (const auto& [name, t] : loaded) {
    if (!p.has(name)) throw ValidationError("checkpoint has unknown parameter " + name);
    Tensor<float>& dst = p.at(name);
    if (dst.shape() != t.shape())
      throw ValidationError("checkpoint shape mismatch for " + name + ": model " +
                            dims_str(dst.shape()) + " vs file " + dims_str(t.shape()));
    dst.data() = t.data();
    seen.insert(name);
  }
  for (const std::string& name : p.names)
    if (!seen.count(name)) throw ValidationError("checkpoint missing parameter " + name);
}

#define PFSEG_INSTANTIATE_NET(T)                                                          \
  template struct ModelParams<T>;                                                         \
  template ModelParams<T> make_params<T>(const NetworkConfig&, std::uint64_t);            \
  template Tensor<T> res_block<T>(const Tensor<T>&, const ModelParams<T>&,                \
                                  const std::string&, const NetworkConfig&, int);         \
  template Tensor<T> msres_block<T>(const Tensor<T>&, const ModelParams<T>&,              \
                                    const std::string&, const NetworkConfig&, int);       \
  template EncoderOut<T> encoder_forward<T>(const Tensor<T>&, const ModelParams<T>&,      \
                                            const NetworkConfig&);                        \
  template Tensor<T> hgm_forward<T>(const Tensor<T>&, const ModelParams<T>&,              \
                                    const NetworkConfig&);                                \
  template std::pair<Tensor<T>, Tensor<T>> forward_train<T>(                              \
      const Tensor<T>&, const Tensor<T>&, const ModelParams<T>&, const NetworkConfig&);

PFSEG_INSTANTIATE_NET(float)
PFSEG_INSTANTIATE_NET(double)

#undef PFSEG_INSTANTIATE_NET

}  // namespace pfseg
