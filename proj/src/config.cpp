#include "pfseg/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pfseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string fmt_real(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

bool KeyValues::has(const std::string& key) const { return find(key) != nullptr; }

const std::string* KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return &v;
  return nullptr;
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) +
                            ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.has(key))
      throw ValidationError("config: duplicate key '" + key + "'");
    kv.items.emplace_back(key, val);
  }
  return kv;
}

KeyValues load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Kind::OpenFailed, path + ": cannot open config");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

std::array<std::int64_t, 3> parse_dims(const std::string& s) {
  const auto parts = split(s, 'x');
  if (parts.size() != 3)
    throw ValidationError("dims '" + s + "': expected WxHxD");
  std::array<std::int64_t, 3> d{};
  for (int a = 0; a < 3; ++a) d[a] = parse_int("dims", parts[static_cast<std::size_t>(a)], 1);
  return d;
}

bool parse_onoff(const std::string& key, const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw ValidationError(key + "='" + s + "': expected on or off");
}

std::int64_t parse_int(const std::string& key, const std::string& s, std::int64_t lo) {
  std::size_t used = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(key + "='" + s + "': expected an integer");
  }
  if (used != s.size())
    throw ValidationError(key + "='" + s + "': expected an integer");
  if (v < lo)
    throw ValidationError(key + "='" + s + "': must be >= " + std::to_string(lo));
  return v;
}

double parse_real(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(key + "='" + s + "': expected a number");
  }
  if (used != s.size())
    throw ValidationError(key + "='" + s + "': expected a number");
  return v;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig cfg;
  if (const std::string* net = kv.find("net")) {
    if (*net == "desk")
      cfg.net = desk_config();
    else if (*net == "paper")
      cfg.net = paper_config();
    else
      throw ValidationError("net='" + *net + "': expected desk or paper");
  }
  for (const auto& [key, val] : kv.items) {
    if (key == "net") continue;  // preset applied above, before overrides
    if (key == "srt")
      cfg.use_srt = parse_onoff(key, val);
    else if (key == "tel")
      cfg.use_tel = parse_onoff(key, val);
    else if (key == "ssl")
      cfg.use_ssl = parse_onoff(key, val);
    else if (key == "hgm")
      cfg.use_hgm = parse_onoff(key, val);
    else if (key == "msres")
      cfg.use_msres = parse_onoff(key, val);
    else if (key == "tel_target_only")
      cfg.tel_target_only = parse_onoff(key, val);
    else if (key == "crop") {
      if (val == "random")
        cfg.crop = CropStrategy::random;
      else if (val == "central")
        cfg.crop = CropStrategy::central;
      else if (val == "selective")
        cfg.crop = CropStrategy::selective;
      else
        throw ValidationError("crop='" + val + "': expected random, central or selective");
    } else if (key == "max_epochs")
      cfg.max_epochs = static_cast<int>(parse_int(key, val, 1));
    else if (key == "lr")
      cfg.lr_init = parse_real(key, val);
    else if (key == "plateau")
      cfg.plateau_patience = static_cast<int>(parse_int(key, val, 1));
    else if (key == "divisor")
      cfg.lr_divisor = parse_real(key, val);
    else if (key == "floor")
      cfg.lr_floor = parse_real(key, val);
    else if (key == "seed")
      cfg.seed = static_cast<std::uint64_t>(parse_int(key, val, 0));
    else if (key == "augment_flip")
      cfg.augment_flip = parse_onoff(key, val);
    else if (key == "augment_rotate")
      cfg.augment_rotate = parse_onoff(key, val);
    else if (key == "augment_shift")
      cfg.augment_shift = parse_onoff(key, val);
    else if (key == "stages") {
      std::vector<std::int64_t> ch;
      for (const std::string& p : split(val, ','))
        ch.push_back(parse_int(key, trim(p), 1));
      cfg.net.stage_channels = ch;
    } else if (key == "lr_dims")
      cfg.net.lr_dims = parse_dims(val);
    else if (key == "patch_dims")
      cfg.net.patch_dims = parse_dims(val);
    else if (key == "hgm_channels")
      cfg.net.hgm_channels = parse_int(key, val, 0);
    else if (key == "msres_kernels") {
      std::vector<int> ks;
      for (const std::string& p : split(val, ','))
        ks.push_back(static_cast<int>(parse_int(key, trim(p), 1)));
      cfg.net.msres_kernels = ks;
    } else
      throw ValidationError("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string train_config_text(const TrainConfig& cfg) {
  const auto onoff = [](bool b) { return b ? "on" : "off"; };
  std::ostringstream os;
  os << "srt=" << onoff(cfg.use_srt) << "\n";
  os << "tel=" << onoff(cfg.use_tel) << "\n";
  os << "ssl=" << onoff(cfg.use_ssl) << "\n";
  os << "hgm=" << onoff(cfg.use_hgm) << "\n";
  os << "msres=" << onoff(cfg.use_msres) << "\n";
  os << "tel_target_only=" << onoff(cfg.tel_target_only) << "\n";
  os << "crop="
     << (cfg.crop == CropStrategy::random
             ? "random"
             : cfg.crop == CropStrategy::central ? "central" : "selective")
     << "\n";
  os << "max_epochs=" << cfg.max_epochs << "\n";
  os << "lr=" << fmt_real(cfg.lr_init) << "\n";
  os << "plateau=" << cfg.plateau_patience << "\n";
  os << "divisor=" << fmt_real(cfg.lr_divisor) << "\n";
  os << "floor=" << fmt_real(cfg.lr_floor) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "augment_flip=" << onoff(cfg.augment_flip) << "\n";
  os << "augment_rotate=" << onoff(cfg.augment_rotate) << "\n";
  os << "augment_shift=" << onoff(cfg.augment_shift) << "\n";
  os << "stages=";
  for (std::size_t i = 0; i < cfg.net.stage_channels.size(); ++i)
    os << (i ? "," : "") << cfg.net.stage_channels[i];
  os << "\n";
  os << "lr_dims=" << cfg.net.lr_dims[0] << "x" << cfg.net.lr_dims[1] << "x"
     << cfg.net.lr_dims[2] << "\n";
  os << "patch_dims=" << cfg.net.patch_dims[0] << "x" << cfg.net.patch_dims[1] << "x"
     << cfg.net.patch_dims[2] << "\n";
  os << "hgm_channels=" << cfg.net.hgm_channels << "\n";
  os << "msres_kernels=";
  for (std::size_t i = 0; i < cfg.net.msres_kernels.size(); ++i)
    os << (i ? "," : "") << cfg.net.msres_kernels[i];
  os << "\n";
  return os.str();
}

PhantomSpec phantom_spec_for(const std::array<std::int64_t, 3>& dims,
                             std::uint64_t case_seed) {
  PhantomSpec spec;
  spec.seed = case_seed;
  spec.w = dims[0];
  spec.h = dims[1];
  spec.d = dims[2];
  const double m = static_cast<double>(std::min({dims[0], dims[1], dims[2]}));
  spec.radius_min = std::max(2.0, m / 8.0);
  spec.radius_max = std::max(spec.radius_min + 1.0, m / 4.0);
  return spec;
}

}  // namespace pfseg
