#include <CLI11.hpp>

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pfseg/config.hpp"
#include "pfseg/crop_search.hpp"
#include "pfseg/infer.hpp"
#include "pfseg/network.hpp"
#include "pfseg/trainer.hpp"
#include "pfseg/volume.hpp"

namespace fs = std::filesystem;
using namespace pfseg;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError(IoError::Kind::OpenFailed, path.string() + ": cannot write");
  out << text;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError(dir + ": cannot create output directory");
}

TrainConfig config_or_default(const std::string& path) {
  return train_config_from(path.empty() ? KeyValues{} : load_config(path));
}

std::string zero_pad(std::uint64_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

// ---- gen-data -------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::int64_t count = 0;
  std::string dims = "48x48x32";
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenArgs& a) {
  const auto dims = parse_dims(a.dims);
  for (int ax = 0; ax < 3; ++ax)
    if (dims[static_cast<std::size_t>(ax)] % 4 != 0)
      throw ValidationError("dims must be divisible by 4");
  if (a.count < 1) throw ValidationError("count must be >= 1");
  make_dir(a.out);
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::int64_t i = 0; i < a.count; ++i) {
    const PhantomSpec spec =
        phantom_spec_for(dims, derive_seed(a.seed, 13, static_cast<std::uint64_t>(i)));
    const auto [image, mask] = generate_phantom(spec);
    const std::string img = "img_" + zero_pad(static_cast<std::uint64_t>(i), 3) + ".pfv";
    const std::string msk = "msk_" + zero_pad(static_cast<std::uint64_t>(i), 3) + ".pfv";
    save_volume(image, (fs::path(a.out) / img).string());
    save_volume(mask, (fs::path(a.out) / msk).string());
    entries.emplace_back(img, msk);
  }
  save_manifest(entries, (fs::path(a.out) / "manifest.tsv").string());
  std::ostringstream snap;
  snap << "# command=gen-data\n"
       << "seed=" << a.seed << "\ncount=" << a.count << "\ndims=" << a.dims << "\n";
  write_text(fs::path(a.out) / "resolved_config.txt", snap.str());
  std::cout << "wrote " << a.count << " cases to " << a.out << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out, config;
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = config_or_default(a.config);
  const auto data = load_dataset(a.manifest);
  make_dir(a.out);
  const TrainResult result = train(data, cfg);
  save_checkpoint(result.best, (fs::path(a.out) / "best.pfw").string());
  write_metrics_log(result.history, (fs::path(a.out) / "metrics.tsv").string());
  write_text(fs::path(a.out) / "resolved_config.txt",
             "# command=train\n# manifest=" + a.manifest + "\n" + train_config_text(cfg));
  const EpochStats& last = result.history.back();
  std::cout << "trained " << result.history.size() << " epochs; best epoch "
            << result.best_epoch << " loss " << result.best_loss << "; final loss "
            << last.loss << "\n"
            << "checkpoint: " << (fs::path(a.out) / "best.pfw").string() << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, manifest, config, out;
  std::string mode = "patchfree";
  std::string stride = "0x0x0";
};

InferResult eval_dispatch(const std::string& mode, const Volume& image,
                          const ModelParams<float>& params, const NetworkConfig& net,
                          const std::array<std::int64_t, 3>& stride) {
  if (mode == "patchfree") return patch_free_infer(image, params, net);
  if (mode == "lrbaseline") return lr_baseline_infer(image, params, net);
  if (mode == "sliding") {
    std::array<std::int64_t, 3> s = stride;
    for (int ax = 0; ax < 3; ++ax)
      if (s[static_cast<std::size_t>(ax)] == 0) s[static_cast<std::size_t>(ax)] = net.lr_dims[static_cast<std::size_t>(ax)];
    const auto plan = make_sliding_plan({image.w, image.h, image.d}, net.lr_dims, s);
    return sliding_window_infer(image, plan, params, net);
  }
  throw ValidationError("mode='" + mode + "': expected patchfree, sliding or lrbaseline");
}

int cmd_eval(const EvalArgs& a) {
  const NetworkConfig net = config_or_default(a.config).effective_net();
  ModelParams<float> params = make_params<float>(net, 0);
  try {
    apply_checkpoint(params, load_checkpoint(a.checkpoint));
  } catch (const IoError& e) {
    throw RuntimeFailure(std::string("eval: ") + e.what());
  }

  std::array<std::int64_t, 3> stride{0, 0, 0};
  if (a.stride != "0x0x0") stride = parse_dims(a.stride);

  const auto entries = load_manifest(a.manifest);
  const auto data = load_dataset(a.manifest);

  std::ostringstream report;
  report << "# case_id dsc jaccard hd95 seconds passes\n";
  double dsc = 0, jac = 0, hd = 0;
  std::int64_t hd_n = 0, excluded = 0, passes = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const InferResult r = eval_dispatch(a.mode, data[i].image, params, net, stride);
    MetricsReport m = evaluate_case(r.mask, data[i].mask);
    m.seconds = r.seconds;
    m.forward_passes = r.passes;
    passes = r.passes;
    dsc += m.dsc;
    jac += m.jaccard;
    if (m.hd95_defined) {
      hd += m.hd95;
      ++hd_n;
    } else {
      ++excluded;
    }
    report << case_line(fs::path(entries[i].first).stem().string(), m) << "\n";
  }
  const double n = static_cast<double>(data.size());
  char mean[256];
  std::snprintf(mean, sizeof mean,
                "# mean dsc=%.6g jaccard=%.6g hd95=%.6g hd95_excluded=%lld passes=%lld\n",
                dsc / n, jac / n, hd_n ? hd / static_cast<double>(hd_n) : 0.0,
                static_cast<long long>(excluded), static_cast<long long>(passes));
  report << mean;
  std::cout << report.str();
  if (!a.out.empty()) {
    make_dir(a.out);
    write_text(fs::path(a.out) / "report.txt", report.str());
    write_text(fs::path(a.out) / "resolved_config.txt",
               "# command=eval\n# checkpoint=" + a.checkpoint + "\n# manifest=" +
                   a.manifest + "\n# mode=" + a.mode + "\n" +
                   train_config_text(config_or_default(a.config)));
  }
  return 0;
}

// ---- crop-search ------------------------------------------------------------

struct CropArgs {
  std::string volume, manifest, patch, steps, trace, out;
  bool sweep = false;
};

const char* exit_name(CropExit e) {
  switch (e) {
    case CropExit::boundary: return "boundary";
    case CropExit::patience: return "patience";
    case CropExit::exhausted: return "exhausted";
  }
  return "?";
}

CropSearchConfig crop_config(const std::array<std::int64_t, 3>& patch,
                             const std::string& steps) {
  CropSearchConfig sc;
  sc.patch_w = patch[0];
  sc.patch_h = patch[1];
  sc.patch_d = patch[2];
  if (!steps.empty()) {
    std::array<double, 3> v{};
    std::istringstream is(steps);
    std::string tok;
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(is, tok, ','))
        throw ValidationError("steps='" + steps + "': expected r,theta,phi");
      v[static_cast<std::size_t>(i)] = parse_real("steps", tok);
    }
    if (std::getline(is, tok, ','))
      throw ValidationError("steps='" + steps + "': expected exactly three values");
    sc.r_step = v[0];
    sc.theta_step = v[1];
    sc.phi_step = v[2];
  }
  return sc;
}

// Fraction of the reference mask captured by the chosen patch.
double mask_overlap(const Volume& mask, const PatchSpec& ps) {
  double inside = 0, total = 0;
  for (std::int64_t z = 0; z < mask.d; ++z)
    for (std::int64_t y = 0; y < mask.h; ++y)
      for (std::int64_t x = 0; x < mask.w; ++x)
        if (mask.at(x, y, z) > 0.5f) {
          total += 1;
          if (x >= ps.x0 && x < ps.x0 + ps.w && y >= ps.y0 && y < ps.y0 + ps.h &&
              z >= ps.z0 && z < ps.z0 + ps.d)
            inside += 1;
        }
  return total > 0 ? inside / total : -1.0;
}

int cmd_crop_search(const CropArgs& a) {
  const auto patch = parse_dims(a.patch);
  if (a.sweep) {
    if (a.manifest.empty())
      throw ValidationError("crop-search --sweep needs --manifest (images and masks)");
    const auto data = load_dataset(a.manifest);
    struct Setting {
      const char* label;
      double r, theta, phi;
    };
    const Setting settings[] = {
        {"L/4 pi/4 pi/2", 1.0 / 4.0, std::numbers::pi / 4.0, std::numbers::pi / 2.0},
        {"L/6 pi/6 pi/3", 1.0 / 6.0, std::numbers::pi / 6.0, std::numbers::pi / 3.0},
        {"L/8 pi/8 pi/4", 1.0 / 8.0, std::numbers::pi / 8.0, std::numbers::pi / 4.0},
    };
    std::ostringstream table;
    table << "setting\tmean_seconds\tmean_overlap\tmean_visited\n";
    for (const Setting& s : settings) {
      CropSearchConfig sc = crop_config(patch, "");
      sc.r_step = s.r;
      sc.theta_step = s.theta;
      sc.phi_step = s.phi;
      double secs = 0, overlap = 0, visited = 0;
      std::int64_t overlap_n = 0;
      for (const TrainPair& c : data) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto [best, trace] = selective_crop(c.image, sc);
        secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
        visited += static_cast<double>(trace.visited.size());
        const double ov = mask_overlap(c.mask, best);
        if (ov >= 0) {
          overlap += ov;
          ++overlap_n;
        }
      }
      const double n = static_cast<double>(data.size());
      char row[160];
      std::snprintf(row, sizeof row, "%s\t%.6g\t%.6g\t%.6g\n", s.label, secs / n,
                    overlap_n ? overlap / static_cast<double>(overlap_n) : 0.0,
                    visited / n);
      table << row;
    }
    std::cout << table.str();
    if (!a.out.empty()) {
      make_dir(a.out);
      write_text(fs::path(a.out) / "crop_sweep.tsv", table.str());
      write_text(fs::path(a.out) / "resolved_config.txt",
                 "# command=crop-search\n# manifest=" + a.manifest + "\n# patch=" +
                     a.patch + "\n# sweep=on\n");
    }
    return 0;
  }

  if (a.volume.empty()) throw ValidationError("crop-search needs --volume (or --sweep)");
  const Volume v = load_volume(a.volume);
  const CropSearchConfig sc = crop_config(patch, a.steps);
  if (a.steps.empty())
    std::cout << "steps: L/6 pi/6 pi/3\n";
  else
    std::cout << "steps: r=" << sc.r_step << " theta=" << sc.theta_step
              << " phi=" << sc.phi_step << "\n";
  const auto [best, trace] = selective_crop(v, sc);
  char line[256];
  std::snprintf(line, sizeof line,
                "best: x0=%lld y0=%lld z0=%lld w=%lld h=%lld d=%lld variance=%.17g "
                "visited=%zu exit=%s\n",
                static_cast<long long>(best.x0), static_cast<long long>(best.y0),
                static_cast<long long>(best.z0), static_cast<long long>(best.w),
                static_cast<long long>(best.h), static_cast<long long>(best.d),
                trace.best_variance, trace.visited.size(), exit_name(trace.exit_reason));
  std::cout << line;
  if (!a.trace.empty()) write_text(a.trace, trace_tsv(trace));
  return 0;
}

// ---- bench --------------------------------------------------------------------

struct BenchArgs {
  std::string manifest, out, config;
  std::string patchfree, lrbaseline;
  std::vector<std::string> sliding;
  std::vector<std::string> windows;
  std::string stride = "0x0x0";
  int repeats = 5;
};

int cmd_bench(const BenchArgs& a) {
  const NetworkConfig net = config_or_default(a.config).effective_net();
  const auto data = load_dataset(a.manifest);
  make_dir(a.out);

  std::array<std::int64_t, 3> stride{0, 0, 0};
  if (a.stride != "0x0x0") stride = parse_dims(a.stride);

  std::vector<BenchSpec> specs;
  if (!a.patchfree.empty())
    specs.push_back({"patchfree", InferMode::patch_free, a.patchfree, net, {}});
  if (!a.lrbaseline.empty())
    specs.push_back({"lr-tricubic", InferMode::lr_baseline, a.lrbaseline, net, {}});
  if (!a.windows.empty() && a.windows.size() != a.sliding.size())
    throw ValidationError("bench: --window count must match --sliding count");
  for (std::size_t i = 0; i < a.sliding.size(); ++i) {
    const std::array<std::int64_t, 3> win =
        i < a.windows.size() ? parse_dims(a.windows[i])
                             : std::array<std::int64_t, 3>{24, 24, 16};
    NetworkConfig wcfg = net;
    wcfg.use_hgm = false;
    wcfg.lr_dims = win;
    wcfg.patch_dims = {win[0] / 2, win[1] / 2, win[2] / 2};
    const std::string label = "sliding-" + std::to_string(win[0]) + "x" +
                              std::to_string(win[1]) + "x" + std::to_string(win[2]);
    specs.push_back({label, InferMode::sliding, a.sliding[i], wcfg, stride});
  }
  if (specs.empty())
    throw ValidationError("bench: no models given (--patchfree/--lrbaseline/--sliding)");

  const auto rows = run_benchmark(specs, data, a.repeats);
  const std::string table = benchmark_table(rows);
  std::cout << table;
  write_text(fs::path(a.out) / "benchmark.tsv", table);
  for (const BenchRow& r : rows)
    if (r.skipped) std::cerr << "warning: " << r.name << ": " << r.note << "\n";

  std::ostringstream dsc_tsv;
  dsc_tsv << "patch_w\tpatch_h\tpatch_d\tdsc\tmodel\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].skipped) continue;
    const NetworkConfig& c = specs[i].net;
    const std::array<std::int64_t, 3> extent =
        specs[i].mode == InferMode::sliding ? c.lr_dims : c.hr_dims();
    char row[128];
    std::snprintf(row, sizeof row, "%lld\t%lld\t%lld\t%.6g\t%s\n",
                  static_cast<long long>(extent[0]), static_cast<long long>(extent[1]),
                  static_cast<long long>(extent[2]), rows[i].dsc, rows[i].name.c_str());
    dsc_tsv << row;
  }
  write_text(fs::path(a.out) / "patchsize_vs_dsc.tsv", dsc_tsv.str());

  // analytic activation footprint vs processed extent (params stay constant)
  const std::int64_t param_elems = make_params<float>(net, 0).count();
  std::ostringstream mem_tsv;
  mem_tsv << "patch_w\tpatch_h\tpatch_d\tactivation_elems\tparam_elems\n";
  for (int k = 1; k <= 4; ++k) {
    NetworkConfig scaled = net;
    for (int ax = 0; ax < 3; ++ax) {
      scaled.lr_dims[static_cast<std::size_t>(ax)] *= k;
      scaled.patch_dims[static_cast<std::size_t>(ax)] *= k;
    }
    const auto hr = scaled.hr_dims();
    char row[160];
    std::snprintf(row, sizeof row, "%lld\t%lld\t%lld\t%lld\t%lld\n",
                  static_cast<long long>(hr[0]), static_cast<long long>(hr[1]),
                  static_cast<long long>(hr[2]),
                  static_cast<long long>(estimate_peak_activations(scaled)),
                  static_cast<long long>(param_elems));
    mem_tsv << row;
  }
  write_text(fs::path(a.out) / "memory_vs_patch.tsv", mem_tsv.str());

  write_text(fs::path(a.out) / "resolved_config.txt",
             "# command=bench\n# manifest=" + a.manifest + "\n# repeats=" +
                 std::to_string(a.repeats) + "\n" +
                 train_config_text(config_or_default(a.config)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patch-free volumetric segmentation toolkit"};
  app.require_subcommand(1);
  app.footer("Environment: PFSEG_THREADS caps module-internal parallelism.");

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  cgen->add_option("--out", gen.out, "output directory")->required();
  cgen->add_option("--count", gen.count, "number of cases")->required();
  cgen->add_option("--dims", gen.dims, "volume extents WxHxD (default 48x48x32)");
  cgen->add_option("--seed", gen.seed, "dataset seed (default 0)");

  TrainArgs tr;
  auto* ctrain = app.add_subcommand("train", "train on a manifest");
  ctrain->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  ctrain->add_option("--out", tr.out, "output directory")->required();
  ctrain->add_option("--config", tr.config, "key=value config file");

  EvalArgs ev;
  auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ceval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  ceval->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  ceval->add_option("--mode", ev.mode, "patchfree | sliding | lrbaseline");
  ceval->add_option("--config", ev.config, "key=value config file");
  ceval->add_option("--stride", ev.stride, "sliding stride WxHxD (0x0x0 = window)");
  ceval->add_option("--out", ev.out, "optional report directory");

  CropArgs cr;
  auto* ccrop = app.add_subcommand("crop-search", "variance-guided crop diagnostics");
  ccrop->add_option("--volume", cr.volume, "input volume (single-search mode)");
  ccrop->add_option("--manifest", cr.manifest, "dataset manifest (sweep mode)");
  ccrop->add_option("--patch", cr.patch, "patch extents WxHxD")->required();
  ccrop->add_option("--steps", cr.steps, "custom steps r,theta,phi");
  ccrop->add_option("--trace", cr.trace, "write visited candidates to this file");
  ccrop->add_option("--out", cr.out, "sweep output directory");
  ccrop->add_flag("--sweep", cr.sweep, "run the step-size sweep over a manifest");

  BenchArgs be;
  auto* cbench = app.add_subcommand("bench", "compare inference paths");
  cbench->add_option("--manifest", be.manifest, "dataset manifest")->required();
  cbench->add_option("--out", be.out, "output directory")->required();
  cbench->add_option("--config", be.config, "key=value config file");
  cbench->add_option("--patchfree", be.patchfree, "patch-free model checkpoint");
  cbench->add_option("--lrbaseline", be.lrbaseline, "half-resolution model checkpoint");
  cbench->add_option("--sliding", be.sliding, "window model checkpoint (repeatable)");
  cbench->add_option("--window", be.windows, "window extents per --sliding checkpoint");
  cbench->add_option("--stride", be.stride, "sliding stride WxHxD (0x0x0 = window)");
  cbench->add_option("--repeats", be.repeats, "timed runs per case (default 5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version succeed; any usage error is 1
  }

  try {
    if (cgen->parsed()) return cmd_gen_data(gen);
    if (ctrain->parsed()) return cmd_train(tr);
    if (ceval->parsed()) return cmd_eval(ev);
    if (ccrop->parsed()) return cmd_crop_search(cr);
    if (cbench->parsed()) return cmd_bench(be);
  } catch (const RuntimeFailure& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
