#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "urpca/dataset.hpp"
#include "urpca/image.hpp"
#include "urpca/metrics.hpp"
#include "urpca/rpca.hpp"
#include "urpca/train.hpp"

namespace {

using namespace urpca;
namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Output directory plus the running list of files that ends up in
// manifest.txt; a command succeeds only once the manifest is on disk.
struct Outputs {
  fs::path dir;
  std::vector<std::string> files;

  explicit Outputs(const std::string& out) : dir(out) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  }
  fs::path add(const std::string& rel) {
    files.push_back(rel);
    return dir / rel;
  }
  void write_manifest() {
    std::ofstream os(dir / "manifest.txt");
    for (const auto& f : files) os << f << "\n";
    if (!os) throw IoError("cannot write manifest under " + dir.string());
  }
};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("split must be 'train' or 'test', got '" + s + "'");
}

std::pair<int, int> parse_target_range(const std::string& s) {
  try {
    const auto pos = s.find("..");
    int lo, hi;
    if (pos == std::string::npos) {
      lo = hi = std::stoi(s);
    } else {
      lo = std::stoi(s.substr(0, pos));
      hi = std::stoi(s.substr(pos + 2));
    }
    if (lo < 0 || hi < lo) throw ConfigError("invalid target range '" + s + "'");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse target range '" + s + "' (expected N or LO..HI)");
  }
}

Matrix minmax01(const Matrix& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  if (hi <= lo) return Matrix::Zero(m.rows(), m.cols());
  return ((m.array() - lo) / (hi - lo)).matrix();
}

void write_metrics_csv(const fs::path& path, const MetricsReport& r, double threshold,
                       const RocCurve* roc) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "metric,value\n";
  os << "threshold," << fmt(threshold) << "\n";
  os << "miou," << fmt(r.miou) << "\n";
  os << "f1," << fmt(r.f1) << "\n";
  os << "pd," << fmt(r.pd) << "\n";
  os << "fa," << fmt(r.fa) << "\n";
  os << "zero_gt," << (r.zero_gt ? 1 : 0) << "\n";
  if (roc) os << "auc," << fmt(roc->auc) << "\n";
}

void write_roc_csv(const fs::path& path, const RocCurve& roc) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "threshold,fa,pd\n";
  for (const RocPoint& p : roc.points)
    os << fmt(p.threshold) << ',' << fmt(p.fa) << ',' << fmt(p.pd) << "\n";
}

// ---------------------------------------------------------------- synth ----

struct SynthOpts {
  std::string out;
  std::string split = "train";
  int count = 8;
  int size = 64;
  int rank = 3;
  std::string targets = "1..3";
  double amp_lo = 0.4, amp_hi = 0.9;
  double sigma_lo = 1.0, sigma_hi = 2.5;
  double noise = 0.01;
  uint64_t seed = 0;
  std::string config;
};

void run_synth(const SynthOpts& o) {
  Outputs out(o.out);
  const auto [t_lo, t_hi] = parse_target_range(o.targets);
  const Split split = parse_split(o.split);

  Rng master(o.seed);
  std::vector<DatasetSample> samples;
  samples.reserve(o.count);
  for (int i = 0; i < o.count; ++i) {
    SynthSceneSpec spec;
    spec.height = spec.width = o.size;
    spec.background_rank = o.rank;
    spec.num_targets = t_lo + static_cast<int>(master.uniform_int(t_hi - t_lo + 1));
    spec.amp_lo = o.amp_lo;
    spec.amp_hi = o.amp_hi;
    spec.sigma_lo = o.sigma_lo;
    spec.sigma_hi = o.sigma_hi;
    spec.noise_std = o.noise;
    spec.seed = master.next_u64();
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    spec.name = name;
    samples.push_back(synth_scene(spec));
  }
  write_dataset(samples, out.dir, split);
  for (const auto& s : samples) {
    out.files.push_back(split_name(split) + "/images/" + s.name + ".png");
    out.files.push_back(split_name(split) + "/masks/" + s.name + ".png");
  }
  out.write_manifest();
  std::cout << "wrote " << samples.size() << " samples under " << out.dir.string() << "\n";
}

// ---------------------------------------------------------------- train ----

struct TrainOpts {
  std::string data, out, resume, config;
  std::string split = "train";
  int size = 256;
  int stages = 6, channels = 32, bem_layers = 3, tem_layers = 6, irm_layers = 3;
  int64_t epochs = 400, batch = 8, checkpoint_every = 0;
  double lr = 1e-4, tau = 0.01;
  uint64_t seed = 0;
};

void run_train(const TrainOpts& o) {
  Outputs out(o.out);
  ModelConfig mc;
  mc.stages = o.stages;
  mc.channels = o.channels;
  mc.bem_mid_layers = o.bem_layers;
  mc.tem_mid_layers = o.tem_layers;
  mc.irm_mid_layers = o.irm_layers;
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.base_lr = o.lr;
  tc.tau = o.tau;
  tc.seed = o.seed;
  tc.checkpoint_every = o.checkpoint_every;

  const auto samples = load_dataset(o.data, parse_split(o.split), o.size);
  TrainSession session = o.resume.empty() ? TrainSession(mc, o.seed)
                                          : load_checkpoint(o.resume, mc);
  const auto history = train(session, samples, tc, out.dir, &std::cerr);
  save_checkpoint(out.add("checkpoint.uckp"), session);
  write_history_csv(out.add("history.csv"), history);

  // Periodic checkpoints were dropped into the output directory by train().
  std::vector<std::string> periodic;
  for (const auto& e : fs::directory_iterator(out.dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("checkpoint_ep") && name.ends_with(".uckp")) periodic.push_back(name);
  }
  std::sort(periodic.begin(), periodic.end());
  out.files.insert(out.files.end(), periodic.begin(), periodic.end());
  out.write_manifest();
  std::cout << "trained " << history.size() << " iterations; checkpoint at "
            << (out.dir / "checkpoint.uckp").string() << "\n";
}

// ----------------------------------------------------------------- eval ----

struct EvalOpts {
  std::string ckpt, data, out, config;
  std::string split = "test";
  int size = 256;
  double threshold = 0.5;
  int roc_points = 20;
};

void run_eval(const EvalOpts& o) {
  Outputs out(o.out);
  TrainSession session = load_checkpoint(o.ckpt);
  const auto samples = load_dataset(o.data, parse_split(o.split), o.size);
  if (samples.empty()) throw ConfigError("eval: no samples in split '" + o.split + "' under " + o.data);

  NoGradGuard no_grad;
  std::vector<Tensor> scores, gts;
  scores.reserve(samples.size());
  for (const auto& s : samples) {
    Tensor x = Tensor::zeros({1, 1, s.image.dim(1), s.image.dim(2)});
    std::copy(s.image.data().begin(), s.image.data().end(), x.data().begin());
    const Tensor prob = sigmoid(session.model.forward(x).target);
    scores.push_back(Tensor::from_data(s.mask.shape(),
                                       {prob.data().begin(), prob.data().end()}));
    gts.push_back(s.mask);
  }
  const MetricsReport report = evaluate(scores, gts, o.threshold);
  RocCurve roc;
  if (o.roc_points > 0) roc = roc_sweep(scores, gts, o.roc_points);
  write_metrics_csv(out.add("metrics.csv"), report, o.threshold, o.roc_points > 0 ? &roc : nullptr);
  if (o.roc_points > 0) write_roc_csv(out.add("roc.csv"), roc);
  out.write_manifest();
  std::cout << "miou " << report.miou << " f1 " << report.f1 << " pd " << report.pd << " fa "
            << report.fa << "\n";
}

// ------------------------------------------------------------ decompose ----

struct DecomposeOpts {
  std::string image, ckpt, baseline, out, config;
  bool trace = false;
  int size = 0;
  int patch_size = 50, slide_step = 10;
  int tophat_radius = 3;
};

void run_decompose(const DecomposeOpts& o) {
  Outputs out(o.out);
  if (o.ckpt.empty() == o.baseline.empty())
    throw ConfigError("decompose: pass exactly one of --ckpt or --baseline");
  Matrix image = image_to_matrix(read_png_gray(o.image));
  if (o.size > 0) image = resize_bilinear(image, o.size, o.size);

  Matrix background, target, reconstruction;
  if (!o.ckpt.empty()) {
    TrainSession session = load_checkpoint(o.ckpt);
    NoGradGuard no_grad;
    Tensor x = Tensor::zeros({1, 1, image.rows(), image.cols()});
    const Tensor img3 = matrix_to_tensor(image);
    std::copy(img3.data().begin(), img3.data().end(), x.data().begin());

    DecompositionTrace trace;
    session.model.forward(x, /*training=*/false, &trace);
    const size_t k_final = trace.target.size() - 1;
    background = tensor_to_matrix(trace.background[k_final]);
    target = tensor_to_matrix(trace.target[k_final]);
    reconstruction = tensor_to_matrix(trace.reconstruction[k_final]);
    if (o.trace) {
      for (size_t k = 0; k < trace.target.size(); ++k) {
        write_png_heatmap(out.add("B_k" + std::to_string(k + 1) + ".png"),
                          tensor_to_matrix(trace.background[k]));
        write_png_heatmap(out.add("T_k" + std::to_string(k + 1) + ".png"),
                          tensor_to_matrix(trace.target[k]));
      }
    }
  } else {
    if (o.trace) throw ConfigError("decompose: --trace requires a checkpoint");
    if (o.baseline == "pcp") {
      const PcpResult r = pcp_decompose(image);
      background = r.background;
      target = r.target;
      reconstruction = r.background + r.target;
    } else if (o.baseline == "ipi") {
      PatchConfig cfg{o.patch_size, o.slide_step};
      const PcpResult r = pcp_decompose(patch_construct(image, cfg));
      const int rows = static_cast<int>(image.rows()), cols = static_cast<int>(image.cols());
      background = patch_reconstruct(r.background, cfg, rows, cols);
      target = patch_reconstruct(r.target, cfg, rows, cols);
      reconstruction = background + target;
    } else if (o.baseline == "tophat") {
      target = tophat_detect(image, o.tophat_radius);
      background = image - target;
      reconstruction = image;
    } else {
      throw ConfigError("decompose: unknown baseline '" + o.baseline +
                        "' (expected pcp, ipi or tophat)");
    }
  }
  write_png_heatmap(out.add("target.png"), target);
  write_png_heatmap(out.add("background.png"), background);
  write_png_heatmap(out.add("reconstruction.png"), reconstruction);
  out.write_manifest();
  std::cout << "wrote " << out.files.size() << " maps under " << out.dir.string() << "\n";
}

// ------------------------------------------------------------- baseline ----

struct BaselineOpts {
  std::string method, data, out, config;
  std::string split = "test";
  int size = 0;
  double threshold = 0.5;
  int roc_points = 20;
  int patch_size = 50, slide_step = 10;
  int tophat_radius = 3;
};

void run_baseline(const BaselineOpts& o) {
  Outputs out(o.out);
  const auto samples = load_dataset(o.data, parse_split(o.split), o.size);
  if (samples.empty())
    throw ConfigError("baseline: no samples in split '" + o.split + "' under " + o.data);

  std::vector<Tensor> scores, gts;
  scores.reserve(samples.size());
  for (const auto& s : samples) {
    const Matrix image = tensor_to_matrix(s.image);
    Matrix response;
    if (o.method == "pcp") {
      response = pcp_decompose(image).target;
    } else if (o.method == "ipi") {
      PatchConfig cfg{o.patch_size, o.slide_step};
      const PcpResult r = pcp_decompose(patch_construct(image, cfg));
      response = patch_reconstruct(r.target, cfg, static_cast<int>(image.rows()),
                                   static_cast<int>(image.cols()));
    } else if (o.method == "tophat") {
      response = tophat_detect(image, o.tophat_radius);
    } else {
      throw ConfigError("baseline: unknown method '" + o.method + "'");
    }
    scores.push_back(matrix_to_tensor(minmax01(response)));
    gts.push_back(s.mask);
  }
  const MetricsReport report = evaluate(scores, gts, o.threshold);
  RocCurve roc;
  if (o.roc_points > 0) roc = roc_sweep(scores, gts, o.roc_points);
  write_metrics_csv(out.add("metrics.csv"), report, o.threshold, o.roc_points > 0 ? &roc : nullptr);
  if (o.roc_points > 0) write_roc_csv(out.add("roc.csv"), roc);
  out.write_manifest();
  std::cout << o.method << ": miou " << report.miou << " pd " << report.pd << " fa " << report.fa
            << "\n";
}

// CLI11 only processes config files attached to the root command, so each
// subcommand applies its own file by hand: unknown keys are errors, and a
// value fills its option only when the command line / environment left it
// untouched.
void apply_config(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path);
  const auto strip = [](const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string at = path + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected key=value");
    const std::string key = strip(line.substr(0, eq));
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt || key == "config" || key.empty())
      throw ConfigError(at + ": unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(strip(line.substr(eq + 1)));
    opt->run_callback();
  }
}

void add_config_option(CLI::App* cmd, std::string& slot) {
  cmd->add_option("--config", slot, "key=value config file; flags override its entries");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-unfolding RPCA toolkit for infrared small-target detection"};
  app.require_subcommand(1);

  SynthOpts so;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic low-rank-plus-targets dataset");
  synth->add_option("--out", so.out, "output dataset root")->required();
  synth->add_option("--split", so.split, "dataset split to write")->capture_default_str();
  synth->add_option("--count", so.count, "number of samples")->capture_default_str();
  synth->add_option("--size", so.size, "square image size in pixels")->capture_default_str();
  synth->add_option("--rank", so.rank, "background rank")->capture_default_str();
  synth->add_option("--targets", so.targets, "targets per image, N or LO..HI")->capture_default_str();
  synth->add_option("--amp-lo", so.amp_lo, "min target amplitude")->capture_default_str();
  synth->add_option("--amp-hi", so.amp_hi, "max target amplitude")->capture_default_str();
  synth->add_option("--sigma-lo", so.sigma_lo, "min target sigma, px")->capture_default_str();
  synth->add_option("--sigma-hi", so.sigma_hi, "max target sigma, px")->capture_default_str();
  synth->add_option("--noise", so.noise, "pixel noise stddev")->capture_default_str();
  synth->add_option("--seed", so.seed, "RNG seed")->envname("UNFOLD_RPCA_SEED")->capture_default_str();
  add_config_option(synth, so.config);
  synth->callback([synth, &so] {
    apply_config(synth, so.config);
    run_synth(so);
  });

  TrainOpts to;
  CLI::App* train_cmd = app.add_subcommand("train", "train the unfolded decomposition network");
  train_cmd->add_option("--data", to.data, "dataset root")->required();
  train_cmd->add_option("--out", to.out, "output directory")->required();
  train_cmd->add_option("--resume", to.resume, "checkpoint to continue from");
  train_cmd->add_option("--split", to.split, "split to train on")->capture_default_str();
  train_cmd->add_option("--size", to.size, "resize images to this square size; 0 keeps native")
      ->capture_default_str();
  train_cmd->add_option("--stages", to.stages, "unfolding stages K")->capture_default_str();
  train_cmd->add_option("--channels", to.channels, "feature channels C")->capture_default_str();
  train_cmd->add_option("--bem-layers", to.bem_layers, "middle conv layers in the background net")
      ->capture_default_str();
  train_cmd->add_option("--tem-layers", to.tem_layers, "middle conv layers in the target net")
      ->capture_default_str();
  train_cmd->add_option("--irm-layers", to.irm_layers, "middle conv layers in the reconstruction net")
      ->capture_default_str();
  train_cmd->add_option("--epochs", to.epochs, "training epochs")->capture_default_str();
  train_cmd->add_option("--batch", to.batch, "batch size")->capture_default_str();
  train_cmd->add_option("--lr", to.lr, "base learning rate (poly-decayed, power 0.9)")
      ->capture_default_str();
  train_cmd->add_option("--tau", to.tau, "fidelity loss weight")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", to.checkpoint_every,
                        "epochs between periodic checkpoints; 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--seed", to.seed, "RNG seed")->envname("UNFOLD_RPCA_SEED")
      ->capture_default_str();
  add_config_option(train_cmd, to.config);
  train_cmd->callback([train_cmd, &to] {
    apply_config(train_cmd, to.config);
    run_train(to);
  });

  EvalOpts eo;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--ckpt", eo.ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eo.data, "dataset root")->required();
  eval_cmd->add_option("--out", eo.out, "output directory")->required();
  eval_cmd->add_option("--split", eo.split, "split to evaluate")->capture_default_str();
  eval_cmd->add_option("--size", eo.size, "resize images to this square size; 0 keeps native")
      ->capture_default_str();
  eval_cmd->add_option("--threshold", eo.threshold, "binarization threshold")->capture_default_str();
  eval_cmd->add_option("--roc-points", eo.roc_points, "ROC sweep thresholds; 0 skips the sweep")
      ->capture_default_str();
  add_config_option(eval_cmd, eo.config);
  eval_cmd->callback([eval_cmd, &eo] {
    apply_config(eval_cmd, eo.config);
    run_eval(eo);
  });

  DecomposeOpts dopt;
  CLI::App* dec = app.add_subcommand("decompose", "decompose one image into background/target maps");
  dec->add_option("--image", dopt.image, "input PNG")->required();
  dec->add_option("--ckpt", dopt.ckpt, "checkpoint file");
  dec->add_option("--baseline", dopt.baseline, "classical method: pcp, ipi or tophat");
  dec->add_flag("--trace", dopt.trace, "also write per-stage B_k/T_k heatmaps");
  dec->add_option("--out", dopt.out, "output directory")->required();
  dec->add_option("--size", dopt.size, "resize input to this square size; 0 keeps native")
      ->capture_default_str();
  dec->add_option("--patch-size", dopt.patch_size, "patch side for ipi")->capture_default_str();
  dec->add_option("--slide-step", dopt.slide_step, "patch stride for ipi")->capture_default_str();
  dec->add_option("--tophat-radius", dopt.tophat_radius, "structuring-element radius")
      ->capture_default_str();
  add_config_option(dec, dopt.config);
  dec->callback([dec, &dopt] {
    apply_config(dec, dopt.config);
    run_decompose(dopt);
  });

  BaselineOpts bo;
  CLI::App* base = app.add_subcommand("baseline", "run a classical method over a split and score it");
  base->add_option("--method", bo.method, "pcp, ipi or tophat")->required();
  base->add_option("--data", bo.data, "dataset root")->required();
  base->add_option("--out", bo.out, "output directory")->required();
  base->add_option("--split", bo.split, "split to evaluate")->capture_default_str();
  base->add_option("--size", bo.size, "resize images to this square size; 0 keeps native")
      ->capture_default_str();
  base->add_option("--threshold", bo.threshold, "binarization threshold")->capture_default_str();
  base->add_option("--roc-points", bo.roc_points, "ROC sweep thresholds; 0 skips the sweep")
      ->capture_default_str();
  base->add_option("--patch-size", bo.patch_size, "patch side for ipi")->capture_default_str();
  base->add_option("--slide-step", bo.slide_step, "patch stride for ipi")->capture_default_str();
  base->add_option("--tophat-radius", bo.tophat_radius, "structuring-element radius")
      ->capture_default_str();
  add_config_option(base, bo.config);
  base->callback([base, &bo] {
    apply_config(base, bo.config);
    run_baseline(bo);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
