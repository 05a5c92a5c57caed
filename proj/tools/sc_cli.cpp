// Operator entry point: dataset fetch/verify, SC pretraining, supervised
// fine-tuning, evaluation, the finite-difference suite and filter export.
//
// Exit codes: 0 ok, 1 numeric failure, 2 input/config error.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "sc/checkpoint.hpp"
#include "sc/config.hpp"
#include "sc/data.hpp"
#include "sc/error.hpp"
#include "sc/fetch.hpp"
#include "sc/gradcheck.hpp"
#include "sc/image_io.hpp"
#include "sc/losses.hpp"
#include "sc/metrics.hpp"
#include "sc/models.hpp"
#include "sc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "out";
  int64_t seed = -1;  // -1: take the config value
  bool quiet = false;
};

sc::Config load_config(const GlobalArgs& g) {
  if (g.config_path.empty()) return sc::Config();
  return sc::Config::parse_file(g.config_path);
}

std::string data_dir_for(const sc::Config& cfg, const std::string& dataset) {
  std::string dir = cfg.get_string("data.dir", "");
  if (!dir.empty()) return dir;
  const char* env = std::getenv("SC_DATA_DIR");
  if (env && *env) return std::string(env) + "/" + dataset;
  throw sc::ConfigError("no dataset directory: set [data] dir in the config or SC_DATA_DIR");
}

sc::ModelSpec arch_spec(const sc::Config& cfg) {
  const std::string arch = cfg.get_string("model.arch", "mnist");
  const float slope = static_cast<float>(cfg.get_double("model.leaky_slope", 0.1));
  if (arch == "mnist") return sc::build_mnist_model();
  if (arch == "cifar10") return sc::build_cifar10_model(slope);
  if (arch == "stl10") return sc::build_stl10_model();
  throw sc::ConfigError("unknown [model] arch '" + arch + "' (want mnist|cifar10|stl10)");
}

sc::SampleConfig sample_config(const sc::Config& cfg) {
  sc::SampleConfig s;
  s.patch_rows = cfg.get_int("sample.patch_rows", 1);
  s.patch_cols = cfg.get_int("sample.patch_cols", 1);
  s.fresh_contrast_per_pair = cfg.get_bool("sample.fresh_contrast_per_pair", true);
  s.exclude_overlap = cfg.get_bool("sample.exclude_overlap", false);
  s.normalize_features = cfg.get_bool("sample.normalize_features", false);
  return s;
}

sc::TrainConfig train_config(const sc::Config& cfg, const std::string& section, sc::Phase phase,
                             const GlobalArgs& g) {
  sc::TrainConfig t;
  t.phase = phase;
  const bool pre = phase == sc::Phase::pretrain;
  t.batch_size = cfg.get_int(section + ".batch_size", 32);
  t.initial_lr = cfg.get_double(section + ".initial_lr", pre ? 0.1 : 0.01);
  t.lr_decay_factor = cfg.get_double(section + ".lr_decay_factor", 0.1);
  t.plateau_patience = cfg.get_int(section + ".plateau_patience", 3);
  t.plateau_rel_tol = cfg.get_double(section + ".plateau_rel_tol", 1e-3);
  t.min_lr = cfg.get_double(section + ".min_lr", 1e-5);
  t.momentum = static_cast<float>(cfg.get_double(section + ".momentum", 0.9));
  t.max_epochs = cfg.get_int(section + ".max_epochs", 10);
  t.seed = static_cast<uint64_t>(cfg.get_int64(section + ".seed", 1));
  t.eval_every = cfg.get_int(section + ".eval_every", 1);
  t.augment.max_translate = cfg.get_int(section + ".max_translate", 0);
  t.augment.mirror = cfg.get_bool(section + ".mirror", false);
  if (g.seed >= 0) t.seed = static_cast<uint64_t>(g.seed);  // flag beats config
  return t;
}

sc::Dataset load_split(const sc::Config& cfg, const std::string& dataset, const std::string& dir,
                       const std::string& role) {
  // role: unlabeled | train | test
  const int unlabeled_limit = cfg.get_int("data.unlabeled_limit", 0);
  const int labeled_limit = cfg.get_int("data.labeled_limit", 0);
  const int test_limit = cfg.get_int("data.test_limit", 0);
  if (dataset == "mnist") {
    if (role == "unlabeled") return strip_labels(sc::load_mnist(dir, "train", unlabeled_limit));
    if (role == "train") return sc::load_mnist(dir, "train", labeled_limit);
    return sc::load_mnist(dir, "test", test_limit);
  }
  if (dataset == "cifar10") {
    if (role == "unlabeled") return strip_labels(sc::load_cifar10(dir, "train", unlabeled_limit));
    if (role == "train") return sc::load_cifar10(dir, "train", labeled_limit);
    return sc::load_cifar10(dir, "test", test_limit);
  }
  if (dataset == "stl10") {
    if (role == "unlabeled") {
      // the paper's pretraining union: unlabeled + labeled train
      sc::Dataset unl = sc::load_stl10(dir, sc::Stl10Split::unlabeled, unlabeled_limit);
      sc::Dataset tr = sc::load_stl10(dir, sc::Stl10Split::train, 0);
      return strip_labels(sc::concat(unl, tr));
    }
    if (role == "train") return sc::load_stl10(dir, sc::Stl10Split::train, labeled_limit);
    return sc::load_stl10(dir, sc::Stl10Split::test, test_limit);
  }
  throw sc::ConfigError("unknown [data] dataset '" + dataset + "' (want mnist|cifar10|stl10)");
}

std::vector<std::string> dataset_files(const std::string& dataset, const std::string& dir,
                                       bool include_test) {
  std::vector<std::string> files;
  if (dataset == "mnist") {
    files = {dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte"};
    if (include_test) {
      files.push_back(dir + "/t10k-images-idx3-ubyte");
      files.push_back(dir + "/t10k-labels-idx1-ubyte");
    }
  } else if (dataset == "cifar10") {
    for (int b = 1; b <= 5; ++b) files.push_back(dir + "/data_batch_" + std::to_string(b) + ".bin");
    if (include_test) files.push_back(dir + "/test_batch.bin");
  } else if (dataset == "stl10") {
    files = {dir + "/unlabeled_X.bin", dir + "/train_X.bin", dir + "/train_y.bin"};
    if (include_test) {
      files.push_back(dir + "/test_X.bin");
      files.push_back(dir + "/test_y.bin");
    }
  }
  return files;
}

std::string iso_now() {
  char buf[32];
  const std::time_t t = std::time(nullptr);
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

// Content hash over the run inputs: resolved config, seed, data files and the
// init checkpoint, when any.
std::string input_hash(const sc::Config& cfg, uint64_t seed, const std::vector<std::string>& files) {
  std::string blob;
  for (const auto& [k, v] : cfg.entries()) blob += k + "=" + v + "\n";
  blob += "seed=" + std::to_string(seed) + "\n";
  for (const auto& f : files) {
    blob += f + ":";
    blob += fs::exists(f) ? sc::sha256_file(f) : std::string("<missing>");
    blob += "\n";
  }
  return sc::sha256_string(blob);
}

json config_snapshot(const sc::Config& cfg) {
  json snap = json::object();
  for (const auto& [k, v] : cfg.entries()) snap[k] = v;
  return snap;
}

// Re-running against an existing manifest with identical inputs and intact
// outputs is a no-op.
bool manifest_says_complete(const std::string& manifest_path, const std::string& inputs_digest,
                            bool quiet) {
  if (!fs::exists(manifest_path)) return false;
  std::ifstream in(manifest_path);
  json m;
  try {
    in >> m;
  } catch (const std::exception&) {
    return false;  // unreadable manifest: redo the run
  }
  if (m.value("inputs_digest", "") != inputs_digest) return false;
  if (!m.contains("outputs")) return false;
  for (const auto& out : m["outputs"]) {
    const std::string path = out.value("path", "");
    if (!fs::exists(path)) return false;
    const std::string want = out.value("sha256", "");
    if (!want.empty() && sc::sha256_file(path) != want) return false;
  }
  if (!quiet) std::cout << "run already complete per " << manifest_path << "\n";
  return true;
}

void write_manifest(const std::string& manifest_path, const std::string& command,
                    const sc::Config& cfg, uint64_t seed, const std::string& inputs_digest,
                    const std::string& started,
                    const std::vector<std::pair<std::string, bool>>& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config_snapshot(cfg);
  m["seed"] = seed;
  m["inputs_digest"] = inputs_digest;
  m["started"] = started;
  m["finished"] = iso_now();
  m["outputs"] = json::array();
  for (const auto& [path, hash_it] : outputs) {
    json o;
    o["path"] = path;
    if (hash_it) o["sha256"] = sc::sha256_file(path);  // deterministic artifacts only
    m["outputs"].push_back(o);
  }
  std::ofstream out(manifest_path);
  out << m.dump(2) << "\n";
}

int cmd_pretrain(const GlobalArgs& g) {
  const std::string started = iso_now();
  sc::Config cfg = load_config(g);
  const std::string dataset = cfg.get_string("data.dataset", "mnist");
  const std::string dir = data_dir_for(cfg, dataset);

  sc::TrainConfig tc = train_config(cfg, "pretrain", sc::Phase::pretrain, g);
  const std::string digest = input_hash(cfg, tc.seed, dataset_files(dataset, dir, false));
  fs::create_directories(g.out_dir);
  const std::string manifest_path = g.out_dir + "/pretrain-manifest.json";
  if (manifest_says_complete(manifest_path, digest, g.quiet)) return 0;

  sc::Dataset unlabeled = load_split(cfg, dataset, dir, "unlabeled");
  sc::Rng init_rng(tc.seed, 0);
  sc::Model model = sc::build_model(arch_spec(cfg), init_rng);

  const std::string metrics_path = g.out_dir + "/pretrain-metrics.csv";
  fs::remove(metrics_path);  // append-only within a run; fresh per run
  sc::MetricsLog log(metrics_path, !g.quiet);
  const std::string ckpt_path = g.out_dir + "/pretrain.ckpt";
  sc::pretrain(model, unlabeled, tc, sample_config(cfg), &log, ckpt_path);

  write_manifest(manifest_path, "pretrain", cfg, tc.seed, digest, started,
                 {{ckpt_path, true}, {metrics_path, false}});
  if (!g.quiet) std::cout << "wrote " << ckpt_path << "\n";
  return 0;
}

int cmd_finetune(const GlobalArgs& g, const std::string& init_path, bool resume) {
  const std::string started = iso_now();
  sc::Config cfg = load_config(g);
  const std::string dataset = cfg.get_string("data.dataset", "mnist");
  const std::string dir = data_dir_for(cfg, dataset);

  sc::TrainConfig tc =
      train_config(cfg, "finetune", init_path.empty() ? sc::Phase::scratch : sc::Phase::finetune, g);
  auto files = dataset_files(dataset, dir, true);
  if (!init_path.empty()) files.push_back(init_path);
  const std::string digest = input_hash(cfg, tc.seed, files);
  fs::create_directories(g.out_dir);
  const char* tag = init_path.empty() ? "scratch" : "finetune";
  const std::string manifest_path = g.out_dir + "/" + tag + "-manifest.json";
  if (manifest_says_complete(manifest_path, digest, g.quiet)) return 0;

  sc::Dataset train_ds = load_split(cfg, dataset, dir, "train");
  sc::Dataset test_ds = load_split(cfg, dataset, dir, "test");
  sc::Rng init_rng(tc.seed, 0);
  sc::Model model = sc::build_model(arch_spec(cfg), init_rng);

  sc::Checkpoint ckpt;
  const sc::Checkpoint* init = nullptr;
  if (!init_path.empty()) {
    ckpt = sc::load_checkpoint(init_path);
    init = &ckpt;
  }

  const std::string metrics_path = g.out_dir + "/" + tag + "-metrics.csv";
  fs::remove(metrics_path);
  sc::MetricsLog log(metrics_path, !g.quiet);
  const std::string ckpt_path = g.out_dir + "/" + tag + ".ckpt";
  sc::FinetuneResult res = sc::finetune(model, init, resume, train_ds, test_ds, tc, &log, ckpt_path);

  write_manifest(manifest_path, tag, cfg, tc.seed, digest, started,
                 {{ckpt_path, true}, {metrics_path, false}});
  std::printf("final test accuracy: %.4f\n", res.final_test_accuracy);
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& init_path) {
  sc::Config cfg = load_config(g);
  const std::string dataset = cfg.get_string("data.dataset", "mnist");
  const std::string dir = data_dir_for(cfg, dataset);
  sc::Dataset test_ds = load_split(cfg, dataset, dir, "test");

  sc::Rng init_rng(1, 0);
  sc::Model model = sc::build_model(arch_spec(cfg), init_rng);
  sc::Checkpoint ckpt = sc::load_checkpoint(init_path);
  sc::apply_checkpoint(model, ckpt, /*trunk_only=*/false);

  sc::EvalResult res = sc::evaluate(model, test_ds);
  std::printf("accuracy: %.4f  mean_loss: %.6f  (n=%d)\n", res.accuracy, res.mean_loss,
              test_ds.size());
  return 0;
}

int cmd_gradcheck(const GlobalArgs& g, const std::string& module, int cases) {
  const uint64_t seed = g.seed >= 0 ? static_cast<uint64_t>(g.seed) : 1;
  auto results = sc::run_gradcheck_suite(module, seed, cases);
  bool all_pass = true;
  std::printf("%-28s %12s %9s  %s\n", "op", "worst_rel_err", "tol", "verdict");
  for (const auto& r : results) {
    all_pass = all_pass && r.pass();
    std::printf("%-28s %12.3e %9.0e  %s\n", r.op.c_str(), r.max_rel_err, r.tol,
                r.pass() ? "pass" : "FAIL");
  }
  if (!all_pass) throw sc::NumericError("gradcheck: at least one op exceeded its tolerance");
  return 0;
}

int cmd_export_filters(const GlobalArgs& g, const std::string& ckpt_path,
                       const std::string& out_path) {
  sc::Config cfg = load_config(g);
  sc::Rng init_rng(1, 0);
  sc::Model model = sc::build_model(arch_spec(cfg), init_rng);
  sc::Checkpoint ckpt = sc::load_checkpoint(ckpt_path);
  sc::apply_checkpoint(model, ckpt, /*trunk_only=*/false);

  for (size_t i = 0; i < model.spec().layers.size(); ++i) {
    if (model.spec().layers[i].kind == sc::LayerKind::conv) {
      sc::export_filter_grid(model.layers()[i].conv_w, out_path);
      if (!g.quiet) std::cout << "wrote " << out_path << "\n";
      return 0;
    }
  }
  throw sc::ConfigError("export-filters: model has no convolution layer");
}

int cmd_fetch(const GlobalArgs& g, const std::string& dataset, const std::string& dir,
              bool allow_unverified, const std::string& manifest) {
  sc::FetchOptions opt;
  opt.allow_unverified = allow_unverified;
  opt.manifest_path = manifest;
  opt.quiet = g.quiet;
  sc::fetch_dataset(dataset, dir, opt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-contrast trainer"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "config file (key = value with [sections])");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out-dir", g.out_dir, "output directory for checkpoints/metrics/manifests");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  auto* pre = app.add_subcommand("pretrain", "unsupervised SC pretraining");
  auto* fin = app.add_subcommand("finetune", "supervised training, optionally from a checkpoint");
  std::string init_path, resume_path;
  bool resume = false;
  fin->add_option("--init", init_path, "pretraining checkpoint to initialize the trunk from");
  fin->add_flag("--resume", resume, "restore everything from --init, incl. optimizer state");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string eval_ckpt;
  ev->add_option("--init", eval_ckpt, "checkpoint to evaluate")->required();
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_module = "all";
  int gc_cases = 20;
  gc->add_option("--module", gc_module, "all|layers|losses");
  gc->add_option("--cases", gc_cases, "random shapes per op");
  auto* ex = app.add_subcommand("export-filters", "tile first-layer kernels into a PGM/PPM grid");
  std::string ex_ckpt, ex_out = "filters.pgm";
  ex->add_option("--init", ex_ckpt, "checkpoint to read")->required();
  ex->add_option("--out", ex_out, "output image path");
  auto* fe = app.add_subcommand("fetch", "download and verify a dataset");
  std::string fe_dataset, fe_dir;
  bool fe_unverified = false;
  std::string fe_manifest;
  fe->add_option("dataset", fe_dataset, "mnist|cifar10|stl10")->required();
  fe->add_option("dir", fe_dir, "target directory")->required();
  fe->add_flag("--allow-unverified", fe_unverified, "accept files without a pinned digest");
  fe->add_option("--checksums", fe_manifest, "manifest with [sha256] / [url] sections");

  try {
    app.parse(argc, argv);
    if (pre->parsed()) return cmd_pretrain(g);
    if (fin->parsed()) return cmd_finetune(g, init_path, resume);
    if (ev->parsed()) return cmd_eval(g, eval_ckpt);
    if (gc->parsed()) return cmd_gradcheck(g, gc_module, gc_cases);
    if (ex->parsed()) return cmd_export_filters(g, ex_ckpt, ex_out);
    if (fe->parsed()) return cmd_fetch(g, fe_dataset, fe_dir, fe_unverified, fe_manifest);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const sc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sc::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const sc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
