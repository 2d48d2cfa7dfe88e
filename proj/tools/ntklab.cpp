#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ntk/harness.hpp"
#include "ntk/rng.hpp"
#include "ntk/spectral.hpp"
#include "ntk/transfer.hpp"

namespace {

using ntk::ExperimentConfig;

double parse_eps(const std::string& s) {
  const auto slash = s.find('/');
  if (slash != std::string::npos) {
    const double num = std::stod(s.substr(0, slash));
    const double den = std::stod(s.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("eps: zero denominator");
    return num / den;
  }
  return std::stod(s);
}

struct CommonOpts {
  std::string config_file;
  std::string seed_str, out, eps, precision;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "experiment config JSON file");
  cmd->add_option("--seed", o.seed_str, "root seed override");
  cmd->add_option("--out", o.out, "output directory override");
  cmd->add_option("--eps", o.eps, "attack radius: 4/255, 8/255, or a float");
  cmd->add_option("--precision", o.precision, "training compute precision: 32 or 64");
}

ExperimentConfig load_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config file " + o.config_file);
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    cfg = ntk::config_from_json(text);
  }
  if (!o.seed_str.empty()) cfg.seed = std::stoull(o.seed_str);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.eps.empty()) {
    const double e = parse_eps(o.eps);
    cfg.train_pgd.epsilon = e;
    cfg.eval.pgd.epsilon = e;
  }
  if (!o.precision.empty()) {
    if (o.precision != "32" && o.precision != "64")
      throw std::invalid_argument("precision must be 32 or 64");
    cfg.precision = std::stoi(o.precision);
  }
  cfg.validate();
  return cfg;
}

ntk::DynamicsModel model_from_snapshot(const std::string& file,
                                       const ExperimentConfig& cfg) {
  ntk::ModelSnapshot snap = ntk::load_snapshot(file);
  return ntk::make_standard(snap.arch, snap.params, snap.bn_stats,
                            ntk::BnPolicy::frozen, ntk::precision_of(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical laboratory for empirical NTK evolution under training"};
  app.require_subcommand(1);

  CommonOpts o;
  int repeats = 3;
  std::string snapshot_file, out_file, run_dir, direction = "both";
  std::vector<std::string> bases = {"init", "benign_final", "adv_final"};
  std::vector<std::string> sources;
  int class_index = 0, top_k = 3, viz_iterations = 600;
  double viz_alpha = 0.001;

  auto* c_train = app.add_subcommand("train", "two-stage training run");
  add_common(c_train, o);

  auto* c_metrics = app.add_subcommand("metrics", "kernel metric sweep over repeats");
  add_common(c_metrics, o);
  c_metrics->add_option("--repeats", repeats, "independent repeats to aggregate");

  auto* c_attack = app.add_subcommand("attack", "generate and persist a PGD batch");
  add_common(c_attack, o);
  c_attack->add_option("--snapshot", snapshot_file, "model snapshot (.ntksnap)")
      ->required();

  auto* c_transfer = app.add_subcommand("transfer", "adversarial transferability table");
  add_common(c_transfer, o);
  c_transfer->add_option("--target", snapshot_file, "target snapshot (.ntksnap)")
      ->required();
  c_transfer->add_option("--source", sources, "source adversarial batches (.advb)")
      ->required();

  auto* c_fixed = app.add_subcommand("fixed-kernel", "centered training on fixed kernels");
  add_common(c_fixed, o);
  c_fixed->add_option("--base", bases, "base kernels: init, benign_final, adv_final");

  auto* c_ablate = app.add_subcommand("ablate-sgd", "centering vs SGD x batch-norm grid");
  add_common(c_ablate, o);

  auto* c_viz = app.add_subcommand("visualize", "NTK eigenvector visualizations");
  add_common(c_viz, o);
  c_viz->add_option("--snapshot", snapshot_file, "model snapshot (.ntksnap)")->required();
  c_viz->add_option("--class", class_index, "class output defining the kernel");
  c_viz->add_option("--top-k", top_k, "number of leading eigenvectors");
  c_viz->add_option("--direction", direction, "max, min, or both");
  c_viz->add_option("--iterations", viz_iterations, "sign-PGD iterations");
  c_viz->add_option("--alpha", viz_alpha, "sign-PGD step size");

  auto* c_export = app.add_subcommand("export", "bundle run artifacts");
  c_export->add_option("--run-dir", run_dir, "run directory to bundle")->required();
  c_export->add_option("--out-file", out_file, "bundle output path")->required();

  CLI11_PARSE(app, argc, argv);

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "train") {
      ntk::RunPaths rp = ntk::run_two_stage(load_config(o));
      ntk::emit_plots_data(rp.dir);
      std::cout << rp.dir.string() << "\n";
    } else if (cmd == "metrics") {
      std::cout << ntk::run_metric_sweep(load_config(o), repeats).string() << "\n";
    } else if (cmd == "attack") {
      ExperimentConfig cfg = load_config(o);
      ntk::Dataset ds =
          ntk::build_dataset(cfg.dataset, ntk::substream_seed(cfg.seed, "data"));
      std::vector<int> idx = ntk::balanced_subset(
          ds.test_y, ds.class_count, cfg.eval.subset / ds.class_count,
          ntk::substream_seed(cfg.seed, "eval-subset"));
      ntk::Tensor x = ntk::take_rows(ds.test_x, idx);
      std::vector<int> y = ntk::take_labels(ds.test_y, idx);
      ntk::DynamicsModel m = model_from_snapshot(snapshot_file, cfg);
      ntk::AdversarialBatch b = ntk::pgd_attack(
          m, x, y, cfg.eval.pgd, ntk::substream_seed(cfg.seed, "pgd/cli-attack"));
      std::filesystem::create_directories(cfg.out_dir);
      const auto out = std::filesystem::path(cfg.out_dir) / "attack.advb";
      ntk::save_adv_batch(out, b, ntk::config_hash(cfg));
      std::cout << out.string() << "\n";
    } else if (cmd == "transfer") {
      ExperimentConfig cfg = load_config(o);
      ntk::DynamicsModel target = model_from_snapshot(snapshot_file, cfg);
      std::vector<ntk::TransferSource> srcs;
      for (const auto& f : sources)
        srcs.push_back({ntk::load_adv_batch(f), 0});
      if (srcs.empty()) throw std::runtime_error("transfer: no sources");
      const ntk::Tensor& benign = srcs.front().batch.originals;
      const std::vector<int>& labels = srcs.front().batch.labels;
      auto records =
          ntk::transferability(target, srcs, benign, labels, cfg.eval.pgd,
                               ntk::substream_seed(cfg.seed, "pgd/cli-transfer"));
      std::filesystem::create_directories(cfg.out_dir);
      const auto out = std::filesystem::path(cfg.out_dir) / "transfer.csv";
      ntk::write_transfer_csv(out, records);
      std::cout << out.string() << "\n";
    } else if (cmd == "fixed-kernel") {
      std::cout << ntk::run_fixed_kernel_adv(load_config(o), bases).string() << "\n";
    } else if (cmd == "ablate-sgd") {
      std::cout << ntk::run_sgd_ablation(load_config(o)).string() << "\n";
    } else if (cmd == "visualize") {
      ExperimentConfig cfg = load_config(o);
      ntk::ModelSnapshot snap = ntk::load_snapshot(snapshot_file);
      ntk::Dataset ds =
          ntk::build_dataset(cfg.dataset, ntk::substream_seed(cfg.seed, "data"));
      std::vector<int> idx = ntk::balanced_subset(
          ds.train_y, ds.class_count, cfg.kernels.subset / ds.class_count,
          ntk::substream_seed(cfg.seed, "subset"));
      ntk::Tensor x = ntk::take_rows(ds.train_x, idx);
      auto feats = ntk::extract_eigvec_features(snap, x, class_index, top_k);
      std::filesystem::create_directories(cfg.out_dir);
      const int channels = snap.arch.input_shape.size() == 3 &&
                                   snap.arch.input_shape[0] == 3
                               ? 3
                               : 1;
      for (const auto& f : feats)
        for (const bool maximize : {true, false}) {
          if (direction == "max" && !maximize) continue;
          if (direction == "min" && maximize) continue;
          ntk::VizConfig vc;
          vc.iterations = viz_iterations;
          vc.alpha = viz_alpha;
          vc.maximize = maximize;
          ntk::VizResult res = ntk::visualize_eigvec(snap, f, vc);
          const auto out = std::filesystem::path(cfg.out_dir) /
                           ntk::viz_file_name(class_index, f.index, maximize, channels);
          ntk::write_image(out, res.image);
          std::cout << out.string() << " cosine=" << res.cosine
                    << (res.zero_norm_warning ? " warning=zero_feature_norm" : "")
                    << "\n";
        }
    } else if (cmd == "export") {
      ntk::export_run(run_dir, out_file);
      std::cout << out_file << "\n";
    }
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", e.what()}, {"command", cmd}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
