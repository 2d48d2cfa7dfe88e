#pragma once

#include <fstream>
#include <functional>

#include "ntk/adversary.hpp"
#include "ntk/dataset.hpp"
#include "ntk/dynamics.hpp"
#include "ntk/metrics.hpp"

namespace ntk {

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | spirals | gratings | cifar10
  int n_train = 2000;
  int n_test = 500;
  int classes = 2;
  int d = 16;  // blobs only
  double margin = 0.3;
  double sigma = 0.05;
  std::string cifar_dir;  // cifar10 only
  std::vector<int> cifar_classes = {0, 1};
};

struct StageOneConfig {
  std::string regime = "benign";  // benign | adversarial | mixed
  int t_switch = 0;               // mixed: benign epochs before the switch
  int epochs = 30;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
};

struct StageTwoConfig {
  std::string dynamics = "linearized";  // standard|linearized|centered|centered_standard
  int spawn_epoch = 30;
  std::string regime = "benign";
  int t_switch = 0;
  int epochs = 20;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 64;
  std::string bn_policy = "frozen";  // frozen | standard
  bool bn_ablation = false;
};

struct KernelSchedule {
  std::vector<int> epochs;  // stage-1 epochs at which the NTK is computed
  int subset = 200;         // class-balanced kernel subset size
};

struct EvalConfig {
  PgdConfig pgd;   // evaluation attack
  int subset = 500;  // class-balanced test subset for adversarial evaluation
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::string arch = "mlp";  // mlp | small_cnn
  std::vector<int> plan = {256, 256};
  StageOneConfig stage1;
  StageTwoConfig stage2;
  PgdConfig train_pgd;  // attack used by adversarial training regimes
  EvalConfig eval;
  KernelSchedule kernels;
  int precision = 64;  // 32 | 64 (training compute; kernels always 64)
  uint64_t seed = 1;
  std::string out_dir = "runs/run";

  void validate() const;
};

// Declarative JSON config round-trip; unknown keys are an error.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical (key-sorted) JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

Dataset build_dataset(const DatasetSpec& spec, uint64_t seed);
Architecture make_architecture(const ExperimentConfig& cfg, const Dataset& ds);
Precision precision_of(const ExperimentConfig& cfg);

// Minibatch SGD for `epochs` epochs. Shuffling and per-batch attack seeds
// come from named substreams of `root_seed` under `stream_tag`, keyed by the
// absolute epoch index, so a resumed stage replays identically. `hook`, when
// set, runs after every epoch with the absolute epoch number.
using EpochHook = std::function<void(int epoch, DynamicsModel& m)>;
void train_stage(DynamicsModel& m, const Tensor& X, const std::vector<int>& y,
                 const std::string& regime, int t_switch, int epochs, double lr,
                 double momentum, int batch_size, const PgdConfig& pgd,
                 uint64_t root_seed, const std::string& stream_tag,
                 int start_epoch = 0, const EpochHook& hook = {});

// Snapshot of the feature map a dynamics model differentiates through:
// parent parameters for linearized/centered, live parameters otherwise,
// with the statistics the model currently uses.
ModelSnapshot feature_snapshot(const DynamicsModel& m, int epoch = 0,
                               const std::string& tag = "");

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path accuracy_csv;
  std::filesystem::path relmag_csv;  // linearized runs only
  std::filesystem::path spawn_snapshot;
  std::filesystem::path final_snapshot;
  std::vector<std::pair<int, std::filesystem::path>> stage1_kernels;
  std::vector<std::pair<int, std::filesystem::path>> stage2_kernels;
};

// Two-stage protocol: stage-1 training with scheduled snapshots/kernels,
// spawn at stage2.spawn_epoch, stage-2 training under the configured
// dynamics, accuracy + relative-magnitude emission.
RunPaths run_two_stage(const ExperimentConfig& cfg);

// Kernel-metric panels (velocity, distance-to-final, effective rank, mean
// KSM) over the stage-1 schedule, aggregated over `repeats` seeds.
// Returns the metrics CSV path (rows: metric, epoch, value, std).
// `seeds` overrides the per-repeat root seeds (must match `repeats` when set).
std::filesystem::path run_metric_sweep(const ExperimentConfig& cfg, int repeats = 3,
                                       std::vector<uint64_t> seeds = {});

// Centered stage-2 training on fixed base kernels x {benign, adversarial}
// regimes; CSV rows (base, regime, acc_benign, acc_adv).
std::filesystem::path run_fixed_kernel_adv(const ExperimentConfig& cfg,
                                           const std::vector<std::string>& bases);

// {centered, sgd lr=1e-4, sgd lr=1e-2} x {frozen, standard bn} from one
// parent snapshot; CSV rows (method, lr, bn, acc_benign, acc_adv,
// kernel_distance).
std::filesystem::path run_sgd_ablation(const ExperimentConfig& cfg);

// Plot-ready per-panel CSVs plus a JSON run manifest (config hash, seed).
std::filesystem::path emit_plots_data(const std::filesystem::path& run_dir);

// Bundle run artifacts listed in the manifest into out_file (tar-free
// concatenated archive with an index); refuses mixed config hashes.
void export_run(const std::filesystem::path& run_dir,
                const std::filesystem::path& out_file);

// CSV helper: writes a `# config_hash=<hex>` stamp line, a header, then rows
// rendered with %.17g for doubles.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::string& config_hash,
            const std::vector<std::string>& columns);
  void row(const std::vector<std::string>& cells);
  void close();
  ~CsvWriter();

 private:
  std::ofstream os_;
  size_t columns_ = 0;
  std::filesystem::path file_;
};

// Reads the config-hash stamp of a CSV or JSON-headered binary artifact;
// empty when the file carries none.
std::string read_artifact_hash(const std::filesystem::path& file);

}  // namespace ntk
