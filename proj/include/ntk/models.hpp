#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "ntk/diff.hpp"
#include "ntk/graph.hpp"

namespace ntk {

enum class ArchKind { mlp, small_cnn };

struct Architecture {
  ArchKind kind = ArchKind::mlp;
  std::vector<int> plan;         // mlp: hidden widths; small_cnn: channel plan
  std::vector<int> input_shape;  // {d} or {C,H,W}
  int class_count = 2;

  bool operator==(const Architecture&) const = default;
};

// mlp: [flatten] -> (dense -> relu)* -> dense C
// small_cnn: (conv3x3 same -> batchnorm -> relu)* -> global_avg_pool -> dense C
ModelGraph build_graph(const Architecture& arch, Precision compute = Precision::f64);

// He fan-in Gaussian weights, zero biases, gamma=1, beta=0, running mean 0,
// running variance 1. Deterministic per seed.
std::pair<ParamVector, BnStats> init_params(const Architecture& arch, uint64_t seed);

struct ModelSnapshot {
  Architecture arch;
  ParamVector params;   // theta_t
  BnStats bn_stats;
  int spawn_epoch = 0;
  std::string tag = "benign";  // training regime: benign | adversarial | mixed
};

// Self-describing container: one-line JSON header, '\n', then raw 64-bit
// little-endian payload (params flat, then per-bn-layer mean and var).
void save_snapshot(const std::filesystem::path& file, const ModelSnapshot& snap,
                   const std::string& config_hash = "");
ModelSnapshot load_snapshot(const std::filesystem::path& file);

// Argmax over one logits row; ties break toward the lowest class index.
int predict_class(const double* logits, int c_count);
std::vector<int> predict_classes(const Tensor& logits);

}  // namespace ntk
