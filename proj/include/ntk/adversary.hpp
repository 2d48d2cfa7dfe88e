#pragma once

#include <filesystem>

#include "ntk/dynamics.hpp"

namespace ntk {

struct PgdConfig {
  double epsilon = 4.0 / 255.0;  // L-inf radius in the data's native [0,1] units
  int steps = 100;
  double alpha = 0;  // step size; <= 0 means 2*epsilon/steps
  bool random_init = true;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  int chunk = 32;  // samples per inner evaluation (memory bound)

  double step_size() const { return alpha > 0 ? alpha : 2.0 * epsilon / steps; }
  void validate() const {
    if (!(epsilon > 0)) throw std::invalid_argument("pgd: epsilon must be positive");
    if (steps < 1) throw std::invalid_argument("pgd: steps must be >= 1");
    if (!(step_size() > 0)) throw std::invalid_argument("pgd: alpha must be positive");
    if (!(clip_lo < clip_hi)) throw std::invalid_argument("pgd: bad clip range");
  }
};

struct AdversarialBatch {
  Tensor originals;
  Tensor perturbed;
  std::vector<int> labels;
  std::string generator_tag;
};

// Iterated L-inf PGD, untargeted softmax cross-entropy, last iterate.
// x0 = clip(x + U(-eps, eps)) when random_init; each step moves by
// alpha * sign(grad_x loss) and projects onto the eps-ball and clip range.
// Deterministic for a fixed (model, config, seed).
AdversarialBatch pgd_attack(const DynamicsModel& m, const Tensor& x,
                            const std::vector<int>& labels, const PgdConfig& cfg,
                            uint64_t seed, const std::string& tag = "");

double benign_accuracy(const DynamicsModel& m, const Tensor& X,
                       const std::vector<int>& labels);

// Accuracy under PGD examples generated against the evaluated model itself.
double adversarial_accuracy(const DynamicsModel& m, const Tensor& X,
                            const std::vector<int>& labels, const PgdConfig& cfg,
                            uint64_t seed);

void save_adv_batch(const std::filesystem::path& file, const AdversarialBatch& batch,
                    const std::string& config_hash = "");
AdversarialBatch load_adv_batch(const std::filesystem::path& file);

}  // namespace ntk
