#pragma once

#include <memory>

#include "ntk/models.hpp"

namespace ntk {

struct PgdConfig;  // adversary.hpp

enum class DynKind { standard, linearized, centered, centered_standard };
enum class BnPolicy { frozen, standard };

const char* dyn_kind_name(DynKind k);
DynKind dyn_kind_from_name(const std::string& s);

// A predictor-with-gradient under one of the four training dynamics.
// Non-standard kinds keep the parent snapshot (theta_t); with a frozen
// batch-norm policy the tangent feature map of linearized/centered models is
// constant throughout stage 2.
struct DynamicsModel {
  DynKind kind = DynKind::standard;
  BnPolicy bn_policy = BnPolicy::frozen;
  Architecture arch;
  ModelGraph graph;
  ParamVector params;  // live theta
  BnStats stats;       // live running statistics
  std::shared_ptr<const ModelSnapshot> parent;
  ParamVector momentum_buf;
  bool momentum_init = false;
};

DynamicsModel make_standard(const Architecture& arch, ParamVector params, BnStats stats,
                            BnPolicy bn_policy = BnPolicy::standard,
                            Precision compute = Precision::f64);

// Stage-2 spawn from a parent snapshot. Linearized/centered require the
// frozen policy unless the run is explicitly flagged as a batch-norm
// ablation. Momentum buffers start fresh.
DynamicsModel spawn(DynKind kind, std::shared_ptr<const ModelSnapshot> parent,
                    BnPolicy bn_policy = BnPolicy::frozen,
                    Precision compute = Precision::f64, bool bn_ablation = false);

// Inference-mode prediction (frozen statistics).
Tensor predict(const DynamicsModel& m, const Tensor& x);

// d(cotangent^T prediction)/d theta. Constant in theta for linearized and
// centered kinds.
ParamVector grad_params(const DynamicsModel& m, const Tensor& x, const Tensor& cot);

// d(cotangent^T prediction)/d input; differentiates through the dynamics
// (the jvp term included, via forward-over-reverse).
Tensor input_gradient(const DynamicsModel& m, const Tensor& x, const Tensor& cot);

// Mean batch loss and its input gradient in one evaluation (PGD inner step).
std::pair<double, Tensor> loss_input_grad(const DynamicsModel& m, const Tensor& x,
                                          const std::vector<int>& labels,
                                          LossKind loss = LossKind::cross_entropy);

// One SGD+momentum step: buffer <- momentum*buffer - lr*grad; theta += buffer.
// When `adversary` is set the batch is replaced by PGD examples generated
// against the current model. Returns the batch loss.
double sgd_step(DynamicsModel& m, const Tensor& x, const std::vector<int>& labels,
                double lr, double momentum, LossKind loss = LossKind::cross_entropy,
                const PgdConfig* adversary = nullptr, uint64_t adversary_seed = 0);

// Mean over samples of |jvp term|^2 / |parent output|^2 for a linearized
// model; samples with zero parent output are skipped (error if all are).
double relative_magnitude(const DynamicsModel& m, const Tensor& X);

}  // namespace ntk
