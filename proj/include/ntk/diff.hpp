#pragma once

#include <Eigen/Dense>
#include <optional>

#include "ntk/graph.hpp"

namespace ntk {

// Batch-norm evaluation mode. `train` normalizes by batch statistics and
// optionally updates running stats; `frozen` normalizes by stored stats.
struct BnMode {
  enum class Kind { train, frozen } kind = Kind::frozen;
  const BnStats* stats = nullptr;     // frozen: source of running stats
  BnStats* running_update = nullptr;  // train: optional update target
  double momentum = 0.9;

  static BnMode frozen(const BnStats& s) {
    BnMode m;
    m.kind = Kind::frozen;
    m.stats = &s;
    return m;
  }
  static BnMode train(BnStats* update = nullptr, double momentum = 0.9) {
    BnMode m;
    m.kind = Kind::train;
    m.running_update = update;
    m.momentum = momentum;
    return m;
  }
};

struct LayerTrace {
  Tensor x;                      // layer input (primal)
  std::vector<double> mean;      // bn: statistics used in this evaluation
  std::vector<double> inv_std;   // bn: 1/sqrt(var + eps)
  bool bn_batch_stats = false;   // bn: whether batch statistics were used
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Tensor output;
};

constexpr double kBnEps = 1e-5;

// f_theta(x): logits [batch, C].
Tensor forward(const ModelGraph& g, const ParamVector& params, const Tensor& x,
               const BnMode& bn, ForwardTrace* trace = nullptr);

// Reverse mode over a recorded forward. Either output may be null.
void backward(const ModelGraph& g, const ParamVector& params, const ForwardTrace& trace,
              const Tensor& dy, ParamVector* dparams, Tensor* dx);

// d(cotangent^T f)/d theta.
ParamVector grad(const ModelGraph& g, const ParamVector& params, const Tensor& x,
                 const Tensor& cotangent, const BnMode& bn);

// d(cotangent^T f)/d x.
Tensor input_grad(const ModelGraph& g, const ParamVector& params, const Tensor& x,
                  const Tensor& cotangent, const BnMode& bn);

// Directional derivative of f at params along a parameter tangent
// (forward mode). Requires frozen batch-norm statistics.
Tensor jvp(const ModelGraph& g, const ParamVector& params, const Tensor& x,
           const ParamVector& tangent, const BnMode& bn);

// Forward-over-reverse: input gradient of cot_primal^T f together with its
// directional derivative along a parameter tangent,
//   tangent = d/ds [ grad_x ((cot_primal + s cot_tangent)^T f_{theta + s v}(x)) ] at s = 0.
// This is the exact mixed derivative needed to differentiate linearized and
// centered predictions with respect to the input. Frozen batch-norm only.
struct DualInputGrad {
  Tensor primal;
  Tensor tangent;
};
DualInputGrad input_grad_dual(const ModelGraph& g, const ParamVector& params,
                              const ParamVector& param_tangent, const Tensor& x,
                              const BnMode& bn, const Tensor& cot_primal,
                              const Tensor* cot_tangent = nullptr);

// One dual forward pass: primal output, its jvp along the tangent, and the
// recorded trace. The trace is valid for both backward() and backward_dual().
struct JvpEval {
  Tensor y;
  Tensor yt;
  ForwardTrace trace;
};
JvpEval forward_jvp(const ModelGraph& g, const ParamVector& params,
                    const ParamVector& tangent, const Tensor& x, const BnMode& bn);

// Dual reverse pass over a recorded trace (frozen batch-norm only).
DualInputGrad backward_dual(const ModelGraph& g, const ParamVector& params,
                            const ParamVector& tangent, const ForwardTrace& trace,
                            const Tensor& cot_primal,
                            const Tensor* cot_tangent = nullptr);

// Explicit [C x P] Jacobian for one sample (test oracle; small P only).
Eigen::MatrixXd jacobian_explicit(const ModelGraph& g, const ParamVector& params,
                                  const Tensor& x_single, const BnMode& bn,
                                  int64_t param_limit = 100000);

enum class LossKind { cross_entropy, mse };

// Mean loss over the batch and its gradient with respect to the logits.
// For mse the target is the one-hot encoding of the labels and the mean is
// taken over all logit entries, so d/df mean((f-y)^2) = 2(f-y)/(B*C).
std::pair<double, Tensor> loss_and_grad(LossKind kind, const Tensor& logits,
                                        const std::vector<int>& labels);

// MSE against an explicit target tensor (same reduction as above).
std::pair<double, Tensor> mse_and_grad(const Tensor& logits, const Tensor& target);

}  // namespace ntk
