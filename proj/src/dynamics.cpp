#include "ntk/dynamics.hpp"

#include "ntk/adversary.hpp"

namespace ntk {

const char* dyn_kind_name(DynKind k) {
  switch (k) {
    case DynKind::standard: return "standard";
    case DynKind::linearized: return "linearized";
    case DynKind::centered: return "centered";
    case DynKind::centered_standard: return "centered_standard";
  }
  return "?";
}

DynKind dyn_kind_from_name(const std::string& s) {
  if (s == "standard") return DynKind::standard;
  if (s == "linearized") return DynKind::linearized;
  if (s == "centered") return DynKind::centered;
  if (s == "centered_standard") return DynKind::centered_standard;
  throw std::invalid_argument("unknown dynamics kind: " + s);
}

DynamicsModel make_standard(const Architecture& arch, ParamVector params, BnStats stats,
                            BnPolicy bn_policy, Precision compute) {
  DynamicsModel m;
  m.kind = DynKind::standard;
  m.bn_policy = bn_policy;
  m.arch = arch;
  m.graph = build_graph(arch, compute);
  m.params = std::move(params);
  m.stats = std::move(stats);
  return m;
}

DynamicsModel spawn(DynKind kind, std::shared_ptr<const ModelSnapshot> parent,
                    BnPolicy bn_policy, Precision compute, bool bn_ablation) {
  if (!parent) throw std::invalid_argument("spawn: missing parent snapshot");
  if (kind == DynKind::standard)
    throw std::invalid_argument("spawn: standard dynamics takes no parent; use make_standard");
  if ((kind == DynKind::linearized || kind == DynKind::centered) &&
      bn_policy == BnPolicy::standard && !bn_ablation)
    throw std::invalid_argument(
        "spawn: linearized/centered dynamics require frozen batch-norm "
        "(set bn_ablation to run the pathology on purpose)");
  DynamicsModel m;
  m.kind = kind;
  m.bn_policy = bn_policy;
  m.arch = parent->arch;
  m.graph = build_graph(parent->arch, compute);
  m.params = parent->params;
  m.stats = parent->bn_stats;
  m.parent = std::move(parent);
  return m;
}

namespace {

// Statistics entering the tangent feature map phi. Frozen policy pins them
// to the parent's; the standard-policy ablation lets them drift.
const BnStats& feature_stats(const DynamicsModel& m) {
  if (m.bn_policy == BnPolicy::frozen && m.parent) return m.parent->bn_stats;
  return m.stats;
}

void require_parent(const DynamicsModel& m) {
  if (!m.parent) throw std::invalid_argument("dynamics: missing parent snapshot");
}

ParamVector delta(const DynamicsModel& m) {
  ParamVector d = m.params;
  d -= m.parent->params;
  return d;
}

}  // namespace

Tensor predict(const DynamicsModel& m, const Tensor& x) {
  switch (m.kind) {
    case DynKind::standard:
      return forward(m.graph, m.params, x, BnMode::frozen(m.stats));
    case DynKind::linearized: {
      require_parent(m);
      JvpEval ev =
          forward_jvp(m.graph, m.parent->params, delta(m), x, BnMode::frozen(feature_stats(m)));
      return ev.y + ev.yt;
    }
    case DynKind::centered: {
      require_parent(m);
      return jvp(m.graph, m.parent->params, x, delta(m), BnMode::frozen(feature_stats(m)));
    }
    case DynKind::centered_standard: {
      require_parent(m);
      Tensor live = forward(m.graph, m.params, x, BnMode::frozen(m.stats));
      Tensor base =
          forward(m.graph, m.parent->params, x, BnMode::frozen(m.parent->bn_stats));
      return live - base;
    }
  }
  throw std::logic_error("predict: bad kind");
}

ParamVector grad_params(const DynamicsModel& m, const Tensor& x, const Tensor& cot) {
  switch (m.kind) {
    case DynKind::standard:
      return grad(m.graph, m.params, x, cot, BnMode::frozen(m.stats));
    case DynKind::linearized:
    case DynKind::centered:
      require_parent(m);
      return grad(m.graph, m.parent->params, x, cot, BnMode::frozen(feature_stats(m)));
    case DynKind::centered_standard:
      // the parent term is constant in theta
      require_parent(m);
      return grad(m.graph, m.params, x, cot, BnMode::frozen(m.stats));
  }
  throw std::logic_error("grad_params: bad kind");
}

Tensor input_gradient(const DynamicsModel& m, const Tensor& x, const Tensor& cot) {
  switch (m.kind) {
    case DynKind::standard:
      return input_grad(m.graph, m.params, x, cot, BnMode::frozen(m.stats));
    case DynKind::linearized: {
      require_parent(m);
      DualInputGrad d = input_grad_dual(m.graph, m.parent->params, delta(m), x,
                                        BnMode::frozen(feature_stats(m)), cot);
      return d.primal + d.tangent;
    }
    case DynKind::centered: {
      require_parent(m);
      DualInputGrad d = input_grad_dual(m.graph, m.parent->params, delta(m), x,
                                        BnMode::frozen(feature_stats(m)), cot);
      return d.tangent;
    }
    case DynKind::centered_standard: {
      require_parent(m);
      Tensor g_live = input_grad(m.graph, m.params, x, cot, BnMode::frozen(m.stats));
      Tensor g_base = input_grad(m.graph, m.parent->params, x, cot,
                                 BnMode::frozen(m.parent->bn_stats));
      return g_live - g_base;
    }
  }
  throw std::logic_error("input_gradient: bad kind");
}

std::pair<double, Tensor> loss_input_grad(const DynamicsModel& m, const Tensor& x,
                                          const std::vector<int>& labels,
                                          LossKind loss) {
  switch (m.kind) {
    case DynKind::standard: {
      ForwardTrace tr;
      Tensor logits = forward(m.graph, m.params, x, BnMode::frozen(m.stats), &tr);
      auto [l, dlog] = loss_and_grad(loss, logits, labels);
      Tensor dx;
      backward(m.graph, m.params, tr, dlog, nullptr, &dx);
      return {l, std::move(dx)};
    }
    case DynKind::linearized:
    case DynKind::centered: {
      require_parent(m);
      ParamVector dlt = delta(m);
      const BnMode bn = BnMode::frozen(feature_stats(m));
      JvpEval ev = forward_jvp(m.graph, m.parent->params, dlt, x, bn);
      Tensor logits = m.kind == DynKind::linearized ? ev.y + ev.yt : ev.yt;
      auto [l, dlog] = loss_and_grad(loss, logits, labels);
      DualInputGrad d =
          backward_dual(m.graph, m.parent->params, dlt, ev.trace, dlog);
      return {l, m.kind == DynKind::linearized ? d.primal + d.tangent
                                               : std::move(d.tangent)};
    }
    case DynKind::centered_standard: {
      require_parent(m);
      ForwardTrace tr_live, tr_base;
      Tensor live = forward(m.graph, m.params, x, BnMode::frozen(m.stats), &tr_live);
      Tensor base = forward(m.graph, m.parent->params, x,
                            BnMode::frozen(m.parent->bn_stats), &tr_base);
      auto [l, dlog] = loss_and_grad(loss, live - base, labels);
      Tensor dx_live, dx_base;
      backward(m.graph, m.params, tr_live, dlog, nullptr, &dx_live);
      backward(m.graph, m.parent->params, tr_base, dlog, nullptr, &dx_base);
      return {l, dx_live - dx_base};
    }
  }
  throw std::logic_error("loss_input_grad: bad kind");
}

double sgd_step(DynamicsModel& m, const Tensor& x, const std::vector<int>& labels,
                double lr, double momentum, LossKind loss, const PgdConfig* adversary,
                uint64_t adversary_seed) {
  if (lr < 0) throw std::invalid_argument("sgd_step: negative learning rate");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("sgd_step: momentum must be in [0,1)");

  Tensor xb = x;
  if (adversary) xb = pgd_attack(m, x, labels, *adversary, adversary_seed).perturbed;

  const bool train_bn = m.bn_policy == BnPolicy::standard;
  double loss_value = 0;
  ParamVector dp;

  switch (m.kind) {
    case DynKind::standard: {
      ForwardTrace tr;
      BnMode bn = train_bn ? BnMode::train(&m.stats) : BnMode::frozen(m.stats);
      Tensor logits = forward(m.graph, m.params, xb, bn, &tr);
      auto [l, dlog] = loss_and_grad(loss, logits, labels);
      loss_value = l;
      backward(m.graph, m.params, tr, dlog, &dp, nullptr);
      break;
    }
    case DynKind::linearized:
    case DynKind::centered: {
      require_parent(m);
      if (train_bn) {
        // batch-norm ablation: refresh running stats from this batch at the
        // parent parameters, implicitly moving the feature map
        forward(m.graph, m.parent->params, xb, BnMode::train(&m.stats));
      }
      const BnMode bn = BnMode::frozen(feature_stats(m));
      JvpEval ev = forward_jvp(m.graph, m.parent->params, delta(m), xb, bn);
      Tensor logits = m.kind == DynKind::linearized ? ev.y + ev.yt : ev.yt;
      auto [l, dlog] = loss_and_grad(loss, logits, labels);
      loss_value = l;
      backward(m.graph, m.parent->params, ev.trace, dlog, &dp, nullptr);
      break;
    }
    case DynKind::centered_standard: {
      require_parent(m);
      ForwardTrace tr;
      BnMode bn = train_bn ? BnMode::train(&m.stats) : BnMode::frozen(m.stats);
      Tensor live = forward(m.graph, m.params, xb, bn, &tr);
      Tensor base = forward(m.graph, m.parent->params, xb,
                            BnMode::frozen(m.parent->bn_stats));
      auto [l, dlog] = loss_and_grad(loss, live - base, labels);
      loss_value = l;
      backward(m.graph, m.params, tr, dlog, &dp, nullptr);
      break;
    }
  }

  if (!std::isfinite(loss_value)) throw std::runtime_error("sgd_step: non-finite loss");

  if (!m.momentum_init) {
    m.momentum_buf = dp.zeros_like();
    m.momentum_init = true;
  }
  m.momentum_buf *= momentum;
  m.momentum_buf.axpy(-lr, dp);
  m.params += m.momentum_buf;
  return loss_value;
}

double relative_magnitude(const DynamicsModel& m, const Tensor& X) {
  if (m.kind != DynKind::linearized)
    throw std::invalid_argument("relative_magnitude: needs a linearized model");
  require_parent(m);
  JvpEval ev =
      forward_jvp(m.graph, m.parent->params, delta(m), X, BnMode::frozen(feature_stats(m)));
  const int B = ev.y.dim(0), C = ev.y.dim(1);
  double sum = 0;
  int used = 0;
  for (int b = 0; b < B; ++b) {
    double f0 = 0, df = 0;
    for (int c = 0; c < C; ++c) {
      const double y = ev.y[static_cast<int64_t>(b) * C + c];
      const double yt = ev.yt[static_cast<int64_t>(b) * C + c];
      f0 += y * y;
      df += yt * yt;
    }
    if (f0 == 0) continue;  // skipped and counted
    sum += df / f0;
    ++used;
  }
  if (used == 0)
    throw std::runtime_error("relative_magnitude: all samples have zero parent output");
  return sum / used;
}

}  // namespace ntk
