#include "ntk/diff.hpp"

#include <algorithm>
#include <cstring>

namespace ntk {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// dst = a*b (or += with accum). In f32 mode the product is computed in
// single precision; this is the only place training precision enters.
template <class Dst, class A, class B>
void mm(Precision p, Dst dst, const A& a, const B& b, bool accum) {
  if (p == Precision::f64) {
    if (accum)
      dst.noalias() += a * b;
    else
      dst.noalias() = a * b;
  } else {
    RowMatF r = a.template cast<float>() * b.template cast<float>();
    if (accum)
      dst += r.template cast<double>();
    else
      dst = r.template cast<double>();
  }
}

// cols is (C*k*k) x (Ho*Wo), rows contiguous.
void im2col(const double* x, int C, int H, int W, int k, int pad, int Ho, int Wo,
            RowMat& cols) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        int r = (c * k + ki) * k + kj;
        double* dst = cols.data() + static_cast<size_t>(r) * cols.cols();
        for (int i = 0; i < Ho; ++i) {
          int xi = i + ki - pad;
          double* drow = dst + static_cast<size_t>(i) * Wo;
          if (xi < 0 || xi >= H) {
            std::fill(drow, drow + Wo, 0.0);
            continue;
          }
          const double* xrow = x + (static_cast<size_t>(c) * H + xi) * W;
          for (int j = 0; j < Wo; ++j) {
            int xj = j + kj - pad;
            drow[j] = (xj < 0 || xj >= W) ? 0.0 : xrow[xj];
          }
        }
      }
}

void col2im_accum(const RowMat& cols, int C, int H, int W, int k, int pad, int Ho,
                  int Wo, double* dx) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        int r = (c * k + ki) * k + kj;
        const double* src = cols.data() + static_cast<size_t>(r) * cols.cols();
        for (int i = 0; i < Ho; ++i) {
          int xi = i + ki - pad;
          if (xi < 0 || xi >= H) continue;
          double* xrow = dx + (static_cast<size_t>(c) * H + xi) * W;
          const double* srow = src + static_cast<size_t>(i) * Wo;
          for (int j = 0; j < Wo; ++j) {
            int xj = j + kj - pad;
            if (xj >= 0 && xj < W) xrow[xj] += srow[j];
          }
        }
      }
}

struct ConvDims {
  int B, Cin, H, W, Cout, k, pad, Ho, Wo;
};

ConvDims conv_dims(const LayerSpec& l, const Tensor& x) {
  ConvDims d;
  d.B = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = l.out_channels;
  d.k = l.ksize;
  d.pad = l.padding == Padding::same ? (l.ksize - 1) / 2 : 0;
  d.Ho = d.H - d.k + 1 + 2 * d.pad;
  d.Wo = d.W - d.k + 1 + 2 * d.pad;
  return d;
}

// Views input as [B, C, S] with S the spatial extent (1 for rank-2 input).
struct BnDims {
  int B, C, S;
};
BnDims bn_dims(const Tensor& x) {
  if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
  throw std::invalid_argument("batchnorm: expects rank-2 or rank-4 input");
}

// One layer's dual forward. Tangent channel is active iff xt != nullptr;
// then ptang must be non-null and batch-norm must run on fixed statistics.
Tensor layer_forward(const ModelGraph& g, const LayerSpec& l, int li,
                     const ParamVector& params, const ParamVector* ptang,
                     const Tensor& x, const Tensor* xt, const BnMode& bn,
                     LayerTrace& trace, Tensor* yt) {
  const Precision p = g.compute;
  switch (l.kind) {
    case LayerKind::dense: {
      if (x.rank() != 2) throw std::invalid_argument("dense: expects rank-2 input");
      const Tensor& W = params.at(li, ParamRole::weight);
      const int B = x.dim(0);
      Tensor y({B, l.out_features});
      CMap xm(x.data.data(), B, l.in_features);
      CMap wm(W.data.data(), l.out_features, l.in_features);
      mm(p, MMap(y.data.data(), B, l.out_features), xm, wm.transpose(), false);
      if (l.has_bias) {
        const Tensor& b = params.at(li, ParamRole::bias);
        MMap(y.data.data(), B, l.out_features).rowwise() +=
            Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), l.out_features);
      }
      if (yt) {
        *yt = Tensor({B, l.out_features});
        MMap ytm(yt->data.data(), B, l.out_features);
        mm(p, ytm, CMap(xt->data.data(), B, l.in_features), wm.transpose(), false);
        const Tensor& Wt = ptang->at(li, ParamRole::weight);
        mm(p, ytm, xm, CMap(Wt.data.data(), l.out_features, l.in_features).transpose(),
           true);
        if (l.has_bias) {
          const Tensor& bt = ptang->at(li, ParamRole::bias);
          ytm.rowwise() +=
              Eigen::Map<const Eigen::RowVectorXd>(bt.data.data(), l.out_features);
        }
      }
      return y;
    }
    case LayerKind::conv2d: {
      if (x.rank() != 4) throw std::invalid_argument("conv2d: expects rank-4 input");
      ConvDims d = conv_dims(l, x);
      const Tensor& W = params.at(li, ParamRole::weight);
      const int K = d.Cin * d.k * d.k;
      const int M = d.Ho * d.Wo;
      Tensor y({d.B, d.Cout, d.Ho, d.Wo});
      if (yt) *yt = Tensor({d.B, d.Cout, d.Ho, d.Wo});
      RowMat cols(K, M), colst;
      if (yt) colst.resize(K, M);
      CMap wm(W.data.data(), d.Cout, K);
      for (int b = 0; b < d.B; ++b) {
        const double* xb = x.data.data() + static_cast<size_t>(b) * d.Cin * d.H * d.W;
        im2col(xb, d.Cin, d.H, d.W, d.k, d.pad, d.Ho, d.Wo, cols);
        MMap yb(y.data.data() + static_cast<size_t>(b) * d.Cout * M, d.Cout, M);
        mm(p, yb, wm, cols, false);
        if (l.has_bias) {
          const Tensor& bias = params.at(li, ParamRole::bias);
          yb.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data.data(), d.Cout);
        }
        if (yt) {
          const double* xtb =
              xt->data.data() + static_cast<size_t>(b) * d.Cin * d.H * d.W;
          im2col(xtb, d.Cin, d.H, d.W, d.k, d.pad, d.Ho, d.Wo, colst);
          MMap ytb(yt->data.data() + static_cast<size_t>(b) * d.Cout * M, d.Cout, M);
          mm(p, ytb, wm, colst, false);
          const Tensor& Wt = ptang->at(li, ParamRole::weight);
          mm(p, ytb, CMap(Wt.data.data(), d.Cout, K), cols, true);
          if (l.has_bias) {
            const Tensor& bt = ptang->at(li, ParamRole::bias);
            ytb.colwise() += Eigen::Map<const Eigen::VectorXd>(bt.data.data(), d.Cout);
          }
        }
      }
      return y;
    }
    case LayerKind::relu: {
      Tensor y = x;
      for (double& v : y.data) v = v > 0 ? v : 0.0;
      if (yt) {
        *yt = *xt;
        for (int64_t i = 0; i < y.size(); ++i)
          if (x[i] <= 0) (*yt)[i] = 0.0;
      }
      return y;
    }
    case LayerKind::batchnorm: {
      BnDims d = bn_dims(x);
      const Tensor& gamma = params.at(li, ParamRole::gamma);
      const Tensor& beta = params.at(li, ParamRole::beta);
      std::vector<double> mean(static_cast<size_t>(d.C)), var(static_cast<size_t>(d.C));
      if (bn.kind == BnMode::Kind::train) {
        if (yt)
          throw std::invalid_argument(
              "jvp: batch-statistics batchnorm is not supported; freeze stats");
        const double inv_m = 1.0 / (static_cast<double>(d.B) * d.S);
        for (int c = 0; c < d.C; ++c) {
          double s = 0, ss = 0;
          for (int b = 0; b < d.B; ++b) {
            const double* xp = x.data.data() + (static_cast<size_t>(b) * d.C + c) * d.S;
            for (int s2 = 0; s2 < d.S; ++s2) {
              s += xp[s2];
              ss += xp[s2] * xp[s2];
            }
          }
          mean[c] = s * inv_m;
          var[c] = std::max(ss * inv_m - mean[c] * mean[c], 0.0);
        }
        if (bn.running_update) {
          BnLayerStats& rs = (*bn.running_update)[li];
          if (rs.mean.empty()) {
            rs.mean.assign(static_cast<size_t>(d.C), 0.0);
            rs.var.assign(static_cast<size_t>(d.C), 1.0);
          }
          for (int c = 0; c < d.C; ++c) {
            rs.mean[c] = bn.momentum * rs.mean[c] + (1 - bn.momentum) * mean[c];
            rs.var[c] = bn.momentum * rs.var[c] + (1 - bn.momentum) * var[c];
          }
        }
        trace.bn_batch_stats = true;
      } else {
        if (!bn.stats) throw std::invalid_argument("batchnorm: frozen mode needs stats");
        auto it = bn.stats->find(li);
        if (it == bn.stats->end())
          throw std::invalid_argument("batchnorm: missing frozen stats for layer");
        if (static_cast<int>(it->second.mean.size()) != d.C)
          throw std::invalid_argument("batchnorm: stats channel mismatch");
        mean = it->second.mean;
        var = it->second.var;
        for (double v : var)
          if (v <= 0) throw std::invalid_argument("batchnorm: non-positive variance");
      }
      trace.mean = mean;
      trace.inv_std.resize(static_cast<size_t>(d.C));
      for (int c = 0; c < d.C; ++c) trace.inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEps);
      Tensor y(x.shape);
      if (yt) *yt = Tensor(x.shape);
      for (int b = 0; b < d.B; ++b)
        for (int c = 0; c < d.C; ++c) {
          const size_t off = (static_cast<size_t>(b) * d.C + c) * d.S;
          const double sc = gamma[c] * trace.inv_std[c];
          for (int s2 = 0; s2 < d.S; ++s2)
            y.data[off + s2] = sc * (x.data[off + s2] - mean[c]) + beta[c];
          if (yt) {
            const Tensor& gt = ptang->at(li, ParamRole::gamma);
            const Tensor& bt = ptang->at(li, ParamRole::beta);
            for (int s2 = 0; s2 < d.S; ++s2) {
              const double xhat = (x.data[off + s2] - mean[c]) * trace.inv_std[c];
              yt->data[off + s2] =
                  sc * xt->data[off + s2] + gt[c] * xhat + bt[c];
            }
          }
        }
      return y;
    }
    case LayerKind::global_avg_pool: {
      if (x.rank() != 4)
        throw std::invalid_argument("global_avg_pool: expects rank-4 input");
      const int B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
      Tensor y({B, C});
      if (yt) *yt = Tensor({B, C});
      const double inv = 1.0 / S;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const size_t off = (static_cast<size_t>(b) * C + c) * S;
          double s = 0, st = 0;
          for (int i = 0; i < S; ++i) {
            s += x.data[off + i];
            if (yt) st += xt->data[off + i];
          }
          y.data[static_cast<size_t>(b) * C + c] = s * inv;
          if (yt) yt->data[static_cast<size_t>(b) * C + c] = st * inv;
        }
      return y;
    }
    case LayerKind::flatten: {
      int n = 1;
      for (int i = 1; i < x.rank(); ++i) n *= x.dim(i);
      Tensor y = x.reshaped({x.dim(0), n});
      if (yt) *yt = xt->reshaped({x.dim(0), n});
      return y;
    }
  }
  throw std::logic_error("unknown layer kind");
}

struct DualTrace {
  ForwardTrace primal;
  std::vector<Tensor> xt;  // tangent of each layer input
  Tensor yt;
};

void validate_input(const ModelGraph& g, const Tensor& x) {
  if (x.rank() != static_cast<int>(g.input_shape.size()) + 1)
    throw std::invalid_argument("forward: input rank mismatch");
  for (size_t i = 0; i < g.input_shape.size(); ++i)
    if (x.dim(static_cast<int>(i) + 1) != g.input_shape[i])
      throw std::invalid_argument("forward: input shape mismatch");
}

Tensor dual_forward(const ModelGraph& g, const ParamVector& params,
                    const ParamVector* ptang, const Tensor& x, const Tensor* xt,
                    const BnMode& bn, DualTrace& dt) {
  validate_input(g, x);
  if (ptang) params.require_same_structure(*ptang);
  Tensor cur = x;
  Tensor curt;
  if (ptang) curt = xt ? *xt : Tensor::zeros(x.shape);
  dt.primal.layers.resize(g.layers.size());
  if (ptang) dt.xt.resize(g.layers.size());
  for (size_t li = 0; li < g.layers.size(); ++li) {
    LayerTrace& tr = dt.primal.layers[li];
    tr.x = cur;
    if (ptang) dt.xt[li] = curt;
    Tensor yt;
    Tensor y = layer_forward(g, g.layers[li], static_cast<int>(li), params, ptang, cur,
                             ptang ? &curt : nullptr, bn, tr, ptang ? &yt : nullptr);
    if (g.check_finite) check_finite(y, "layer " + std::to_string(li));
    cur = std::move(y);
    if (ptang) curt = std::move(yt);
  }
  dt.primal.output = cur;
  if (ptang) dt.yt = curt;
  return cur;
}

// Reverse pass. When `dual` the tangent cotangent channel is propagated as
// well (dyt/dxt); parameter gradients always come from the primal channel.
void backward_impl(const ModelGraph& g, const ParamVector& params,
                   const ForwardTrace& ftr, const ParamVector* ptang, const Tensor& dy,
                   const Tensor* dyt, ParamVector* dparams, Tensor* dx, Tensor* dxt) {
  const Precision p = g.compute;
  if (!dy.same_shape(ftr.output))
    throw std::invalid_argument("backward: cotangent shape mismatch");
  Tensor cur = dy;
  Tensor curt;
  const bool dual = dyt != nullptr || dxt != nullptr;
  if (dual) {
    if (!ptang) throw std::invalid_argument("backward: dual pass needs param tangent");
    curt = dyt ? *dyt : Tensor::zeros(dy.shape);
  }
  if (dparams) *dparams = zero_params(g);
  for (int li = static_cast<int>(g.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = g.layers[static_cast<size_t>(li)];
    const LayerTrace& tr = ftr.layers[static_cast<size_t>(li)];
    const Tensor& x = tr.x;
    Tensor nxt, nxtt;
    switch (l.kind) {
      case LayerKind::dense: {
        const Tensor& W = params.at(li, ParamRole::weight);
        const int B = x.dim(0);
        CMap wm(W.data.data(), l.out_features, l.in_features);
        CMap dym(cur.data.data(), B, l.out_features);
        nxt = Tensor({B, l.in_features});
        mm(p, MMap(nxt.data.data(), B, l.in_features), dym, wm, false);
        if (dual) {
          nxtt = Tensor({B, l.in_features});
          MMap nm(nxtt.data.data(), B, l.in_features);
          mm(p, nm, CMap(curt.data.data(), B, l.out_features), wm, false);
          const Tensor& Wt = ptang->at(li, ParamRole::weight);
          mm(p, nm, dym, CMap(Wt.data.data(), l.out_features, l.in_features), true);
        }
        if (dparams) {
          Tensor* dW = dparams->find(li, ParamRole::weight);
          mm(p, MMap(dW->data.data(), l.out_features, l.in_features), dym.transpose(),
             CMap(x.data.data(), B, l.in_features), true);
          if (l.has_bias) {
            Tensor* db = dparams->find(li, ParamRole::bias);
            Eigen::Map<Eigen::RowVectorXd>(db->data.data(), l.out_features) +=
                dym.colwise().sum();
          }
        }
        break;
      }
      case LayerKind::conv2d: {
        ConvDims d = conv_dims(l, x);
        const Tensor& W = params.at(li, ParamRole::weight);
        const int K = d.Cin * d.k * d.k;
        const int M = d.Ho * d.Wo;
        CMap wm(W.data.data(), d.Cout, K);
        nxt = Tensor(x.shape);
        if (dual) nxtt = Tensor(x.shape);
        RowMat cols(K, M), dcols(K, M);
        for (int b = 0; b < d.B; ++b) {
          const size_t xoff = static_cast<size_t>(b) * d.Cin * d.H * d.W;
          const size_t yoff = static_cast<size_t>(b) * d.Cout * M;
          CMap dyb(cur.data.data() + yoff, d.Cout, M);
          mm(p, MMap(dcols.data(), K, M), wm.transpose(), dyb, false);
          col2im_accum(dcols, d.Cin, d.H, d.W, d.k, d.pad, d.Ho, d.Wo,
                       nxt.data.data() + xoff);
          if (dual) {
            CMap dytb(curt.data.data() + yoff, d.Cout, M);
            MMap dcm(dcols.data(), K, M);
            mm(p, dcm, wm.transpose(), dytb, false);
            const Tensor& Wt = ptang->at(li, ParamRole::weight);
            mm(p, dcm, CMap(Wt.data.data(), d.Cout, K).transpose(), dyb, true);
            col2im_accum(dcols, d.Cin, d.H, d.W, d.k, d.pad, d.Ho, d.Wo,
                         nxtt.data.data() + xoff);
          }
          if (dparams) {
            im2col(x.data.data() + xoff, d.Cin, d.H, d.W, d.k, d.pad, d.Ho, d.Wo, cols);
            Tensor* dW = dparams->find(li, ParamRole::weight);
            mm(p, MMap(dW->data.data(), d.Cout, K), dyb, cols.transpose(), true);
            if (l.has_bias) {
              Tensor* db = dparams->find(li, ParamRole::bias);
              Eigen::Map<Eigen::VectorXd>(db->data.data(), d.Cout) +=
                  dyb.rowwise().sum();
            }
          }
        }
        break;
      }
      case LayerKind::relu: {
        nxt = cur;
        if (dual) nxtt = curt;
        for (int64_t i = 0; i < x.size(); ++i)
          if (x[i] <= 0) {
            nxt[i] = 0.0;
            if (dual) nxtt[i] = 0.0;
          }
        break;
      }
      case LayerKind::batchnorm: {
        BnDims d = bn_dims(x);
        const Tensor& gamma = params.at(li, ParamRole::gamma);
        nxt = Tensor(x.shape);
        if (dual) {
          if (tr.bn_batch_stats)
            throw std::invalid_argument("dual backward: batchnorm must be frozen");
          nxtt = Tensor(x.shape);
        }
        const double M = static_cast<double>(d.B) * d.S;
        for (int c = 0; c < d.C; ++c) {
          const double istd = tr.inv_std[static_cast<size_t>(c)];
          const double mu = tr.mean[static_cast<size_t>(c)];
          const double sc = gamma[c] * istd;
          double sum_dy = 0, sum_dy_xhat = 0;
          for (int b = 0; b < d.B; ++b) {
            const size_t off = (static_cast<size_t>(b) * d.C + c) * d.S;
            for (int s2 = 0; s2 < d.S; ++s2) {
              const double dyv = cur.data[off + s2];
              sum_dy += dyv;
              sum_dy_xhat += dyv * (x.data[off + s2] - mu) * istd;
            }
          }
          if (dparams) {
            (*dparams->find(li, ParamRole::gamma))[c] += sum_dy_xhat;
            (*dparams->find(li, ParamRole::beta))[c] += sum_dy;
          }
          if (tr.bn_batch_stats) {
            // dx = istd/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
            const double gsum_dy = gamma[c] * sum_dy;
            const double gsum_dy_xhat = gamma[c] * sum_dy_xhat;
            for (int b = 0; b < d.B; ++b) {
              const size_t off = (static_cast<size_t>(b) * d.C + c) * d.S;
              for (int s2 = 0; s2 < d.S; ++s2) {
                const double xhat = (x.data[off + s2] - mu) * istd;
                nxt.data[off + s2] =
                    istd / M *
                    (M * gamma[c] * cur.data[off + s2] - gsum_dy - xhat * gsum_dy_xhat);
              }
            }
          } else {
            double sct = 0;
            if (dual) sct = ptang->at(li, ParamRole::gamma)[c] * istd;
            for (int b = 0; b < d.B; ++b) {
              const size_t off = (static_cast<size_t>(b) * d.C + c) * d.S;
              for (int s2 = 0; s2 < d.S; ++s2) {
                nxt.data[off + s2] = sc * cur.data[off + s2];
                if (dual)
                  nxtt.data[off + s2] =
                      sc * curt.data[off + s2] + sct * cur.data[off + s2];
              }
            }
          }
        }
        break;
      }
      case LayerKind::global_avg_pool: {
        const int B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
        const double inv = 1.0 / S;
        nxt = Tensor(x.shape);
        if (dual) nxtt = Tensor(x.shape);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(b) * C + c) * S;
            const double g1 = cur.data[static_cast<size_t>(b) * C + c] * inv;
            for (int i = 0; i < S; ++i) nxt.data[off + i] = g1;
            if (dual) {
              const double g2 = curt.data[static_cast<size_t>(b) * C + c] * inv;
              for (int i = 0; i < S; ++i) nxtt.data[off + i] = g2;
            }
          }
        break;
      }
      case LayerKind::flatten: {
        nxt = cur.reshaped(x.shape);
        if (dual) nxtt = curt.reshaped(x.shape);
        break;
      }
    }
    cur = std::move(nxt);
    if (dual) curt = std::move(nxtt);
  }
  if (dx) *dx = cur;
  if (dxt) *dxt = std::move(curt);
}

}  // namespace

Tensor forward(const ModelGraph& g, const ParamVector& params, const Tensor& x,
               const BnMode& bn, ForwardTrace* trace) {
  DualTrace dt;
  Tensor y = dual_forward(g, params, nullptr, x, nullptr, bn, dt);
  if (trace) *trace = std::move(dt.primal);
  return y;
}

void backward(const ModelGraph& g, const ParamVector& params, const ForwardTrace& trace,
              const Tensor& dy, ParamVector* dparams, Tensor* dx) {
  backward_impl(g, params, trace, nullptr, dy, nullptr, dparams, dx, nullptr);
}

ParamVector grad(const ModelGraph& g, const ParamVector& params, const Tensor& x,
                 const Tensor& cotangent, const BnMode& bn) {
  ForwardTrace tr;
  forward(g, params, x, bn, &tr);
  ParamVector dp;
  backward(g, params, tr, cotangent, &dp, nullptr);
  return dp;
}

Tensor input_grad(const ModelGraph& g, const ParamVector& params, const Tensor& x,
                  const Tensor& cotangent, const BnMode& bn) {
  ForwardTrace tr;
  forward(g, params, x, bn, &tr);
  Tensor dx;
  backward(g, params, tr, cotangent, nullptr, &dx);
  return dx;
}

Tensor jvp(const ModelGraph& g, const ParamVector& params, const Tensor& x,
           const ParamVector& tangent, const BnMode& bn) {
  DualTrace dt;
  dual_forward(g, params, &tangent, x, nullptr, bn, dt);
  return dt.yt;
}

JvpEval forward_jvp(const ModelGraph& g, const ParamVector& params,
                    const ParamVector& tangent, const Tensor& x, const BnMode& bn) {
  DualTrace dt;
  Tensor y = dual_forward(g, params, &tangent, x, nullptr, bn, dt);
  JvpEval out;
  out.y = std::move(y);
  out.yt = std::move(dt.yt);
  out.trace = std::move(dt.primal);
  return out;
}

DualInputGrad backward_dual(const ModelGraph& g, const ParamVector& params,
                            const ParamVector& tangent, const ForwardTrace& trace,
                            const Tensor& cot_primal, const Tensor* cot_tangent) {
  DualInputGrad out;
  backward_impl(g, params, trace, &tangent, cot_primal, cot_tangent, nullptr,
                &out.primal, &out.tangent);
  return out;
}

DualInputGrad input_grad_dual(const ModelGraph& g, const ParamVector& params,
                              const ParamVector& param_tangent, const Tensor& x,
                              const BnMode& bn, const Tensor& cot_primal,
                              const Tensor* cot_tangent) {
  JvpEval ev = forward_jvp(g, params, param_tangent, x, bn);
  return backward_dual(g, params, param_tangent, ev.trace, cot_primal, cot_tangent);
}

Eigen::MatrixXd jacobian_explicit(const ModelGraph& g, const ParamVector& params,
                                  const Tensor& x_single, const BnMode& bn,
                                  int64_t param_limit) {
  const int64_t P = params.total_len();
  if (P > param_limit)
    throw std::invalid_argument("jacobian_explicit: parameter count above limit");
  Tensor x = x_single;
  if (x.rank() == static_cast<int>(g.input_shape.size())) {
    std::vector<int> s = {1};
    s.insert(s.end(), x.shape.begin(), x.shape.end());
    x = x.reshaped(s);
  }
  if (x.dim(0) != 1)
    throw std::invalid_argument("jacobian_explicit: expects a single sample");
  ForwardTrace tr;
  forward(g, params, x, bn, &tr);
  const int C = g.class_count;
  Eigen::MatrixXd J(C, P);
  for (int c = 0; c < C; ++c) {
    Tensor cot({1, C});
    cot[c] = 1.0;
    ParamVector dp;
    backward(g, params, tr, cot, &dp, nullptr);
    std::vector<double> flat = dp.flatten();
    J.row(c) = Eigen::Map<const Eigen::VectorXd>(flat.data(), P);
  }
  return J;
}

std::pair<double, Tensor> loss_and_grad(LossKind kind, const Tensor& logits,
                                        const std::vector<int>& labels) {
  if (logits.rank() != 2) throw std::invalid_argument("loss: logits must be [batch, C]");
  const int B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw std::invalid_argument("loss: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C) throw std::invalid_argument("loss: label out of range");
  if (kind == LossKind::mse) {
    Tensor target({B, C});
    for (int b = 0; b < B; ++b) target[static_cast<int64_t>(b) * C + labels[b]] = 1.0;
    return mse_and_grad(logits, target);
  }
  // softmax cross-entropy, mean over the batch
  Tensor dlog(logits.shape);
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    const double* row = logits.data.data() + static_cast<size_t>(b) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double logz = std::log(z) + mx;
    loss += logz - row[labels[b]];
    for (int c = 0; c < C; ++c)
      dlog.data[static_cast<size_t>(b) * C + c] =
          (std::exp(row[c] - logz) - (c == labels[b] ? 1.0 : 0.0)) / B;
  }
  return {loss / B, dlog};
}

std::pair<double, Tensor> mse_and_grad(const Tensor& logits, const Tensor& target) {
  logits.require_same(target);
  const double inv = 1.0 / static_cast<double>(logits.size());
  Tensor dlog(logits.shape);
  double loss = 0;
  for (int64_t i = 0; i < logits.size(); ++i) {
    const double r = logits[i] - target[i];
    loss += r * r;
    dlog[i] = 2.0 * r * inv;
  }
  return {loss * inv, dlog};
}

}  // namespace ntk
