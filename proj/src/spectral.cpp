#include "ntk/spectral.hpp"

#include <fstream>

namespace ntk {

std::vector<EigvecFeature> extract_eigvec_features(const ModelSnapshot& snap,
                                                   const Tensor& samples,
                                                   const ClassKernel& kernel,
                                                   int class_index, int top_k) {
  const int N = kernel.N;
  if (samples.dim(0) != N)
    throw std::invalid_argument("eigvec: sample batch does not match kernel");
  if (class_index < 0 || class_index >= kernel.C)
    throw std::invalid_argument("eigvec: class index out of range");
  if (top_k < 1 || top_k > N)
    throw std::invalid_argument("eigvec: top_k out of range");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kernel.diag(class_index));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigvec: eigensolver failed");

  ModelGraph g = build_graph(snap.arch, Precision::f64);
  const BnMode bn = BnMode::frozen(snap.bn_stats);
  ForwardTrace tr;
  forward(g, snap.params, samples, bn, &tr);

  std::vector<EigvecFeature> out;
  out.reserve(static_cast<size_t>(top_k));
  const int C = g.class_count;
  for (int i = 0; i < top_k; ++i) {
    EigvecFeature f;
    f.index = i;
    f.class_index = class_index;
    // Eigen sorts ascending; take from the top
    const Eigen::Index col = N - 1 - i;
    f.lambda = es.eigenvalues()[col];
    f.u = es.eigenvectors().col(col);
    // v = J^T u: one batch reverse pass, cotangent row j = u[j] * e_c
    Tensor cot({N, C});
    for (int j = 0; j < N; ++j)
      cot[static_cast<int64_t>(j) * C + class_index] = f.u[j];
    backward(g, snap.params, tr, cot, &f.v, nullptr);
    const double n = norm(f.v);
    if (n == 0) throw std::runtime_error("eigvec: zero parameter-space vector");
    f.v *= 1.0 / n;
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<EigvecFeature> extract_eigvec_features(const ModelSnapshot& snap,
                                                   const Tensor& samples,
                                                   int class_index, int top_k) {
  ClassKernel k = compute_ntk(snap, samples, KernelScope::diagonal_only);
  return extract_eigvec_features(snap, samples, k, class_index, top_k);
}

namespace {

// cos(v, phi(x)) with v unit, phi(x) = grad_theta(f^c(x)); also emits the
// exact input gradient of the cosine via two dual reverse passes:
//   grad_x cos = grad_x(v^T phi)/|phi| - cos/|phi|^2 * grad_x(phi^T phi)/2
// where grad_x(w^T phi) for fixed w is the tangent output of a dual pass
// with parameter tangent w (mixed-partial symmetry).
struct CosEval {
  double cosine = 0;
  bool zero_norm = false;
  Tensor grad_x;
};

CosEval eval_cosine(const ModelGraph& g, const ModelSnapshot& snap, const BnMode& bn,
                    const EigvecFeature& feat, const Tensor& x, bool with_grad) {
  const int C = g.class_count;
  Tensor cot({1, C});
  cot[feat.class_index] = 1.0;

  ForwardTrace tr;
  forward(g, snap.params, x, bn, &tr);
  ParamVector phi;
  backward(g, snap.params, tr, cot, &phi, nullptr);

  CosEval out;
  const double nphi = norm(phi);
  if (nphi == 0) {
    out.zero_norm = true;
    return out;
  }
  out.cosine = dot(feat.v, phi) / nphi;
  if (!with_grad) return out;

  DualInputGrad dv = backward_dual(g, snap.params, feat.v, tr, cot);
  DualInputGrad dp = backward_dual(g, snap.params, phi, tr, cot);
  out.grad_x = dv.tangent * (1.0 / nphi) - dp.tangent * (out.cosine / (nphi * nphi));
  return out;
}

}  // namespace

VizResult visualize_eigvec(const ModelSnapshot& snap, const EigvecFeature& feat,
                           const VizConfig& cfg) {
  cfg.validate();
  ModelGraph g = build_graph(snap.arch, Precision::f64);
  const BnMode bn = BnMode::frozen(snap.bn_stats);

  std::vector<int> shape = g.input_shape;
  shape.insert(shape.begin(), 1);
  Tensor x = Tensor::full(shape, cfg.init_value);

  VizResult res;
  {
    CosEval e0 = eval_cosine(g, snap, bn, feat, x, false);
    res.initial_cosine = e0.zero_norm ? 0.0 : e0.cosine;
  }

  const double sgn = cfg.maximize ? 1.0 : -1.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    CosEval e = eval_cosine(g, snap, bn, feat, x, true);
    if (e.zero_norm) {
      res.zero_norm_warning = true;
      break;
    }
    for (int64_t i = 0; i < x.size(); ++i) {
      const double gi = e.grad_x[i];
      x[i] = std::clamp(x[i] + sgn * cfg.alpha * (gi > 0 ? 1.0 : gi < 0 ? -1.0 : 0.0),
                        0.0, 1.0);
    }
  }

  CosEval ef = eval_cosine(g, snap, bn, feat, x, false);
  res.cosine = ef.zero_norm ? 0.0 : ef.cosine;
  if (ef.zero_norm) res.zero_norm_warning = true;
  res.image = x.reshaped(g.input_shape);
  return res;
}

void write_image(const std::filesystem::path& file, const Tensor& image) {
  int ch = 1, h = 0, w = 0;
  if (image.rank() == 3) {
    ch = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 1) {  // flat inputs render as a single pixel row
    h = 1;
    w = image.dim(0);
  } else {
    throw std::invalid_argument("write_image: need [W], [H,W] or [C,H,W]");
  }
  if (ch != 1 && ch != 3)
    throw std::invalid_argument("write_image: 1 or 3 channels only");

  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("write_image: cannot open " + file.string());
  os << (ch == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < ch; ++c) {
      const double v = std::clamp(image[c * plane + p], 0.0, 1.0);
      const unsigned char b = static_cast<unsigned char>(std::lround(255.0 * v));
      os.write(reinterpret_cast<const char*>(&b), 1);
    }
  if (!os) throw std::runtime_error("write_image: write failed");
}

std::string viz_file_name(int class_index, int eig_index, bool maximize,
                          int channels) {
  return "eig" + std::to_string(class_index) + "_" + std::to_string(eig_index) +
         "_" + (maximize ? "max" : "min") + (channels == 3 ? ".ppm" : ".pgm");
}

}  // namespace ntk
