#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ntk/tensor.hpp"

namespace ntk {

enum class Precision { f32, f64 };

enum class LayerKind { dense, conv2d, relu, batchnorm, global_avg_pool, flatten };
enum class Padding { same, valid };

struct LayerSpec {
  LayerKind kind;
  // dense
  int in_features = 0;
  int out_features = 0;
  bool has_bias = true;
  // conv2d
  int in_channels = 0;
  int out_channels = 0;
  int ksize = 0;
  Padding padding = Padding::same;
  // batchnorm
  int channels = 0;

  static LayerSpec dense_layer(int in, int out, bool bias = true) {
    LayerSpec l{LayerKind::dense};
    l.in_features = in;
    l.out_features = out;
    l.has_bias = bias;
    return l;
  }
  static LayerSpec conv_layer(int in_ch, int out_ch, int k, Padding p = Padding::same,
                              bool bias = true) {
    LayerSpec l{LayerKind::conv2d};
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.ksize = k;
    l.padding = p;
    l.has_bias = bias;
    return l;
  }
  static LayerSpec relu_layer() { return LayerSpec{LayerKind::relu}; }
  static LayerSpec batchnorm_layer(int channels) {
    LayerSpec l{LayerKind::batchnorm};
    l.channels = channels;
    return l;
  }
  static LayerSpec gap_layer() { return LayerSpec{LayerKind::global_avg_pool}; }
  static LayerSpec flatten_layer() { return LayerSpec{LayerKind::flatten}; }
};

struct ModelGraph {
  std::vector<int> input_shape;  // per-sample shape, no batch dim
  int class_count = 0;
  std::vector<LayerSpec> layers;
  Precision compute = Precision::f64;
  bool check_finite = false;  // per-layer finiteness asserts (debug)
};

// Per-sample shape after each layer; validates the layer plan.
std::vector<std::vector<int>> infer_shapes(const ModelGraph& g);

enum class ParamRole { weight, bias, gamma, beta };

const char* param_role_name(ParamRole r);

struct ParamSegment {
  int layer = 0;
  ParamRole role = ParamRole::weight;
  Tensor value;
};

// Flat, ordered view of all trainable parameters. Segment order is a
// deterministic function of the architecture: layer index ascending, then
// role in declaration order (weight, bias / gamma, beta).
struct ParamVector {
  std::vector<ParamSegment> segments;

  int64_t total_len() const {
    int64_t n = 0;
    for (const auto& s : segments) n += s.value.size();
    return n;
  }

  bool same_structure(const ParamVector& o) const {
    if (segments.size() != o.segments.size()) return false;
    for (size_t i = 0; i < segments.size(); ++i) {
      if (segments[i].layer != o.segments[i].layer) return false;
      if (segments[i].role != o.segments[i].role) return false;
      if (!segments[i].value.same_shape(o.segments[i].value)) return false;
    }
    return true;
  }

  void require_same_structure(const ParamVector& o) const {
    if (!same_structure(o))
      throw std::invalid_argument("ParamVector: structure mismatch");
  }

  ParamVector zeros_like() const {
    ParamVector z = *this;
    for (auto& s : z.segments) std::fill(s.value.data.begin(), s.value.data.end(), 0.0);
    return z;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_len()));
    for (const auto& s : segments)
      out.insert(out.end(), s.value.data.begin(), s.value.data.end());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (static_cast<int64_t>(flat.size()) != total_len())
      throw std::invalid_argument("ParamVector: flat length mismatch");
    size_t off = 0;
    for (auto& s : segments) {
      std::copy(flat.begin() + static_cast<long>(off),
                flat.begin() + static_cast<long>(off + s.value.data.size()),
                s.value.data.begin());
      off += s.value.data.size();
    }
  }

  ParamVector& operator+=(const ParamVector& o) {
    require_same_structure(o);
    for (size_t i = 0; i < segments.size(); ++i) segments[i].value += o.segments[i].value;
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    require_same_structure(o);
    for (size_t i = 0; i < segments.size(); ++i) segments[i].value -= o.segments[i].value;
    return *this;
  }
  ParamVector& operator*=(double a) {
    for (auto& s : segments) s.value *= a;
    return *this;
  }

  // this += a * o
  void axpy(double a, const ParamVector& o) {
    require_same_structure(o);
    for (size_t i = 0; i < segments.size(); ++i)
      for (size_t j = 0; j < segments[i].value.data.size(); ++j)
        segments[i].value.data[j] += a * o.segments[i].value.data[j];
  }

  const Tensor* find(int layer, ParamRole role) const {
    for (const auto& s : segments)
      if (s.layer == layer && s.role == role) return &s.value;
    return nullptr;
  }
  Tensor* find(int layer, ParamRole role) {
    for (auto& s : segments)
      if (s.layer == layer && s.role == role) return &s.value;
    return nullptr;
  }
  const Tensor& at(int layer, ParamRole role) const {
    const Tensor* t = find(layer, role);
    if (!t) throw std::invalid_argument("ParamVector: missing segment");
    return *t;
  }
};

inline ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
inline ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
inline ParamVector operator*(ParamVector a, double s) { return a *= s; }

inline double dot(const ParamVector& a, const ParamVector& b) {
  a.require_same_structure(b);
  double s = 0;
  for (size_t i = 0; i < a.segments.size(); ++i)
    s += dot(a.segments[i].value, b.segments[i].value);
  return s;
}
inline double norm(const ParamVector& a) { return std::sqrt(dot(a, a)); }

// Zero-valued ParamVector with the structure demanded by the graph.
ParamVector zero_params(const ModelGraph& g);

// Batch-norm running statistics, keyed by layer index. Variance entries
// must stay positive.
struct BnLayerStats {
  std::vector<double> mean;
  std::vector<double> var;
};
using BnStats = std::map<int, BnLayerStats>;

BnStats default_bn_stats(const ModelGraph& g);

}  // namespace ntk
