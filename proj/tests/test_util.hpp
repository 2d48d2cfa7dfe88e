#pragma once

#include <random>

#include "ntk/dynamics.hpp"
#include "ntk/models.hpp"

namespace tutil {

using namespace ntk;

inline void fill_uniform(Tensor& t, std::mt19937_64& rng, double lo = 0.0,
                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
}

inline void fill_normal(ParamVector& p, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& s : p.segments)
    for (auto& v : s.value.data) v = g(rng);
}

inline Architecture small_mlp(int d = 4, std::vector<int> plan = {6}, int classes = 3) {
  Architecture a;
  a.kind = ArchKind::mlp;
  a.plan = std::move(plan);
  a.input_shape = {d};
  a.class_count = classes;
  return a;
}

inline Architecture small_cnn(int ch = 2, int hw = 5, std::vector<int> plan = {3},
                              int classes = 2) {
  Architecture a;
  a.kind = ArchKind::small_cnn;
  a.plan = std::move(plan);
  a.input_shape = {ch, hw, hw};
  a.class_count = classes;
  return a;
}

inline BnStats random_stats(const ModelGraph& g, std::mt19937_64& rng) {
  BnStats st = default_bn_stats(g);
  std::uniform_real_distribution<double> um(-0.3, 0.3), uv(0.5, 1.5);
  for (auto& [layer, s] : st) {
    for (auto& m : s.mean) m = um(rng);
    for (auto& v : s.var) v = uv(rng);
  }
  return st;
}

// Central finite difference of cot^T f with respect to the parameters.
inline ParamVector fd_grad_params(const ModelGraph& g, const ParamVector& params,
                                  const Tensor& x, const Tensor& cot, const BnMode& bn,
                                  double h = 1e-5) {
  ParamVector out = params.zeros_like();
  std::vector<double> flat = params.flatten();
  ParamVector work = params;
  std::vector<double> gflat(flat.size());
  for (size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + h;
    work.unflatten(flat);
    const double up = dot(forward(g, work, x, bn), cot);
    flat[i] = orig - h;
    work.unflatten(flat);
    const double dn = dot(forward(g, work, x, bn), cot);
    flat[i] = orig;
    gflat[i] = (up - dn) / (2 * h);
  }
  work.unflatten(flat);
  out.unflatten(gflat);
  return out;
}

// Central finite difference of cot^T f with respect to the input.
inline Tensor fd_grad_input(const ModelGraph& g, const ParamVector& params,
                            const Tensor& x, const Tensor& cot, const BnMode& bn,
                            double h = 1e-5) {
  Tensor out(x.shape);
  Tensor work = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + h;
    const double up = dot(forward(g, params, work, bn), cot);
    work[i] = orig - h;
    const double dn = dot(forward(g, params, work, bn), cot);
    work[i] = orig;
    out[i] = (up - dn) / (2 * h);
  }
  return out;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double max_rel_err(const Tensor& got, const Tensor& want) {
  got.require_same(want);
  double m = 0;
  for (size_t i = 0; i < got.data.size(); ++i)
    m = std::max(m, rel_err(got.data[i], want.data[i]));
  return m;
}

inline double max_rel_err(const ParamVector& got, const ParamVector& want) {
  got.require_same_structure(want);
  double m = 0;
  for (size_t i = 0; i < got.segments.size(); ++i)
    m = std::max(m, max_rel_err(got.segments[i].value, want.segments[i].value));
  return m;
}

}  // namespace tutil
