#include "ntk/graph.hpp"

namespace ntk {

const char* param_role_name(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::gamma: return "gamma";
    case ParamRole::beta: return "beta";
  }
  return "?";
}

std::vector<std::vector<int>> infer_shapes(const ModelGraph& g) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur = g.input_shape;
  if (cur.empty()) throw std::invalid_argument("graph: empty input shape");
  for (size_t li = 0; li < g.layers.size(); ++li) {
    const LayerSpec& l = g.layers[li];
    switch (l.kind) {
      case LayerKind::dense: {
        if (cur.size() != 1 || cur[0] != l.in_features)
          throw std::invalid_argument("graph: dense input mismatch at layer " +
                                      std::to_string(li));
        cur = {l.out_features};
        break;
      }
      case LayerKind::conv2d: {
        if (cur.size() != 3 || cur[0] != l.in_channels)
          throw std::invalid_argument("graph: conv input mismatch at layer " +
                                      std::to_string(li));
        if (l.ksize < 1) throw std::invalid_argument("graph: bad conv kernel");
        if (l.padding == Padding::same && l.ksize % 2 == 0)
          throw std::invalid_argument("graph: same padding needs odd kernel");
        int h = cur[1], w = cur[2];
        if (l.padding == Padding::valid) {
          h = h - l.ksize + 1;
          w = w - l.ksize + 1;
          if (h < 1 || w < 1) throw std::invalid_argument("graph: conv output empty");
        }
        cur = {l.out_channels, h, w};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::batchnorm: {
        int ch = cur.size() == 3 ? cur[0] : cur.size() == 1 ? cur[0] : -1;
        if (ch != l.channels)
          throw std::invalid_argument("graph: batchnorm channel mismatch at layer " +
                                      std::to_string(li));
        break;
      }
      case LayerKind::global_avg_pool: {
        if (cur.size() != 3)
          throw std::invalid_argument("graph: global_avg_pool needs CHW input");
        cur = {cur[0]};
        break;
      }
      case LayerKind::flatten: {
        int n = 1;
        for (int d : cur) n *= d;
        cur = {n};
        break;
      }
    }
    out.push_back(cur);
  }
  if (cur.size() != 1 || cur[0] != g.class_count)
    throw std::invalid_argument("graph: final layer does not produce class logits");
  return out;
}

ParamVector zero_params(const ModelGraph& g) {
  infer_shapes(g);  // validates
  ParamVector p;
  for (size_t li = 0; li < g.layers.size(); ++li) {
    const LayerSpec& l = g.layers[li];
    int layer = static_cast<int>(li);
    switch (l.kind) {
      case LayerKind::dense:
        p.segments.push_back({layer, ParamRole::weight,
                              Tensor::zeros({l.out_features, l.in_features})});
        if (l.has_bias)
          p.segments.push_back({layer, ParamRole::bias, Tensor::zeros({l.out_features})});
        break;
      case LayerKind::conv2d:
        p.segments.push_back(
            {layer, ParamRole::weight,
             Tensor::zeros({l.out_channels, l.in_channels, l.ksize, l.ksize})});
        if (l.has_bias)
          p.segments.push_back({layer, ParamRole::bias, Tensor::zeros({l.out_channels})});
        break;
      case LayerKind::batchnorm:
        p.segments.push_back({layer, ParamRole::gamma, Tensor::zeros({l.channels})});
        p.segments.push_back({layer, ParamRole::beta, Tensor::zeros({l.channels})});
        break;
      default:
        break;
    }
  }
  return p;
}

BnStats default_bn_stats(const ModelGraph& g) {
  BnStats s;
  for (size_t li = 0; li < g.layers.size(); ++li) {
    const LayerSpec& l = g.layers[li];
    if (l.kind != LayerKind::batchnorm) continue;
    BnLayerStats st;
    st.mean.assign(static_cast<size_t>(l.channels), 0.0);
    st.var.assign(static_cast<size_t>(l.channels), 1.0);
    s[static_cast<int>(li)] = st;
  }
  return s;
}

}  // namespace ntk
