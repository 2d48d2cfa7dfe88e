#include "ntk/models.hpp"

#include <fstream>

#include "json.hpp"
#include "ntk/rng.hpp"

namespace ntk {

using nlohmann::json;

ModelGraph build_graph(const Architecture& arch, Precision compute) {
  ModelGraph g;
  g.class_count = arch.class_count;
  g.input_shape = arch.input_shape;
  g.compute = compute;
  if (arch.class_count < 2) throw std::invalid_argument("architecture: class_count < 2");
  if (arch.kind == ArchKind::mlp) {
    int in = 1;
    for (int d : arch.input_shape) in *= d;
    if (arch.input_shape.size() != 1) g.layers.push_back(LayerSpec::flatten_layer());
    for (int w : arch.plan) {
      g.layers.push_back(LayerSpec::dense_layer(in, w));
      g.layers.push_back(LayerSpec::relu_layer());
      in = w;
    }
    g.layers.push_back(LayerSpec::dense_layer(in, arch.class_count));
  } else {
    if (arch.input_shape.size() != 3)
      throw std::invalid_argument("small_cnn: needs CHW input");
    int in_ch = arch.input_shape[0];
    for (int ch : arch.plan) {
      g.layers.push_back(LayerSpec::conv_layer(in_ch, ch, 3, Padding::same));
      g.layers.push_back(LayerSpec::batchnorm_layer(ch));
      g.layers.push_back(LayerSpec::relu_layer());
      in_ch = ch;
    }
    g.layers.push_back(LayerSpec::gap_layer());
    g.layers.push_back(LayerSpec::dense_layer(in_ch, arch.class_count));
  }
  infer_shapes(g);  // validates against the supported layer set
  return g;
}

std::pair<ParamVector, BnStats> init_params(const Architecture& arch, uint64_t seed) {
  ModelGraph g = build_graph(arch);
  ParamVector p = zero_params(g);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& s : p.segments) {
    const LayerSpec& l = g.layers[static_cast<size_t>(s.layer)];
    switch (s.role) {
      case ParamRole::weight: {
        const int fan_in = l.kind == LayerKind::dense
                               ? l.in_features
                               : l.in_channels * l.ksize * l.ksize;
        const double std_dev = std::sqrt(2.0 / fan_in);
        for (double& v : s.value.data) v = std_dev * normal(rng);
        break;
      }
      case ParamRole::bias:
        break;  // zeros
      case ParamRole::gamma:
        std::fill(s.value.data.begin(), s.value.data.end(), 1.0);
        break;
      case ParamRole::beta:
        break;
    }
  }
  return {std::move(p), default_bn_stats(g)};
}

static json arch_to_json(const Architecture& a) {
  return json{{"kind", a.kind == ArchKind::mlp ? "mlp" : "small_cnn"},
              {"plan", a.plan},
              {"input_shape", a.input_shape},
              {"class_count", a.class_count}};
}

static Architecture arch_from_json(const json& j) {
  Architecture a;
  const std::string k = j.at("kind");
  if (k == "mlp")
    a.kind = ArchKind::mlp;
  else if (k == "small_cnn")
    a.kind = ArchKind::small_cnn;
  else
    throw std::invalid_argument("unknown architecture kind: " + k);
  a.plan = j.at("plan").get<std::vector<int>>();
  a.input_shape = j.at("input_shape").get<std::vector<int>>();
  a.class_count = j.at("class_count");
  return a;
}

static void write_doubles(std::ostream& os, const double* p, size_t n) {
  static_assert(sizeof(double) == 8);
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

static void read_doubles(std::istream& is, double* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
  if (!is) throw std::runtime_error("snapshot: truncated payload");
}

void save_snapshot(const std::filesystem::path& file, const ModelSnapshot& snap,
                   const std::string& config_hash) {
  json bn_layers = json::array();
  for (const auto& [layer, st] : snap.bn_stats)
    bn_layers.push_back({{"layer", layer}, {"channels", st.mean.size()}});
  json header = {{"magic", "ntksnap"},
                 {"version", 1},
                 {"endianness", "little"},
                 {"arch", arch_to_json(snap.arch)},
                 {"spawn_epoch", snap.spawn_epoch},
                 {"tag", snap.tag},
                 {"config_hash", config_hash},
                 {"param_count", snap.params.total_len()},
                 {"bn_layers", bn_layers}};
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("snapshot: cannot open " + file.string());
  os << header.dump() << '\n';
  std::vector<double> flat = snap.params.flatten();
  write_doubles(os, flat.data(), flat.size());
  for (const auto& [layer, st] : snap.bn_stats) {
    write_doubles(os, st.mean.data(), st.mean.size());
    write_doubles(os, st.var.data(), st.var.size());
  }
  if (!os) throw std::runtime_error("snapshot: write failed for " + file.string());
}

ModelSnapshot load_snapshot(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("snapshot: cannot open " + file.string());
  std::string line;
  std::getline(is, line);
  json header = json::parse(line);
  if (header.at("magic") != "ntksnap") throw std::runtime_error("snapshot: bad magic");
  ModelSnapshot snap;
  snap.arch = arch_from_json(header.at("arch"));
  snap.spawn_epoch = header.at("spawn_epoch");
  snap.tag = header.at("tag");
  ModelGraph g = build_graph(snap.arch);
  snap.params = zero_params(g);
  if (snap.params.total_len() != header.at("param_count").get<int64_t>())
    throw std::runtime_error("snapshot: architecture mismatch on restore");
  std::vector<double> flat(static_cast<size_t>(snap.params.total_len()));
  read_doubles(is, flat.data(), flat.size());
  snap.params.unflatten(flat);
  snap.bn_stats = default_bn_stats(g);
  for (const auto& bl : header.at("bn_layers")) {
    const int layer = bl.at("layer");
    auto it = snap.bn_stats.find(layer);
    if (it == snap.bn_stats.end() ||
        it->second.mean.size() != bl.at("channels").get<size_t>())
      throw std::runtime_error("snapshot: batchnorm layout mismatch on restore");
    read_doubles(is, it->second.mean.data(), it->second.mean.size());
    read_doubles(is, it->second.var.data(), it->second.var.size());
  }
  for (const auto& [layer, st] : snap.bn_stats)
    for (double v : st.var)
      if (v <= 0) throw std::runtime_error("snapshot: non-positive bn variance");
  return snap;
}

int predict_class(const double* logits, int c_count) {
  if (c_count < 1) throw std::invalid_argument("predict_class: empty logits");
  int best = 0;
  for (int c = 1; c < c_count; ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

std::vector<int> predict_classes(const Tensor& logits) {
  if (logits.rank() != 2)
    throw std::invalid_argument("predict_classes: logits must be [batch, C]");
  const int B = logits.dim(0), C = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b)
    out[static_cast<size_t>(b)] =
        predict_class(logits.data.data() + static_cast<size_t>(b) * C, C);
  return out;
}

}  // namespace ntk
