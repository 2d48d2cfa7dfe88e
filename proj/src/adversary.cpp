#include "ntk/adversary.hpp"

#include <fstream>

#include "json.hpp"
#include "ntk/rng.hpp"

namespace ntk {

using nlohmann::json;

namespace {

Tensor slice_batch(const Tensor& X, int begin, int end) {
  const int64_t per = X.size() / X.dim(0);
  std::vector<int> shape = X.shape;
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy(X.data.begin() + begin * per, X.data.begin() + end * per, out.data.begin());
  return out;
}

void paste_batch(Tensor& X, const Tensor& part, int begin) {
  const int64_t per = X.size() / X.dim(0);
  std::copy(part.data.begin(), part.data.end(), X.data.begin() + begin * per);
}

}  // namespace

AdversarialBatch pgd_attack(const DynamicsModel& m, const Tensor& x,
                            const std::vector<int>& labels, const PgdConfig& cfg,
                            uint64_t seed, const std::string& tag) {
  cfg.validate();
  if (x.dim(0) != static_cast<int>(labels.size()))
    throw std::invalid_argument("pgd: label count mismatch");
  for (double v : x.data)
    if (v < cfg.clip_lo - 1e-12 || v > cfg.clip_hi + 1e-12)
      throw std::invalid_argument("pgd: input outside clip range");

  const double eps = cfg.epsilon;
  const double alpha = cfg.step_size();

  Tensor adv = x;
  if (cfg.random_init) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-eps, eps);
    for (int64_t i = 0; i < adv.size(); ++i)
      adv[i] = std::clamp(adv[i] + u(rng), cfg.clip_lo, cfg.clip_hi);
  }

  const int B = x.dim(0);
  const int chunk = std::max(1, cfg.chunk);
  for (int begin = 0; begin < B; begin += chunk) {
    const int end = std::min(begin + chunk, B);
    Tensor xc = slice_batch(x, begin, end);
    Tensor ac = slice_batch(adv, begin, end);
    std::vector<int> lc(labels.begin() + begin, labels.begin() + end);
    for (int it = 0; it < cfg.steps; ++it) {
      auto [loss, g] = loss_input_grad(m, ac, lc, LossKind::cross_entropy);
      if (!all_finite(g)) throw std::runtime_error("pgd: non-finite gradient");
      for (int64_t i = 0; i < ac.size(); ++i) {
        double v = ac[i] + alpha * (g[i] > 0 ? 1.0 : g[i] < 0 ? -1.0 : 0.0);
        v = std::clamp(v, xc[i] - eps, xc[i] + eps);
        ac[i] = std::clamp(v, cfg.clip_lo, cfg.clip_hi);
      }
    }
    paste_batch(adv, ac, begin);
  }

  AdversarialBatch out;
  out.originals = x;
  out.perturbed = std::move(adv);
  out.labels = labels;
  out.generator_tag = tag.empty() ? dyn_kind_name(m.kind) : tag;
  return out;
}

double benign_accuracy(const DynamicsModel& m, const Tensor& X,
                       const std::vector<int>& labels) {
  if (X.dim(0) == 0 || labels.empty())
    throw std::invalid_argument("accuracy: empty dataset");
  const int B = X.dim(0);
  int correct = 0;
  const int chunk = 256;
  for (int begin = 0; begin < B; begin += chunk) {
    const int end = std::min(begin + chunk, B);
    Tensor logits = predict(m, slice_batch(X, begin, end));
    std::vector<int> pred = predict_classes(logits);
    for (int i = 0; i < end - begin; ++i)
      if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(begin + i)])
        ++correct;
  }
  return static_cast<double>(correct) / B;
}

double adversarial_accuracy(const DynamicsModel& m, const Tensor& X,
                            const std::vector<int>& labels, const PgdConfig& cfg,
                            uint64_t seed) {
  AdversarialBatch b = pgd_attack(m, X, labels, cfg, seed);
  return benign_accuracy(m, b.perturbed, labels);
}

void save_adv_batch(const std::filesystem::path& file, const AdversarialBatch& batch,
                    const std::string& config_hash) {
  json header = {{"magic", "ntkadvb"},
                 {"version", 1},
                 {"endianness", "little"},
                 {"shape", batch.originals.shape},
                 {"labels", batch.labels},
                 {"generator_tag", batch.generator_tag},
                 {"config_hash", config_hash}};
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("adv batch: cannot open " + file.string());
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(batch.originals.data.data()),
           static_cast<std::streamsize>(batch.originals.data.size() * 8));
  os.write(reinterpret_cast<const char*>(batch.perturbed.data.data()),
           static_cast<std::streamsize>(batch.perturbed.data.size() * 8));
  if (!os) throw std::runtime_error("adv batch: write failed");
}

AdversarialBatch load_adv_batch(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("adv batch: cannot open " + file.string());
  std::string line;
  std::getline(is, line);
  json header = json::parse(line);
  if (header.at("magic") != "ntkadvb") throw std::runtime_error("adv batch: bad magic");
  AdversarialBatch b;
  std::vector<int> shape = header.at("shape").get<std::vector<int>>();
  b.originals = Tensor(shape);
  b.perturbed = Tensor(shape);
  b.labels = header.at("labels").get<std::vector<int>>();
  b.generator_tag = header.at("generator_tag");
  is.read(reinterpret_cast<char*>(b.originals.data.data()),
          static_cast<std::streamsize>(b.originals.data.size() * 8));
  is.read(reinterpret_cast<char*>(b.perturbed.data.data()),
          static_cast<std::streamsize>(b.perturbed.data.size() * 8));
  if (!is) throw std::runtime_error("adv batch: truncated payload");
  return b;
}

}  // namespace ntk
