#include "ntk/metrics.hpp"

#include <fstream>

#include "json.hpp"

namespace ntk {

using nlohmann::json;

namespace {

Tensor single_sample(const Tensor& X, int i) {
  const int64_t per = X.size() / X.dim(0);
  std::vector<int> shape = X.shape;
  shape[0] = 1;
  Tensor out(shape);
  std::copy(X.data.begin() + i * per, X.data.begin() + (i + 1) * per,
            out.data.begin());
  return out;
}

void check_symmetry(Eigen::MatrixXd& k) {
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * scale)
    throw std::runtime_error("compute_ntk: kernel block asymmetric beyond tolerance");
  k = ((k + k.transpose()) * 0.5).eval();
}

}  // namespace

ClassKernel compute_ntk(const ModelSnapshot& snap, const Tensor& samples,
                        KernelScope scope, std::vector<int> sample_ids, int epoch) {
  if (samples.rank() < 2) throw std::invalid_argument("compute_ntk: need a batch");
  const int N = samples.dim(0);
  ModelGraph g = build_graph(snap.arch, Precision::f64);
  const int C = g.class_count;
  const BnMode bn = BnMode::frozen(snap.bn_stats);
  const int64_t P = snap.params.total_len();

  // Per-class gradient matrices G_c in R^{N x P}; one forward per sample,
  // C backwards reusing its trace.
  std::vector<Eigen::MatrixXd> G(static_cast<size_t>(C));
  for (auto& m : G) m.resize(N, P);
  Tensor cot({1, C});
  for (int i = 0; i < N; ++i) {
    Tensor xi = single_sample(samples, i);
    ForwardTrace tr;
    forward(g, snap.params, xi, bn, &tr);
    for (int c = 0; c < C; ++c) {
      std::fill(cot.data.begin(), cot.data.end(), 0.0);
      cot[c] = 1.0;
      ParamVector dp;
      backward(g, snap.params, tr, cot, &dp, nullptr);
      std::vector<double> flat = dp.flatten();
      G[static_cast<size_t>(c)].row(i) =
          Eigen::Map<const Eigen::VectorXd>(flat.data(), P);
    }
  }

  ClassKernel k;
  k.C = C;
  k.N = N;
  k.full = scope == KernelScope::full;
  k.epoch = epoch;
  k.source_id = snap.tag;
  if (sample_ids.empty()) {
    sample_ids.resize(static_cast<size_t>(N));
    std::iota(sample_ids.begin(), sample_ids.end(), 0);
  }
  if (static_cast<int>(sample_ids.size()) != N)
    throw std::invalid_argument("compute_ntk: sample id count mismatch");
  k.sample_ids = std::move(sample_ids);

  if (k.full) {
    k.blocks.resize(static_cast<size_t>(C) * C);
    for (int c = 0; c < C; ++c)
      for (int cp = 0; cp < C; ++cp)
        k.blocks[static_cast<size_t>(c) * C + cp] =
            G[static_cast<size_t>(c)] * G[static_cast<size_t>(cp)].transpose();
    for (int c = 0; c < C; ++c) check_symmetry(k.blocks[static_cast<size_t>(c) * C + c]);
  } else {
    k.blocks.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
      k.blocks[static_cast<size_t>(c)] =
          G[static_cast<size_t>(c)] * G[static_cast<size_t>(c)].transpose();
      check_symmetry(k.blocks[static_cast<size_t>(c)]);
    }
  }
  return k;
}

Eigen::MatrixXd trace_kernel(const ClassKernel& k) {
  if (k.C < 1) throw std::invalid_argument("trace_kernel: empty kernel");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k.N, k.N);
  for (int c = 0; c < k.C; ++c) out += k.diag(c);
  return out / k.C;
}

double kernel_distance(const Eigen::MatrixXd& k1, const Eigen::MatrixXd& k2) {
  if (k1.rows() != k2.rows() || k1.cols() != k2.cols())
    throw std::invalid_argument("kernel_distance: shape mismatch");
  const double n1 = k1.norm(), n2 = k2.norm();
  if (n1 == 0 || n2 == 0)
    throw std::invalid_argument("kernel_distance: zero-norm kernel");
  return 1.0 - k1.cwiseProduct(k2).sum() / (n1 * n2);
}

std::vector<std::pair<int, double>> kernel_velocity(
    const std::vector<std::pair<int, Eigen::MatrixXd>>& trace) {
  if (trace.size() < 2)
    throw std::invalid_argument("kernel_velocity: need at least two epochs");
  std::vector<std::pair<int, double>> out;
  out.reserve(trace.size() - 1);
  for (size_t i = 0; i + 1 < trace.size(); ++i) {
    const int gap = trace[i + 1].first - trace[i].first;
    if (gap <= 0)
      throw std::invalid_argument("kernel_velocity: epochs must strictly increase");
    out.emplace_back(trace[i + 1].first,
                     kernel_distance(trace[i].second, trace[i + 1].second) / gap);
  }
  return out;
}

std::vector<std::pair<int, double>> distance_to_final(
    const std::vector<std::pair<int, Eigen::MatrixXd>>& trace) {
  if (trace.empty()) throw std::invalid_argument("distance_to_final: empty trace");
  std::vector<std::pair<int, double>> out;
  out.reserve(trace.size());
  const Eigen::MatrixXd& last = trace.back().second;
  for (size_t i = 0; i + 1 < trace.size(); ++i)
    out.emplace_back(trace[i].first, kernel_distance(trace[i].second, last));
  out.emplace_back(trace.back().first, 0.0);
  return out;
}

double effective_rank(const Eigen::MatrixXd& k) {
  if (k.rows() != k.cols()) throw std::invalid_argument("effective_rank: not square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("effective_rank: eigensolver failed");
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const double total = lam.sum();
  if (total <= 0) throw std::invalid_argument("effective_rank: non-positive spectrum");
  double entropy = 0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    const double p = lam[i] / total;
    if (p > 0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double alignment(const Eigen::MatrixXd& k, const std::vector<double>& y) {
  if (static_cast<Eigen::Index>(y.size()) != k.rows())
    throw std::invalid_argument("alignment: label vector length mismatch");
  Eigen::Map<const Eigen::VectorXd> v(y.data(), static_cast<Eigen::Index>(y.size()));
  Eigen::MatrixXd yy = v * v.transpose();
  return 1.0 - kernel_distance(k, yy);
}

KsmMatrix ksm(const ClassKernel& k, const std::vector<int>& labels, bool pm_one) {
  if (static_cast<int>(labels.size()) != k.N)
    throw std::invalid_argument("ksm: label count mismatch");
  const int C = k.C;
  std::vector<std::vector<double>> ind(static_cast<size_t>(C),
                                       std::vector<double>(static_cast<size_t>(k.N)));
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < k.N; ++i) {
      if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= C)
        throw std::invalid_argument("ksm: label out of range");
      const bool in = labels[static_cast<size_t>(i)] == c;
      ind[static_cast<size_t>(c)][static_cast<size_t>(i)] =
          in ? 1.0 : (pm_one ? -1.0 : 0.0);
    }

  Eigen::MatrixXd A(C, C);  // A(c, c') = alignment of K^{c,c} with y_{c'}
  for (int c = 0; c < C; ++c)
    for (int cp = 0; cp < C; ++cp)
      A(c, cp) = alignment(k.diag(c), ind[static_cast<size_t>(cp)]);

  KsmMatrix out;
  out.pm_one_labels = pm_one;
  out.entries.resize(C, C);
  for (int cp = 0; cp < C; ++cp) {
    const double denom = A.col(cp).mean();
    if (!(denom > 0))
      throw std::invalid_argument("ksm: non-positive alignment column mean");
    out.entries.col(cp) = A.col(cp) / denom;
  }
  return out;
}

double mean_ksm(const KsmMatrix& m) { return m.entries.diagonal().mean(); }

void save_kernel(const std::filesystem::path& file, const ClassKernel& k,
                 const std::string& config_hash) {
  json header = {{"magic", "ntkk"},       {"version", 1},
                 {"endianness", "little"}, {"C", k.C},
                 {"N", k.N},              {"full", k.full},
                 {"epoch", k.epoch},      {"snapshot_id", k.source_id},
                 {"sample_ids", k.sample_ids}, {"config_hash", config_hash}};
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("kernel: cannot open " + file.string());
  os << header.dump() << '\n';
  for (const auto& b : k.blocks) {
    // Eigen default storage is column-major; emit row-major explicitly
    for (Eigen::Index r = 0; r < b.rows(); ++r)
      for (Eigen::Index c = 0; c < b.cols(); ++c) {
        const double v = b(r, c);
        os.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!os) throw std::runtime_error("kernel: write failed");
}

ClassKernel load_kernel(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("kernel: cannot open " + file.string());
  std::string line;
  std::getline(is, line);
  json header = json::parse(line);
  if (header.at("magic") != "ntkk") throw std::runtime_error("kernel: bad magic");
  ClassKernel k;
  k.C = header.at("C");
  k.N = header.at("N");
  k.full = header.at("full");
  k.epoch = header.at("epoch");
  k.source_id = header.at("snapshot_id");
  k.sample_ids = header.at("sample_ids").get<std::vector<int>>();
  const size_t nblocks = k.full ? static_cast<size_t>(k.C) * k.C
                                : static_cast<size_t>(k.C);
  k.blocks.resize(nblocks);
  for (auto& b : k.blocks) {
    b.resize(k.N, k.N);
    for (Eigen::Index r = 0; r < k.N; ++r)
      for (Eigen::Index c = 0; c < k.N; ++c) {
        double v;
        is.read(reinterpret_cast<char*>(&v), 8);
        b(r, c) = v;
      }
  }
  if (!is) throw std::runtime_error("kernel: truncated payload");
  return k;
}

}  // namespace ntk
