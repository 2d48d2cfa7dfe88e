#include "ntk/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "ntk/rng.hpp"

namespace ntk {

Tensor take_rows(const Tensor& X, const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("take_rows: empty index set");
  const int64_t per = X.size() / X.dim(0);
  std::vector<int> shape = X.shape;
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= X.dim(0))
      throw std::out_of_range("take_rows: index out of range");
    std::copy(X.data.begin() + idx[r] * per, X.data.begin() + (idx[r] + 1) * per,
              out.data.begin() + static_cast<int64_t>(r) * per);
  }
  return out;
}

std::vector<int> take_labels(const std::vector<int>& labels, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(labels.at(static_cast<size_t>(i)));
  return out;
}

std::vector<int> balanced_subset(const std::vector<int>& labels, int class_count,
                                 int per_class, uint64_t seed) {
  std::vector<std::vector<int>> pools(static_cast<size_t>(class_count));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("balanced_subset: label out of range");
    pools[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(seed);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(class_count) * per_class);
  for (auto& pool : pools) {
    if (static_cast<int>(pool.size()) < per_class)
      throw std::invalid_argument("balanced_subset: class too small for request");
    std::shuffle(pool.begin(), pool.end(), rng);
    out.insert(out.end(), pool.begin(), pool.begin() + per_class);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// round-robin class labels so any prefix is near-balanced
int cycle_label(int i, int classes) { return i % classes; }

}  // namespace

Dataset gen_blobs(int n_train, int n_test, int classes, int d, uint64_t seed,
                  double margin, double sigma) {
  if (classes < 2 || d < 1 || n_train < classes || n_test < classes)
    throw std::invalid_argument("gen_blobs: bad sizes");
  std::mt19937_64 dir_rng(substream_seed(seed, "blob-dirs"));
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> means(static_cast<size_t>(classes),
                                         std::vector<double>(static_cast<size_t>(d), 0.5));
  {
    std::vector<double> u(static_cast<size_t>(d));
    for (int c = 0; c < classes; ++c) {
      if (classes == 2 && c == 1) {
        for (int j = 0; j < d; ++j) u[static_cast<size_t>(j)] = -u[static_cast<size_t>(j)];
      } else {
        double n2 = 0;
        do {
          n2 = 0;
          for (int j = 0; j < d; ++j) {
            u[static_cast<size_t>(j)] = gauss(dir_rng);
            n2 += u[static_cast<size_t>(j)] * u[static_cast<size_t>(j)];
          }
        } while (n2 == 0);
        const double inv = 1.0 / std::sqrt(n2);
        for (double& v : u) v *= inv;
      }
      for (int j = 0; j < d; ++j)
        means[static_cast<size_t>(c)][static_cast<size_t>(j)] =
            0.5 + 0.5 * margin * u[static_cast<size_t>(j)];
    }
  }

  auto fill = [&](Tensor& X, std::vector<int>& y, int n, const char* stream) {
    std::mt19937_64 rng(substream_seed(seed, stream));
    X = Tensor({n, d});
    y.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int c = cycle_label(i, classes);
      y[static_cast<size_t>(i)] = c;
      for (int j = 0; j < d; ++j)
        X[static_cast<int64_t>(i) * d + j] =
            std::clamp(means[static_cast<size_t>(c)][static_cast<size_t>(j)] +
                           sigma * gauss(rng),
                       0.0, 1.0);
    }
  };

  Dataset ds;
  ds.class_count = classes;
  ds.name = "blobs";
  fill(ds.train_x, ds.train_y, n_train, "blob-train");
  fill(ds.test_x, ds.test_y, n_test, "blob-test");
  return ds;
}

Dataset gen_spirals(int n_train, int n_test, uint64_t seed, double noise) {
  if (n_train < 2 || n_test < 2) throw std::invalid_argument("gen_spirals: bad sizes");
  auto fill = [&](Tensor& X, std::vector<int>& y, int n, const char* stream) {
    std::mt19937_64 rng(substream_seed(seed, stream));
    std::uniform_real_distribution<double> uu(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    X = Tensor({n, 2});
    y.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int c = cycle_label(i, 2);
      y[static_cast<size_t>(i)] = c;
      const double t = 0.25 + 0.75 * uu(rng);
      const double th = 3.0 * 3.14159265358979323846 * t + (c == 1 ? 3.14159265358979323846 : 0.0);
      const double r = 0.42 * t;
      X[static_cast<int64_t>(i) * 2 + 0] =
          std::clamp(0.5 + r * std::cos(th) + noise * gauss(rng), 0.0, 1.0);
      X[static_cast<int64_t>(i) * 2 + 1] =
          std::clamp(0.5 + r * std::sin(th) + noise * gauss(rng), 0.0, 1.0);
    }
  };
  Dataset ds;
  ds.class_count = 2;
  ds.name = "spirals";
  fill(ds.train_x, ds.train_y, n_train, "spiral-train");
  fill(ds.test_x, ds.test_y, n_test, "spiral-test");
  return ds;
}

Dataset gen_gratings(int n_train, int n_test, uint64_t seed, double noise) {
  if (n_train < 2 || n_test < 2) throw std::invalid_argument("gen_gratings: bad sizes");
  constexpr int H = 32, W = 32, CH = 3;
  constexpr double pi = 3.14159265358979323846;
  auto fill = [&](Tensor& X, std::vector<int>& y, int n, const char* stream) {
    std::mt19937_64 rng(substream_seed(seed, stream));
    std::uniform_real_distribution<double> uu(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    X = Tensor({n, CH, H, W});
    y.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int c = cycle_label(i, 2);
      y[static_cast<size_t>(i)] = c;
      const double freq = 2.0 * pi * (2.0 + 4.0 * uu(rng)) / W;
      const double phase = 2.0 * pi * uu(rng);
      const double contrast = 0.15 + 0.2 * uu(rng);
      double tint[CH];
      for (double& t : tint) t = 0.9 + 0.2 * uu(rng);
      double* img = X.data.data() + static_cast<int64_t>(i) * CH * H * W;
      for (int r = 0; r < H; ++r)
        for (int col = 0; col < W; ++col) {
          // class 0: horizontal stripes (varies with row); class 1: vertical
          const double coord = c == 0 ? r : col;
          const double v = 0.5 + contrast * std::sin(freq * coord + phase);
          for (int ch = 0; ch < CH; ++ch)
            img[ch * H * W + r * W + col] =
                std::clamp(v * tint[ch] + noise * gauss(rng), 0.0, 1.0);
        }
    }
  };
  Dataset ds;
  ds.class_count = 2;
  ds.name = "gratings";
  fill(ds.train_x, ds.train_y, n_train, "grating-train");
  fill(ds.test_x, ds.test_y, n_test, "grating-test");
  return ds;
}

namespace {

void read_cifar_file(const std::filesystem::path& file, std::vector<double>& pixels,
                     std::vector<int>& labels) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cifar: cannot open " + file.string());
  is.seekg(0, std::ios::end);
  const int64_t len = is.tellg();
  is.seekg(0);
  if (len % 3073 != 0)
    throw std::runtime_error("cifar: file size not a multiple of the 3073-byte record: " +
                             file.string());
  std::vector<unsigned char> buf(static_cast<size_t>(len));
  is.read(reinterpret_cast<char*>(buf.data()), len);
  if (!is) throw std::runtime_error("cifar: short read: " + file.string());
  const int64_t n = len / 3073;
  for (int64_t r = 0; r < n; ++r) {
    const unsigned char* rec = buf.data() + r * 3073;
    labels.push_back(rec[0]);
    for (int j = 0; j < 3072; ++j) pixels.push_back(rec[1 + j] / 255.0);
  }
}

}  // namespace

Dataset load_cifar10_bin(const std::filesystem::path& dir, int n_train, int n_test,
                         const std::vector<int>& classes, uint64_t seed) {
  if (classes.size() < 2) throw std::invalid_argument("cifar: need >= 2 classes");
  std::vector<double> train_px, test_px;
  std::vector<int> train_lb, test_lb;
  for (int b = 1; b <= 5; ++b) {
    const auto f = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (std::filesystem::exists(f)) read_cifar_file(f, train_px, train_lb);
  }
  read_cifar_file(dir / "test_batch.bin", test_px, test_lb);
  if (train_lb.empty()) throw std::runtime_error("cifar: no training batches found");

  std::vector<int> remap(10, -1);
  for (size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || classes[i] > 9)
      throw std::invalid_argument("cifar: class label out of range");
    remap[static_cast<size_t>(classes[i])] = static_cast<int>(i);
  }

  auto build = [&](const std::vector<double>& px, const std::vector<int>& lb, int want,
                   const char* stream, Tensor& X, std::vector<int>& y) {
    std::vector<int> kept_idx, kept_lb;
    for (size_t i = 0; i < lb.size(); ++i)
      if (remap[static_cast<size_t>(lb[i])] >= 0) {
        kept_idx.push_back(static_cast<int>(i));
        kept_lb.push_back(remap[static_cast<size_t>(lb[i])]);
      }
    const int C = static_cast<int>(classes.size());
    if (want % C != 0)
      throw std::invalid_argument("cifar: subset size must be divisible by class count");
    std::vector<int> pick =
        balanced_subset(kept_lb, C, want / C, substream_seed(seed, stream));
    X = Tensor({want, 3, 32, 32});
    y.resize(static_cast<size_t>(want));
    for (int r = 0; r < want; ++r) {
      const int src = kept_idx[static_cast<size_t>(pick[static_cast<size_t>(r)])];
      y[static_cast<size_t>(r)] = kept_lb[static_cast<size_t>(pick[static_cast<size_t>(r)])];
      std::copy(px.begin() + static_cast<int64_t>(src) * 3072,
                px.begin() + static_cast<int64_t>(src + 1) * 3072,
                X.data.begin() + static_cast<int64_t>(r) * 3072);
    }
  };

  Dataset ds;
  ds.class_count = static_cast<int>(classes.size());
  ds.name = "cifar10";
  build(train_px, train_lb, n_train, "subset-train", ds.train_x, ds.train_y);
  build(test_px, test_lb, n_test, "subset-test", ds.test_x, ds.test_y);
  return ds;
}

}  // namespace ntk
