#include <filesystem>

#include "doctest.h"
#include "ntk/metrics.hpp"
#include "test_util.hpp"

using namespace ntk;
using namespace tutil;

namespace {

ModelSnapshot make_snap(const Architecture& arch, uint64_t seed) {
  ModelSnapshot s;
  s.arch = arch;
  auto [p, st] = init_params(arch, seed);
  s.params = std::move(p);
  s.bn_stats = std::move(st);
  return s;
}

Eigen::MatrixXd random_psd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = g(rng);
  return A * A.transpose();
}

}  // namespace

TEST_CASE("compute_ntk: linear model gives Gram plus the bias constant") {
  ModelSnapshot snap = make_snap(small_mlp(3, {}, 2), 1);
  std::mt19937_64 rng(2);
  Tensor x({4, 3});
  fill_uniform(x, rng);
  ClassKernel k = compute_ntk(snap, x);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double gram = 0;
        for (int d = 0; d < 3; ++d)
          gram += x[static_cast<int64_t>(i) * 3 + d] * x[static_cast<int64_t>(j) * 3 + d];
        // grad of f_c is (x in W's row c, 1 in bias c): kernel = x_i.x_j + 1
        CHECK(k.diag(c)(i, j) == doctest::Approx(gram + 1.0).epsilon(1e-12));
      }
}

TEST_CASE("compute_ntk: duplicate samples give duplicate rows and columns") {
  ModelSnapshot snap = make_snap(small_mlp(4, {5}, 2), 3);
  std::mt19937_64 rng(4);
  Tensor x({3, 4});
  fill_uniform(x, rng);
  for (int d = 0; d < 4; ++d) x[2 * 4 + d] = x[0 * 4 + d];  // sample 2 = sample 0
  ClassKernel k = compute_ntk(snap, x);
  for (int c = 0; c < 2; ++c)
    for (int j = 0; j < 3; ++j) {
      CHECK(k.diag(c)(0, j) == doctest::Approx(k.diag(c)(2, j)).epsilon(1e-12));
      CHECK(k.diag(c)(j, 0) == doctest::Approx(k.diag(c)(j, 2)).epsilon(1e-12));
    }
}

TEST_CASE("compute_ntk equals the explicit J J^T, including off-diagonal blocks") {
  for (int trial = 0; trial < 2; ++trial) {
    const Architecture arch = trial == 0 ? small_mlp(4, {6}, 3) : small_cnn();
    ModelSnapshot snap = make_snap(arch, 10 + trial);
    std::mt19937_64 rng(20 + trial);
    std::vector<int> xs = arch.input_shape;
    const int N = 5;
    xs.insert(xs.begin(), N);
    Tensor x(xs);
    fill_uniform(x, rng);
    ClassKernel k = compute_ntk(snap, x, KernelScope::full);

    ModelGraph g = build_graph(arch);
    const BnMode bn = BnMode::frozen(snap.bn_stats);
    const int64_t per = x.size() / N;
    std::vector<Eigen::MatrixXd> J;
    for (int i = 0; i < N; ++i) {
      std::vector<int> ss = arch.input_shape;
      ss.insert(ss.begin(), 1);
      Tensor xi(ss);
      std::copy(x.data.begin() + i * per, x.data.begin() + (i + 1) * per,
                xi.data.begin());
      J.push_back(jacobian_explicit(g, snap.params, xi, bn));
    }
    const int C = g.class_count;
    for (int c = 0; c < C; ++c)
      for (int cp = 0; cp < C; ++cp) {
        Eigen::MatrixXd want(N, N);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) want(i, j) = J[i].row(c).dot(J[j].row(cp));
        const double rel = (k.block(c, cp) - want).norm() / want.norm();
        CHECK(rel <= 1e-10);
      }

    SUBCASE("diagonal blocks are PSD up to tolerance") {
      for (int c = 0; c < C; ++c) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k.diag(c));
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * k.diag(c).trace() / N);
      }
    }
  }
}

TEST_CASE("kernel_distance identities and oracles") {
  std::mt19937_64 rng(30);
  Eigen::MatrixXd K = random_psd(6, rng);
  CHECK(kernel_distance(K, K) == 0.0);

  Eigen::MatrixXd I4 = Eigen::MatrixXd::Identity(4, 4);
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
  CHECK(kernel_distance(I4, ones) == doctest::Approx(0.5).epsilon(1e-15));

  SUBCASE("flatten-and-dot cosine oracle on a random PSD pair") {
    Eigen::MatrixXd A = random_psd(5, rng), B = random_psd(5, rng);
    Eigen::VectorXd a = Eigen::Map<Eigen::VectorXd>(A.data(), 25);
    Eigen::VectorXd b = Eigen::Map<Eigen::VectorXd>(B.data(), 25);
    const double want = 1.0 - a.dot(b) / (a.norm() * b.norm());
    CHECK(kernel_distance(A, B) == doctest::Approx(want).epsilon(1e-13));
    CHECK(kernel_distance(A, B) == doctest::Approx(kernel_distance(B, A)));
    CHECK(kernel_distance(A, B) >= 0.0);
    CHECK(kernel_distance(A, B) <= 1.0);  // PSD pair
  }
  SUBCASE("scale invariance") {
    Eigen::MatrixXd A = random_psd(5, rng), B = random_psd(5, rng);
    CHECK(std::abs(kernel_distance(3.7 * A, 0.02 * B) - kernel_distance(A, B)) <=
          1e-12);
  }
  SUBCASE("zero-norm and shape errors") {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(4, 4);
    CHECK_THROWS(kernel_distance(Z, I4));
    CHECK_THROWS(kernel_distance(I4, Eigen::MatrixXd::Identity(3, 3)));
  }
}

TEST_CASE("kernel velocity and distance to final") {
  std::mt19937_64 rng(40);
  Eigen::MatrixXd K0 = random_psd(5, rng);

  SUBCASE("constant sequence has zero velocity") {
    std::vector<std::pair<int, Eigen::MatrixXd>> tr = {{0, K0}, {3, K0}, {7, K0}};
    for (const auto& [e, v] : kernel_velocity(tr)) CHECK(v == 0.0);
  }
  SUBCASE("known distance over unit gap") {
    Eigen::MatrixXd I4 = Eigen::MatrixXd::Identity(4, 4);
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
    auto out = kernel_velocity({{0, I4}, {1, ones}});
    REQUIRE(out.size() == 1);
    CHECK(out[0].first == 1);
    CHECK(out[0].second == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("interpolated kernels match direct per-pair distances, gaps normalized") {
    Eigen::MatrixXd K1 = random_psd(5, rng);
    std::vector<std::pair<int, Eigen::MatrixXd>> tr;
    const int epochs[5] = {0, 2, 3, 7, 11};
    for (int i = 0; i < 5; ++i) {
      const double t = i / 4.0;
      tr.emplace_back(epochs[i], ((1 - t) * K0 + t * K1).eval());
    }
    auto out = kernel_velocity(tr);
    REQUIRE(out.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
      const double want = kernel_distance(tr[i].second, tr[i + 1].second) /
                          (epochs[i + 1] - epochs[i]);
      CHECK(out[i].second == doctest::Approx(want).epsilon(1e-13));
    }
  }
  SUBCASE("duplicate epochs are rejected") {
    CHECK_THROWS(kernel_velocity({{2, K0}, {2, K0}}));
    CHECK_THROWS(kernel_velocity({{0, K0}}));
  }
  SUBCASE("distance to final") {
    Eigen::MatrixXd K1 = random_psd(5, rng);
    std::vector<std::pair<int, Eigen::MatrixXd>> tr = {{0, K0}, {4, K1}, {9, K0}};
    auto out = distance_to_final(tr);
    REQUIRE(out.size() == 3);
    CHECK(out[0].second == doctest::Approx(kernel_distance(K0, K0)));
    CHECK(out[1].second == doctest::Approx(kernel_distance(K1, K0)));
    CHECK(out[2].second == 0.0);
    auto single = distance_to_final({{5, K0}});
    REQUIRE(single.size() == 1);
    CHECK(single[0].second == 0.0);
  }
}

TEST_CASE("effective rank: analytic cases and bounds") {
  CHECK(effective_rank(Eigen::MatrixXd::Identity(7, 7)) ==
        doctest::Approx(7.0).epsilon(1e-12));

  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
  CHECK(effective_rank(v * v.transpose()) == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::MatrixXd D = Eigen::Vector3d(2, 1, 1).asDiagonal();
  CHECK(effective_rank(D) == doctest::Approx(std::pow(2.0, 1.5)).epsilon(1e-9));

  std::mt19937_64 rng(50);
  for (int t = 0; t < 5; ++t) {
    Eigen::MatrixXd K = random_psd(6, rng);
    const double er = effective_rank(K);
    CHECK(er >= 1.0);
    CHECK(er <= 6.0 + 1e-12);
  }
  CHECK_THROWS(effective_rank(Eigen::MatrixXd::Zero(3, 3)));
}

TEST_CASE("eigensolver residual stays small on random symmetric matrices") {
  std::mt19937_64 rng(55);
  Eigen::MatrixXd K = random_psd(20, rng);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
  const Eigen::MatrixXd V = es.eigenvectors();
  const double resid = (K * V - V * es.eigenvalues().asDiagonal()).norm();
  CHECK(resid <= 1e-8 * K.norm());
}

TEST_CASE("alignment and the kernel specialization matrix") {
  const std::vector<double> y0 = {1, 1, 0, 0};
  Eigen::Map<const Eigen::Vector4d> v0(y0.data());
  Eigen::MatrixXd K00 = v0 * v0.transpose();
  CHECK(alignment(K00, y0) == doctest::Approx(1.0).epsilon(1e-12));

  SUBCASE("disjoint balanced classes: diagonal 2, column means 1") {
    ClassKernel k;
    k.C = 2;
    k.N = 4;
    const std::vector<double> y1 = {0, 0, 1, 1};
    Eigen::Map<const Eigen::Vector4d> v1(y1.data());
    k.blocks = {K00, (v1 * v1.transpose()).eval()};
    KsmMatrix m = ksm(k, {0, 0, 1, 1});
    CHECK(m.entries(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.entries(1, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.entries(0, 1) == doctest::Approx(0.0));
    CHECK(m.entries(1, 0) == doctest::Approx(0.0));
    CHECK(mean_ksm(m) == doctest::Approx(2.0).epsilon(1e-12));
    for (int c = 0; c < 2; ++c)
      CHECK(m.entries.col(c).mean() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("identical class kernels give all-ones KSM") {
    std::mt19937_64 rng(60);
    Eigen::MatrixXd K = random_psd(6, rng);
    ClassKernel k;
    k.C = 3;
    k.N = 6;
    k.blocks = {K, K, K};
    KsmMatrix m = ksm(k, {0, 1, 2, 0, 1, 2});
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        CHECK(m.entries(a, b) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mean_ksm(m) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("column means 1 and entries within [0, C] on a real kernel") {
    ModelSnapshot snap = make_snap(small_mlp(4, {6}, 3), 70);
    std::mt19937_64 rng(71);
    Tensor x({6, 4});
    fill_uniform(x, rng);
    ClassKernel k = compute_ntk(snap, x);
    KsmMatrix m = ksm(k, {0, 1, 2, 0, 1, 2});
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(m.entries.col(c).mean() - 1.0) <= 1e-9);
      for (int r = 0; r < 3; ++r) {
        CHECK(m.entries(r, c) >= 0.0);
        CHECK(m.entries(r, c) <= 3.0);
      }
    }
    KsmMatrix pm = ksm(k, {0, 1, 2, 0, 1, 2}, /*pm_one=*/true);
    CHECK(pm.entries != m.entries);  // the +-1 encoding changes A values
    CHECK_THROWS(ksm(k, {0, 1, 2, 0, 1, 5}));
  }
}

TEST_CASE("trace kernel is the elementwise mean of the diagonal blocks") {
  ModelSnapshot snap = make_snap(small_mlp(3, {4}, 2), 80);
  std::mt19937_64 rng(81);
  Tensor x({4, 3});
  fill_uniform(x, rng);
  ClassKernel k = compute_ntk(snap, x);
  Eigen::MatrixXd kbar = trace_kernel(k);
  CHECK((kbar - 0.5 * (k.diag(0) + k.diag(1))).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("kernel files round trip") {
  ModelSnapshot snap = make_snap(small_mlp(3, {4}, 2), 90);
  std::mt19937_64 rng(91);
  Tensor x({4, 3});
  fill_uniform(x, rng);
  ClassKernel k = compute_ntk(snap, x, KernelScope::full, {3, 1, 4, 1}, 12);
  const auto dir = std::filesystem::temp_directory_path() / "ntk_kernel_test";
  std::filesystem::create_directories(dir);
  const auto file = dir / "k.ntkk";
  save_kernel(file, k, "f00d");
  ClassKernel back = load_kernel(file);
  CHECK(back.C == 2);
  CHECK(back.N == 4);
  CHECK(back.full);
  CHECK(back.epoch == 12);
  CHECK(back.sample_ids == std::vector<int>{3, 1, 4, 1});
  for (size_t b = 0; b < k.blocks.size(); ++b)
    CHECK(back.blocks[b] == k.blocks[b]);  // bitwise
}
