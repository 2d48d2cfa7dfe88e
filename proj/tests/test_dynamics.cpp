#include "doctest.h"
#include "ntk/harness.hpp"
#include "ntk/metrics.hpp"
#include "test_util.hpp"

using namespace ntk;
using namespace tutil;

namespace {

std::shared_ptr<ModelSnapshot> make_parent(const Architecture& arch, uint64_t seed,
                                           int epoch = 10) {
  auto snap = std::make_shared<ModelSnapshot>();
  snap->arch = arch;
  auto [p, st] = init_params(arch, seed);
  snap->params = std::move(p);
  snap->bn_stats = std::move(st);
  snap->spawn_epoch = epoch;
  return snap;
}

Tensor rand_batch(const std::vector<int>& input_shape, int b, std::mt19937_64& rng) {
  std::vector<int> s = input_shape;
  s.insert(s.begin(), b);
  Tensor x(s);
  fill_uniform(x, rng, 0.05, 0.95);
  return x;
}

Tensor fd_input_grad_dyn(const DynamicsModel& m, const Tensor& x, const Tensor& cot,
                         double h = 1e-5) {
  Tensor out(x.shape);
  Tensor work = x;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double orig = work[i];
    work[i] = orig + h;
    const double up = dot(predict(m, work), cot);
    work[i] = orig - h;
    const double dn = dot(predict(m, work), cot);
    work[i] = orig;
    out[i] = (up - dn) / (2 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("spawn identities at theta = theta_t") {
  std::mt19937_64 rng(1);
  auto parent = make_parent(small_cnn(), 21);
  Tensor x = rand_batch(parent->arch.input_shape, 3, rng);
  ModelGraph g = build_graph(parent->arch);
  Tensor fparent = forward(g, parent->params, x, BnMode::frozen(parent->bn_stats));

  DynamicsModel lin = spawn(DynKind::linearized, parent);
  CHECK(max_abs(predict(lin, x) - fparent) <= 1e-12);

  DynamicsModel cen = spawn(DynKind::centered, parent);
  CHECK(norm(predict(cen, x)) == 0.0);

  DynamicsModel cs = spawn(DynKind::centered_standard, parent);
  CHECK(norm(predict(cs, x)) == 0.0);
}

TEST_CASE("linearized equals standard on a purely linear network") {
  std::mt19937_64 rng(2);
  auto parent = make_parent(small_mlp(5, {}, 3), 8);  // single dense layer
  Tensor x = rand_batch({5}, 4, rng);

  DynamicsModel lin = spawn(DynKind::linearized, parent);
  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 0.7);
  lin.params += delta;

  DynamicsModel std_m = make_standard(parent->arch, lin.params, parent->bn_stats);
  CHECK(max_abs(predict(lin, x) - predict(std_m, x)) < 1e-12);
}

TEST_CASE("standard-vs-linearized gap shrinks ~4x when the offset halves") {
  std::mt19937_64 rng(3);
  auto parent = make_parent(small_mlp(4, {8, 8}, 2), 14);
  Tensor x = rand_batch({4}, 8, rng);
  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 1e-3);

  auto gap = [&](double scale) {
    DynamicsModel lin = spawn(DynKind::linearized, parent);
    lin.params.axpy(scale, delta);
    DynamicsModel std_m = make_standard(parent->arch, lin.params, parent->bn_stats,
                                        BnPolicy::frozen);
    return norm(predict(std_m, x) - predict(lin, x));
  };
  const double g1 = gap(1.0), g2 = gap(0.5);
  REQUIRE(g1 > 0);
  const double ratio = g1 / g2;
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("grad_params: constant feature map for centered, agreement at spawn") {
  std::mt19937_64 rng(4);
  auto parent = make_parent(small_cnn(), 31);
  Tensor x = rand_batch(parent->arch.input_shape, 2, rng);
  Tensor cot({2, 2});
  fill_uniform(cot, rng, -1.0, 1.0);

  DynamicsModel cen = spawn(DynKind::centered, parent);
  ParamVector g1 = grad_params(cen, x, cot);
  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 0.3);
  cen.params += delta;
  ParamVector g2 = grad_params(cen, x, cot);
  CHECK(g1.flatten() == g2.flatten());

  DynamicsModel lin = spawn(DynKind::linearized, parent);
  DynamicsModel std_m =
      make_standard(parent->arch, parent->params, parent->bn_stats, BnPolicy::frozen);
  CHECK(max_rel_err(grad_params(lin, x, cot), grad_params(std_m, x, cot)) < 1e-9);

  Tensor zero_cot({2, 2});
  CHECK(norm(grad_params(cen, x, zero_cot)) == 0.0);
}

TEST_CASE("input_gradient matches finite differences for every dynamics kind") {
  std::mt19937_64 rng(5);
  auto parent = make_parent(small_mlp(4, {6}, 2), 9);
  Tensor x = rand_batch({4}, 2, rng);
  Tensor cot({2, 2});
  fill_uniform(cot, rng, -1.0, 1.0);
  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 0.2);

  for (DynKind kind : {DynKind::linearized, DynKind::centered,
                       DynKind::centered_standard}) {
    DynamicsModel m = spawn(kind, parent);
    m.params += delta;
    Tensor got = input_gradient(m, x, cot);
    Tensor fd = fd_input_grad_dyn(m, x, cot);
    CHECK(max_rel_err(got, fd) < 1e-5);
  }
  DynamicsModel std_m = make_standard(parent->arch, parent->params + delta,
                                      parent->bn_stats, BnPolicy::frozen);
  CHECK(max_rel_err(input_gradient(std_m, x, cot),
                    fd_input_grad_dyn(std_m, x, cot)) < 1e-5);
}

TEST_CASE("loss_input_grad matches finite differences of the batch loss") {
  std::mt19937_64 rng(6);
  auto parent = make_parent(small_mlp(3, {5}, 3), 15);
  Tensor x = rand_batch({3}, 2, rng);
  const std::vector<int> labels = {1, 2};
  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 0.2);

  for (DynKind kind : {DynKind::linearized, DynKind::centered,
                       DynKind::centered_standard}) {
    DynamicsModel m = spawn(kind, parent);
    m.params += delta;
    auto [loss, g] = loss_input_grad(m, x, labels);
    const double h = 1e-5;
    Tensor work = x;
    for (int64_t i = 0; i < x.size(); ++i) {
      const double orig = work[i];
      work[i] = orig + h;
      const double up =
          loss_and_grad(LossKind::cross_entropy, predict(m, work), labels).first;
      work[i] = orig - h;
      const double dn =
          loss_and_grad(LossKind::cross_entropy, predict(m, work), labels).first;
      work[i] = orig;
      CHECK(rel_err(g[i], (up - dn) / (2 * h)) < 1e-5);
    }
  }
}

TEST_CASE("sgd_step: analytic one-parameter step and lr=0 no-op") {
  ModelGraph g;
  g.input_shape = {1};
  g.class_count = 1;
  g.layers = {LayerSpec::dense_layer(1, 1, false)};
  DynamicsModel m;
  m.kind = DynKind::standard;
  m.bn_policy = BnPolicy::frozen;
  m.graph = g;
  m.params = zero_params(g);  // theta = 0
  Tensor x({1, 1}, {1.0});
  // mse against the one-hot of label 0: target 1 -> grad d/dtheta (theta-1)^2 = -2
  sgd_step(m, x, {0}, 0.1, 0.0, LossKind::mse);
  CHECK(m.params.at(0, ParamRole::weight)[0] == doctest::Approx(0.2).epsilon(1e-12));

  SUBCASE("lr = 0 with an empty momentum buffer leaves parameters unchanged") {
    std::vector<double> before = m.params.flatten();
    sgd_step(m, x, {0}, 0.0, 0.0, LossKind::mse);
    CHECK(m.params.flatten() == before);
  }
  SUBCASE("momentum accumulates the buffer") {
    // second step from theta=0.2: grad = 2(0.2-1) = -1.6
    // buffer = 0.5*0.2 - 0.1*(-1.6) = 0.26 -> theta = 0.46
    sgd_step(m, x, {0}, 0.1, 0.5, LossKind::mse);
    CHECK(m.params.at(0, ParamRole::weight)[0] == doctest::Approx(0.46).epsilon(1e-12));
  }
}

TEST_CASE("loss decreases on separable blobs under every dynamics kind") {
  std::mt19937_64 rng(7);
  const Architecture arch = small_mlp(4, {16}, 2);
  auto parent = make_parent(arch, 99);
  Tensor x({40, 4});
  std::vector<int> y(40);
  std::normal_distribution<double> gauss(0.0, 0.04);
  for (int i = 0; i < 40; ++i) {
    const int c = i % 2;
    y[static_cast<size_t>(i)] = c;
    for (int j = 0; j < 4; ++j)
      x[static_cast<int64_t>(i) * 4 + j] =
          std::clamp((c == 0 ? 0.3 : 0.7) + gauss(rng), 0.0, 1.0);
  }
  auto run = [&](DynamicsModel m) {
    double first = 0, last = 0;
    for (int s = 0; s < 50; ++s) {
      const double l = sgd_step(m, x, y, 0.05, 0.9);
      if (s == 0) first = l;
      last = l;
    }
    CHECK(last < first);
  };
  run(make_standard(arch, parent->params, parent->bn_stats));
  run(spawn(DynKind::linearized, parent));
  run(spawn(DynKind::centered, parent));
  run(spawn(DynKind::centered_standard, parent));
}

TEST_CASE("relative magnitude: zero at spawn, quadratic in the offset") {
  std::mt19937_64 rng(8);
  auto parent = make_parent(small_mlp(4, {6}, 2), 55);
  Tensor x = rand_batch({4}, 5, rng);
  DynamicsModel lin = spawn(DynKind::linearized, parent);
  CHECK(relative_magnitude(lin, x) == 0.0);

  ParamVector delta = parent->params.zeros_like();
  fill_normal(delta, rng, 0.05);
  lin.params += delta;
  const double r1 = relative_magnitude(lin, x);
  lin.params += delta;  // doubled offset
  const double r2 = relative_magnitude(lin, x);
  CHECK(r2 == doctest::Approx(4.0 * r1).epsilon(1e-9));

  SUBCASE("direct per-sample evaluation agrees") {
    ModelGraph g = build_graph(parent->arch);
    lin.params = parent->params + delta;
    double sum = 0;
    for (int i = 0; i < 5; ++i) {
      Tensor xi({1, 4});
      for (int j = 0; j < 4; ++j) xi[j] = x[static_cast<int64_t>(i) * 4 + j];
      Tensor f0 = forward(g, parent->params, xi, BnMode::frozen(parent->bn_stats));
      Tensor df = jvp(g, parent->params, xi, delta, BnMode::frozen(parent->bn_stats));
      sum += dot(df, df) / dot(f0, f0);
    }
    CHECK(relative_magnitude(lin, x) == doctest::Approx(sum / 5).epsilon(1e-12));
  }
  SUBCASE("wrong dynamics kind raises") {
    DynamicsModel cen = spawn(DynKind::centered, parent);
    CHECK_THROWS(relative_magnitude(cen, x));
  }
}

TEST_CASE("frozen batch norm: stats and parent kernel unchanged by training") {
  std::mt19937_64 rng(9);
  const Architecture arch = small_cnn(2, 6, {3}, 2);
  auto parent = make_parent(arch, 71);
  Tensor x = rand_batch(arch.input_shape, 8, rng);
  std::vector<int> y(8);
  for (int i = 0; i < 8; ++i) y[static_cast<size_t>(i)] = i % 2;

  DynamicsModel cen = spawn(DynKind::centered, parent);
  ClassKernel before = compute_ntk(feature_snapshot(cen), x);
  const BnStats stats_before = cen.stats;
  for (int s = 0; s < 20; ++s) sgd_step(cen, x, y, 0.05, 0.9);
  for (const auto& [layer, st] : stats_before) {
    CHECK(cen.stats.at(layer).mean == st.mean);
    CHECK(cen.stats.at(layer).var == st.var);
  }
  ClassKernel after = compute_ntk(feature_snapshot(cen), x);
  for (int c = 0; c < before.C; ++c)
    CHECK((before.diag(c) - after.diag(c)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("spawn: policy violations and missing parents raise") {
  auto parent = make_parent(small_cnn(), 5);
  CHECK_THROWS(spawn(DynKind::linearized, parent, BnPolicy::standard));
  CHECK_THROWS(spawn(DynKind::centered, parent, BnPolicy::standard));
  CHECK_NOTHROW(spawn(DynKind::centered, parent, BnPolicy::standard,
                      Precision::f64, /*bn_ablation=*/true));
  CHECK_THROWS(spawn(DynKind::linearized, nullptr));
  CHECK_THROWS(spawn(DynKind::standard, parent));
}
