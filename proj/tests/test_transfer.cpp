#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ntk/transfer.hpp"
#include "test_util.hpp"

using namespace ntk;
using namespace tutil;

namespace {

DynamicsModel toy_target(int d, std::mt19937_64& rng) {
  Architecture arch = small_mlp(d, {}, 2);
  ParamVector p = zero_params(build_graph(arch));
  fill_normal(p, rng, 1.0);
  return make_standard(arch, std::move(p), BnStats{}, BnPolicy::frozen);
}

}  // namespace

TEST_CASE("transfer_record: plain accuracy arithmetic") {
  TransferRecord r = transfer_record("stan_t30", 30, 0.9, 0.6, 0.5);
  CHECK(r.valid);
  CHECK(r.tau == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r.source_kind == "stan_t30");
  CHECK(r.t_prime == 30);

  SUBCASE("tau exceeds 1 when the source attack beats the self attack") {
    TransferRecord hot = transfer_record("cen_t30", 30, 0.9, 0.3, 0.5);
    CHECK(hot.valid);
    CHECK(hot.tau == doctest::Approx(1.5).epsilon(1e-15));
  }
  SUBCASE("benign-equivalent source gives tau exactly 0") {
    CHECK(transfer_record("id", 0, 0.9, 0.9, 0.5).tau == 0.0);
  }
  SUBCASE("self-equivalent source gives tau exactly 1") {
    CHECK(transfer_record("self", 0, 0.9, 0.5, 0.5).tau == 1.0);
  }
  SUBCASE("zero or negative denominator flags the record invalid") {
    TransferRecord flat = transfer_record("x", 0, 0.8, 0.7, 0.8);
    CHECK_FALSE(flat.valid);
    CHECK(std::isnan(flat.tau));
    TransferRecord neg = transfer_record("x", 0, 0.5, 0.7, 0.8);
    CHECK_FALSE(neg.valid);
    CHECK(std::isnan(neg.tau));
  }
}

TEST_CASE("transferability: self source scores 1, benign source scores 0") {
  std::mt19937_64 rng(21);
  const int d = 8, n = 64;
  DynamicsModel target = toy_target(d, rng);
  Tensor x({n, d});
  fill_uniform(x, rng, 0.3, 0.7);
  // the target's own predictions as labels: benign accuracy is exactly 1
  std::vector<int> y = predict_classes(predict(target, x));

  PgdConfig cfg;
  cfg.epsilon = 0.25;  // large enough to flip a good fraction of the batch
  cfg.steps = 20;
  const uint64_t seed = 5;

  AdversarialBatch self_batch = pgd_attack(target, x, y, cfg, seed, "self_like");
  const double acc_self = benign_accuracy(target, self_batch.perturbed, y);
  REQUIRE(acc_self < 1.0);  // denominator must be nonzero for tau to exist

  AdversarialBatch benign_like;
  benign_like.originals = x;
  benign_like.perturbed = x;
  benign_like.labels = y;
  benign_like.generator_tag = "benign_like";

  std::vector<TransferSource> sources{{self_batch, 30}, {benign_like, 0},
                                      {self_batch, 30}};
  auto recs = transferability(target, sources, x, y, cfg, seed);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].tau == 1.0);
  CHECK(recs[0].valid);
  CHECK(recs[1].tau == 0.0);
  CHECK(recs[1].acc_benign == 1.0);
  // duplicated sources produce identical records
  CHECK(recs[2].tau == recs[0].tau);
  CHECK(recs[2].acc_on_source == recs[0].acc_on_source);

  SUBCASE("sources with different originals or labels are rejected") {
    AdversarialBatch shifted = self_batch;
    shifted.originals[0] += 1e-6;
    CHECK_THROWS(transferability(target, {{shifted, 1}}, x, y, cfg, seed));
    AdversarialBatch relabeled = self_batch;
    relabeled.labels[0] = 1 - relabeled.labels[0];
    CHECK_THROWS(transferability(target, {{relabeled, 1}}, x, y, cfg, seed));
  }
}

TEST_CASE("transfer csv layout") {
  std::vector<TransferRecord> recs;
  recs.push_back(transfer_record("stan_t30", 30, 1.0, 0.75, 0.5));
  recs.push_back(transfer_record("flat", 2, 0.5, 0.5, 0.5));
  const auto dir = std::filesystem::temp_directory_path() / "ntk_transfer_test";
  std::filesystem::create_directories(dir);
  const auto file = dir / "transfer.csv";
  write_transfer_csv(file, recs);

  std::ifstream is(file);
  std::string line;
  REQUIRE(bool(std::getline(is, line)));
  CHECK(line == "source_kind,t_prime,acc_benign,acc_on_source,acc_self,tau,valid");
  REQUIRE(bool(std::getline(is, line)));
  CHECK(line == "stan_t30,30,1,0.75,0.5,0.5,1");
  REQUIRE(bool(std::getline(is, line)));
  CHECK(line == "flat,2,0.5,0.5,0.5,nan,0");
  CHECK_FALSE(bool(std::getline(is, line)));
}
