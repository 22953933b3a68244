#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/bench.h"
#include "core/rng.h"
#include "support/oracles.h"

using namespace avfuse;

namespace {

BenchConfig tiny_cell(FusionMode mode) {
  BenchConfig c;
  c.id = to_string(mode);
  c.mode = mode;
  c.n_v = 24;
  c.n_a = 12;
  c.n_agg_v = 4;
  c.n_agg_a = 4;
  c.fusion_tokens = 4;
  c.dim = 32;
  c.layers = 2;
  c.heads = 4;
  c.attn_dim = 8;
  c.batch_size = 1;
  c.warmup_iters = 1;
  c.timed_iters = 3;
  return c;
}

}  // namespace

TEST_CASE("interaction counts: paper configuration and desk defaults") {
  BenchConfig paper;
  paper.n_v = 196;
  paper.n_a = 96;
  paper.n_agg_v = 8;
  paper.n_agg_a = 8;
  auto c = interaction_count(paper);
  CHECK(c.dense == 18816);
  CHECK(c.factorized == 64);
  CHECK(c.ratio == doctest::Approx(294.0));

  BenchConfig desk;
  desk.n_v = 64;
  desk.n_a = 24;
  desk.n_agg_v = 8;
  desk.n_agg_a = 8;
  auto d = interaction_count(desk);
  CHECK(d.dense == 1536);
  CHECK(d.factorized == 64);
  CHECK(d.ratio == doctest::Approx(24.0));

  BenchConfig same = desk;
  same.n_agg_v = 64;
  same.n_agg_a = 24;
  CHECK(interaction_count(same).ratio == doctest::Approx(1.0));
}

TEST_CASE("interaction count invariants over random configurations") {
  Rng rng(1);
  for (int round = 0; round < 40; ++round) {
    BenchConfig c;
    c.n_v = 1 + rng.uniform_int(256);
    c.n_a = 1 + rng.uniform_int(256);
    c.n_agg_v = 1 + rng.uniform_int(16);
    c.n_agg_a = 1 + rng.uniform_int(16);
    auto ic = interaction_count(c);
    CHECK(ic.dense == c.n_a * c.n_v);
    CHECK(ic.factorized == c.n_agg_a * c.n_agg_v);
    c.mode = FusionMode::kDense;
    CHECK(interactions_for_mode(c) == ic.dense);
    c.mode = FusionMode::kFactorized;
    CHECK(interactions_for_mode(c) == ic.factorized);
    c.mode = FusionMode::kToken;
    CHECK(interactions_for_mode(c) == 0);
    c.mode = FusionMode::kNone;
    CHECK(interactions_for_mode(c) == 0);
  }
}

TEST_CASE("bench forward produces bit-identical outputs to a normal forward") {
  ParamStore<float> store;
  Rng rng(2);
  BenchConfig cell = tiny_cell(FusionMode::kDense);
  FusionEncoder<float> enc(cell.fusion_config(), store, rng);
  auto xv = Tensor<float>::zeros({2, cell.n_v, cell.dim});
  auto xa = Tensor<float>::zeros({2, cell.n_a, cell.dim});
  for (float& v : xv.data_mut()) v = static_cast<float>(rng.uniform(-1, 1));
  for (float& v : xa.data_mut()) v = static_cast<float>(rng.uniform(-1, 1));

  EncoderOutput<float> normal = enc.forward(xv, xa);  // grads enabled
  EncoderOutput<float> benched = [&] {
    NoGradGuard ng;  // the benchmark path
    return enc.forward(xv, xa);
  }();
  for (index_t i = 0; i < normal.fusion.numel(); ++i)
    CHECK(normal.fusion.data()[i] == benched.fusion.data()[i]);
  for (index_t i = 0; i < normal.visual.numel(); ++i)
    CHECK(normal.visual.data()[i] == benched.visual.data()[i]);
}

TEST_CASE("bench reports and deterministic analytic columns") {
  BenchConfig cell = tiny_cell(FusionMode::kFactorized);
  auto a = bench_forward(cell);
  auto b = bench_forward(cell);
  CHECK_FALSE(a.failed);
  CHECK(a.samples_per_sec > 0);
  CHECK(a.peak_bytes > 0);
  CHECK(a.interactions == 16);
  CHECK(a.flops == b.flops);
  CHECK(a.interactions == b.interactions);
  CHECK(bench_csv_row(a).rfind(to_string(FusionMode::kFactorized)) != std::string::npos);
}

TEST_CASE("doubling the batch roughly doubles peak transient bytes") {
  BenchConfig one = tiny_cell(FusionMode::kDense);
  one.n_v = 48;
  one.n_a = 24;
  BenchConfig two = one;
  two.batch_size = 2;
  auto r1 = bench_forward(one);
  auto r2 = bench_forward(two);
  REQUIRE_FALSE(r1.failed);
  REQUIRE_FALSE(r2.failed);
  double ratio = static_cast<double>(r2.peak_bytes) / static_cast<double>(r1.peak_bytes);
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.5);
}

TEST_CASE("sweep: single cell, failure capture, empty grid") {
  std::vector<BenchConfig> grid{tiny_cell(FusionMode::kToken)};
  int rows = 0;
  auto reports = sweep(grid, [&](const BenchReport&) { ++rows; });
  CHECK(reports.size() == 1);
  CHECK(rows == 1);
  CHECK_FALSE(reports[0].failed);

  BenchConfig bad = tiny_cell(FusionMode::kDense);
  bad.timed_iters = 1;  // below the contract minimum
  std::vector<BenchConfig> grid2{bad, tiny_cell(FusionMode::kNone)};
  auto reports2 = sweep(grid2);
  REQUIRE(reports2.size() == 2);
  CHECK(reports2[0].failed);
  CHECK_FALSE(reports2[1].failed);
  CHECK(bench_csv_row(reports2[0]).find("failed") != std::string::npos);

  CHECK_THROWS_AS(sweep({}), ConfigError);
}

TEST_CASE("analytic flops: dense grows with the pair count, factorized stays near-flat") {
  auto dense_at = [](index_t nv, index_t na) {
    BenchConfig c = tiny_cell(FusionMode::kDense);
    c.n_v = nv;
    c.n_a = na;
    return flops_estimate(c);
  };
  auto fact_at = [](index_t nv, index_t na) {
    BenchConfig c = tiny_cell(FusionMode::kFactorized);
    c.n_v = nv;
    c.n_a = na;
    return flops_estimate(c);
  };
  // quadruple the pair count: dense fusion cost scales ~4x, factorized much less
  double d_small = dense_at(32, 16), d_big = dense_at(64, 32);
  double f_small = fact_at(32, 16), f_big = fact_at(64, 32);
  CHECK(d_big / d_small > 2.5);
  CHECK(f_big / f_small < 2.2);  // only the modality branches grow
  CHECK(d_big > f_big);
}
