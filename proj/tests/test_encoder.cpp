#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "core/encoder.h"
#include "support/oracles.h"

using namespace avfuse;
using oracles::max_rel_error_fd;
using oracles::random_tensor;

namespace {

void zero_params(ParamStore<double>& store, std::initializer_list<const char*> suffixes) {
  for (const std::string& name : store.names())
    for (const char* suf : suffixes)
      if (name.ends_with(suf))
        for (double& v : store.at(name).data_mut()) v = 0.0;
}

void copy_shared_params(const ParamStore<double>& src, ParamStore<double>& dst) {
  for (const std::string& name : dst.names())
    if (src.contains(name)) {
      auto s = src.at(name).data();
      auto d = dst.at(name).data_mut();
      REQUIRE(s.size() == d.size());
      std::copy(s.begin(), s.end(), d.begin());
    }
}

void check_prob_rows(const AttnTrace<double>& trace, index_t expect_keys = -1) {
  REQUIRE_FALSE(trace.empty());
  for (const Tensor<double>& probs : trace) {
    if (expect_keys >= 0) CHECK(probs.dim(-1) == expect_keys);
    index_t nk = probs.dim(-1);
    index_t rows = probs.numel() / nk;
    for (index_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (index_t j = 0; j < nk; ++j) acc += probs.data()[r * nk + j];
      CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

Tensor<double> permute_rows(const Tensor<double>& x, const std::vector<index_t>& perm) {
  // [B,N,D] with rows reordered per sample
  auto out = Tensor<double>::zeros(x.shape());
  index_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  for (index_t s = 0; s < b; ++s)
    for (index_t r = 0; r < n; ++r)
      for (index_t j = 0; j < d; ++j)
        out.data_mut()[(s * n + r) * d + j] = x.data()[(s * n + perm[static_cast<size_t>(r)]) * d + j];
  return out;
}

}  // namespace

TEST_CASE("modality block reduces to plain self-attention without fusion tokens") {
  Rng rng(1);
  ParamStore<double> store;
  auto blk = make_self_block(store, "blk", 8, 2, 4, 2.0, rng);
  auto x = random_tensor({2, 5, 8}, rng, false);
  auto empty_fusion = Tensor<double>::zeros({2, 0, 8});
  auto a = modality_block(x, Tensor<double>(), blk, 2);
  auto b = modality_block(x, empty_fusion, blk, 2);
  for (index_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("modality block residual identity with zeroed projections") {
  Rng rng(2);
  ParamStore<double> store;
  auto blk = make_self_block(store, "blk", 8, 2, 4, 4.0, rng);
  zero_params(store, {".attn.wv", ".attn.wo", ".mlp.w2"});
  auto x = random_tensor({2, 4, 8}, rng, false);
  auto f = random_tensor({2, 3, 8}, rng, false);
  auto y = modality_block(x, f, blk, 2);
  for (index_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("modality block attention rows sum to one over N+F keys") {
  Rng rng(3);
  ParamStore<double> store;
  auto blk = make_self_block(store, "blk", 8, 2, 4, 1.0, rng);
  auto x = random_tensor({2, 4, 8}, rng, false);
  auto f = random_tensor({2, 3, 8}, rng, false);
  AttnTrace<double> trace;
  modality_block(x, f, blk, 2, &trace);
  check_prob_rows(trace, 7);
  CHECK(trace[0].dim(-2) == 4);  // queries are the modality tokens only
}

TEST_CASE("token fusion block") {
  Rng rng(4);
  ParamStore<double> store;
  auto blk = make_self_block(store, "mm", 8, 2, 3, 1.0, rng);
  auto x_mm = random_tensor({2, 3, 8}, rng, false);
  auto x_v = random_tensor({2, 5, 8}, rng, false);
  auto x_a = random_tensor({2, 4, 8}, rng, false);

  AttnTrace<double> trace;
  auto out = token_fusion_block(x_mm, x_v, x_a, blk, 2, 3, &trace);
  CHECK(out.shape() == Shape{2, 3, 8});
  check_prob_rows(trace, 3 + 5 + 4);

  // permuting visual tokens leaves the output unchanged
  Rng prng(5);
  for (int round = 0; round < 3; ++round) {
    auto perm = prng.permutation(5);
    auto out_p = token_fusion_block(x_mm, permute_rows(x_v, perm), x_a, blk, 2, 3);
    for (index_t i = 0; i < out.numel(); ++i)
      CHECK(out_p.data()[i] == doctest::Approx(out.data()[i]).epsilon(1e-9));
  }

  ParamStore<double> zstore;
  auto zblk = make_self_block(zstore, "mm", 8, 2, 3, 1.0, rng);
  zero_params(zstore, {".attn.wv", ".attn.wo", ".mlp.w2"});
  auto zout = token_fusion_block(x_mm, x_v, x_a, zblk, 2, 3);
  for (index_t i = 0; i < x_mm.numel(); ++i) CHECK(zout.data()[i] == x_mm.data()[i]);
}

TEST_CASE("interaction grid layout and oracle") {
  Rng rng(6);
  index_t d = 6, na = 3, nv = 4;
  auto xa = random_tensor({2, na, d}, rng, false);
  auto xv = random_tensor({2, nv, d}, rng, false);

  auto eye = Tensor<double>::zeros({d, d});
  for (index_t i = 0; i < d; ++i) eye.data_mut()[i * d + i] = 1.0;
  auto zero = Tensor<double>::zeros({d, d});

  auto grid = interaction_grid(xa, xv, eye, zero);
  CHECK(grid.shape() == Shape{2, na * nv, d});
  for (index_t s = 0; s < 2; ++s)
    for (index_t i = 0; i < na; ++i)
      for (index_t j = 0; j < nv; ++j)
        for (index_t k = 0; k < d; ++k)
          CHECK(grid.at({s, i * nv + j, k}) == doctest::Approx(xa.at({s, i, k})));

  auto xa1 = random_tensor({1, 1, d}, rng, false);
  auto xv1 = random_tensor({1, 1, d}, rng, false);
  auto wa = random_tensor({d, d}, rng, false);
  auto wv = random_tensor({d, d}, rng, false);
  auto g1 = interaction_grid(xa1, xv1, wa, wv);
  CHECK(g1.shape() == Shape{1, 1, d});

  // brute-force per-pair oracle
  auto g = interaction_grid(xa, xv, wa, wv);
  for (index_t s = 0; s < 2; ++s)
    for (index_t i = 0; i < na; ++i)
      for (index_t j = 0; j < nv; ++j)
        for (index_t k = 0; k < d; ++k) {
          double expect = 0;
          for (index_t q = 0; q < d; ++q)
            expect += xa.at({s, i, q}) * wa.at({q, k}) + xv.at({s, j, q}) * wv.at({q, k});
          CHECK(g.at({s, i * nv + j, k}) == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("cross attention examples and gradient") {
  Rng rng(7);
  ParamStore<double> store;
  auto blk = make_cross_block(store, "x", 8, 2, 3, 1.0, rng);

  auto q = random_tensor({2, 3, 8}, rng, false);
  auto single = random_tensor({2, 1, 8}, rng, false);
  AttnTrace<double> trace;
  cross_attention(q, single, blk, 2, 3, &trace);
  for (double v : trace[0].data()) CHECK(v == 1.0);  // lone key takes all mass

  ParamStore<double> zstore;
  auto zblk = make_cross_block(zstore, "x", 8, 2, 3, 1.0, rng);
  zero_params(zstore, {".attn.wv", ".attn.wo", ".mlp.w2"});
  auto kv = random_tensor({2, 5, 8}, rng, false);
  auto zout = cross_attention(q, kv, zblk, 2, 3);
  for (index_t i = 0; i < q.numel(); ++i) CHECK(zout.data()[i] == q.data()[i]);

  // finite differences through the whole block, inputs and parameters
  auto qg = random_tensor({1, 3, 8}, rng, true);
  auto kg = random_tensor({1, 4, 8}, rng, true);
  auto w = random_tensor({1, 3, 8}, rng, false);
  auto loss = sum(mul(cross_attention(qg, kg, blk, 2, 3), w));
  loss.backward();
  auto eval = [&]() {
    NoGradGuard ng;
    return sum(mul(cross_attention(qg, kg, blk, 2, 3), w)).item();
  };
  CHECK(max_rel_error_fd(eval, qg, qg.grad()) < 1e-4);
  CHECK(max_rel_error_fd(eval, kg, kg.grad()) < 1e-4);
  for (const char* pname : {"x.attn.wq", "x.attn.wv", "x.ln_kv.g", "x.mlp.w1"}) {
    auto& p = store.at(pname);
    CAPTURE(pname);
    CHECK(max_rel_error_fd(eval, p, p.grad()) < 1e-4);
  }
}

TEST_CASE("dense fusion block reduction and permutation invariance") {
  Rng rng(8);
  ParamStore<double> store;
  auto blk = make_cross_block(store, "mm", 8, 2, 3, 1.0, rng);
  auto wa = random_tensor({8, 8}, rng, false);
  auto wv = random_tensor({8, 8}, rng, false);

  auto x_mm = random_tensor({2, 3, 8}, rng, false);
  auto xa1 = random_tensor({2, 1, 8}, rng, false);
  auto xv1 = random_tensor({2, 1, 8}, rng, false);
  auto via_block = dense_fusion_block(x_mm, xa1, xv1, wa, wv, blk, 2, 3);
  auto via_manual = cross_attention(x_mm, interaction_grid(xa1, xv1, wa, wv), blk, 2, 3);
  for (index_t i = 0; i < via_block.numel(); ++i)
    CHECK(via_block.data()[i] == via_manual.data()[i]);

  auto xa = random_tensor({2, 4, 8}, rng, false);
  auto xv = random_tensor({2, 5, 8}, rng, false);
  auto base = dense_fusion_block(x_mm, xa, xv, wa, wv, blk, 2, 3);
  CHECK(base.shape() == Shape{2, 3, 8});
  std::vector<index_t> swap01{1, 0, 2, 3};
  auto swapped = dense_fusion_block(x_mm, permute_rows(xa, swap01), xv, wa, wv, blk, 2, 3);
  for (index_t i = 0; i < base.numel(); ++i)
    CHECK(swapped.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-9));
}

TEST_CASE("aggregation block examples") {
  Rng rng(9);
  ParamStore<double> store;
  auto blk = make_cross_block(store, "agg", 8, 2, 3, 1.0, rng);
  auto agg = random_tensor({2, 2, 8}, rng, false);

  auto lone = random_tensor({2, 1, 8}, rng, false);
  AttnTrace<double> trace;
  aggregate_tokens(agg, lone, blk, 2, 3, &trace);
  for (double v : trace[0].data()) CHECK(v == 1.0);

  ParamStore<double> zstore;
  auto zblk = make_cross_block(zstore, "agg", 8, 2, 3, 1.0, rng);
  zero_params(zstore, {".attn.wv", ".attn.wo", ".mlp.w2"});
  auto xm = random_tensor({2, 6, 8}, rng, false);
  auto zout = aggregate_tokens(agg, xm, zblk, 2, 3);
  for (index_t i = 0; i < agg.numel(); ++i) CHECK(zout.data()[i] == agg.data()[i]);

  auto base = aggregate_tokens(agg, xm, blk, 2, 3);
  Rng prng(10);
  auto perm = prng.permutation(6);
  auto out_p = aggregate_tokens(agg, permute_rows(xm, perm), blk, 2, 3);
  for (index_t i = 0; i < base.numel(); ++i)
    CHECK(out_p.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-9));
}

namespace {

FusionConfig tiny_config(FusionMode mode) {
  FusionConfig cfg;
  cfg.layers = 2;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.attn_dim = 3;
  cfg.fusion_tokens = 3;
  cfg.agg_tokens_a = 2;
  cfg.agg_tokens_v = 2;
  cfg.mlp_ratio_modality = 2.0;
  cfg.mlp_ratio_fusion = 1.0;
  cfg.fusion_mode = mode;
  if (mode != FusionMode::kNone) cfg.fusion_layers = FusionConfig::all_layers(2);
  return cfg;
}

}  // namespace

TEST_CASE("factorized equals dense under the degenerate configuration") {
  Rng rng_d(11), rng_f(99);
  ParamStore<double> dense_store, fact_store;
  FusionConfig dense_cfg = tiny_config(FusionMode::kDense);
  FusionConfig fact_cfg = tiny_config(FusionMode::kFactorized);
  fact_cfg.agg_tokens_a = 4;  // equal to token counts below
  fact_cfg.agg_tokens_v = 5;
  fact_cfg.agg_identity_hook = true;
  FusionEncoder<double> dense(dense_cfg, dense_store, rng_d);
  FusionEncoder<double> fact(fact_cfg, fact_store, rng_f);
  copy_shared_params(dense_store, fact_store);

  Rng rng(12);
  auto xa = random_tensor({2, 4, 8}, rng, false);
  auto xv = random_tensor({2, 5, 8}, rng, false);
  auto out_d = dense.forward(xv, xa);
  auto out_f = fact.forward(xv, xa);
  for (index_t i = 0; i < out_d.fusion.numel(); ++i)
    CHECK(std::fabs(out_f.fusion.data()[i] - out_d.fusion.data()[i]) <= 1e-6);
  for (index_t i = 0; i < out_d.visual.numel(); ++i)
    CHECK(std::fabs(out_f.visual.data()[i] - out_d.visual.data()[i]) <= 1e-6);
  for (index_t i = 0; i < out_d.audio.numel(); ++i)
    CHECK(std::fabs(out_f.audio.data()[i] - out_d.audio.data()[i]) <= 1e-6);
}

TEST_CASE("no-fusion decouples the branches") {
  Rng rng_m(13);
  ParamStore<double> store;
  FusionEncoder<double> enc(tiny_config(FusionMode::kNone), store, rng_m);
  Rng rng(14);
  auto xa = random_tensor({2, 4, 8}, rng, false);
  auto xv = random_tensor({2, 5, 8}, rng, false);
  auto out = enc.forward(xv, xa);

  // fusion output equals the initial parameters, broadcast over the batch
  auto& tok = store.at("tokens.fusion");
  for (index_t s = 0; s < 2; ++s)
    for (index_t f = 0; f < 3; ++f)
      for (index_t j = 0; j < 8; ++j)
        CHECK(out.fusion.at({s, f, j}) == tok.at({f, j}));

  // perturbing audio leaves visual outputs bitwise unchanged
  auto xa2 = xa.detach();
  for (double& v : xa2.data_mut()) v += 0.37;
  auto out2 = enc.forward(xv, xa2);
  for (index_t i = 0; i < out.visual.numel(); ++i)
    CHECK(out2.visual.data()[i] == out.visual.data()[i]);
  bool audio_changed = false;
  for (index_t i = 0; i < out.audio.numel(); ++i)
    if (out2.audio.data()[i] != out.audio.data()[i]) audio_changed = true;
  CHECK(audio_changed);
}

TEST_CASE("cross-modal gradients flow only when fusion is enabled") {
  for (FusionMode mode : {FusionMode::kNone, FusionMode::kToken, FusionMode::kDense,
                          FusionMode::kFactorized}) {
    Rng rng_m(15);
    ParamStore<double> store;
    FusionEncoder<double> enc(tiny_config(mode), store, rng_m);
    Rng rng(16);
    auto xa = random_tensor({1, 4, 8}, rng, true);
    auto xv = random_tensor({1, 5, 8}, rng, false);
    auto out = enc.forward(xv, xa);
    sum(mul(out.visual, out.visual)).backward();
    if (mode == FusionMode::kNone) {
      CHECK_FALSE(xa.has_grad());
    } else {
      REQUIRE(xa.has_grad());
      double mx = 0;
      for (double g : xa.grad()) mx = std::max(mx, std::fabs(g));
      CAPTURE(to_string(mode));
      CHECK(mx > 1e-12);
    }
  }
}

TEST_CASE("late fusion only updates at the chosen layer") {
  Rng rng_m(17);
  ParamStore<double> store;
  FusionConfig cfg = tiny_config(FusionMode::kDense);
  cfg.fusion_layers = {2};  // late
  FusionEncoder<double> enc(cfg, store, rng_m);
  Rng rng(18);
  auto xa = random_tensor({1, 4, 8}, rng, false);
  auto xv = random_tensor({1, 5, 8}, rng, false);
  AttnTrace<double> trace;
  auto out = enc.forward(xv, xa, &trace);
  CHECK(out.fusion.shape() == Shape{1, 3, 8});
  check_prob_rows(trace);
  // layer 1 has no fusion params
  CHECK_FALSE(store.contains("enc.l01.grid.wa"));
  CHECK(store.contains("enc.l02.grid.wa"));
}

TEST_CASE("all attention rows sum to one across a full forward") {
  for (FusionMode mode : {FusionMode::kToken, FusionMode::kDense, FusionMode::kFactorized}) {
    Rng rng_m(19);
    ParamStore<double> store;
    FusionEncoder<double> enc(tiny_config(mode), store, rng_m);
    Rng rng(20);
    auto xa = random_tensor({2, 4, 8}, rng, false);
    auto xv = random_tensor({2, 5, 8}, rng, false);
    AttnTrace<double> trace;
    enc.forward(xv, xa, &trace);
    check_prob_rows(trace);
  }
}

TEST_CASE("encoder rejects invalid configurations before compute") {
  FusionConfig cfg = tiny_config(FusionMode::kDense);
  cfg.fusion_layers = {5};
  ParamStore<double> store;
  Rng rng(21);
  CHECK_THROWS_AS(FusionEncoder<double>(cfg, store, rng), ConfigError);

  FusionConfig cfg2 = tiny_config(FusionMode::kNone);
  cfg2.fusion_layers = {1};
  ParamStore<double> store2;
  CHECK_THROWS_AS(FusionEncoder<double>(cfg2, store2, rng), ConfigError);

  FusionConfig cfg3 = tiny_config(FusionMode::kDense);
  cfg3.dim = 9;  // not divisible by heads
  ParamStore<double> store3;
  CHECK_THROWS_AS(FusionEncoder<double>(cfg3, store3, rng), ConfigError);
}
