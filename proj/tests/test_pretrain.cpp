#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/gradcheck.h"
#include "core/model.h"
#include "core/optim.h"
#include "core/train.h"
#include "support/oracles.h"

using namespace avfuse;

namespace {

FusionConfig small_fusion(FusionMode mode = FusionMode::kFactorized) {
  FusionConfig fc;
  fc.layers = 2;
  fc.dim = 32;
  fc.heads = 4;
  fc.attn_dim = 8;
  fc.fusion_tokens = 4;
  fc.agg_tokens_a = 2;
  fc.agg_tokens_v = 2;
  fc.mlp_ratio_modality = 2.0;
  fc.mlp_ratio_fusion = 1.0;
  fc.fusion_mode = mode;
  if (mode != FusionMode::kNone) fc.fusion_layers = FusionConfig::all_layers(fc.layers);
  return fc;
}

DecoderConfig small_decoder() {
  DecoderConfig dc;
  dc.depth = 1;
  dc.dim = 32;
  dc.heads = 4;
  return dc;
}

DataConfig small_data() {
  DataConfig d;
  d.image_size = 16;
  d.image_channels = 1;
  d.image_patch = 4;
  d.spec_bins = 8;
  d.spec_frames = 12;
  d.spec_patch = 4;
  return d;
}

SyntheticSpec small_synth() {
  SyntheticSpec s;
  s.image_size = 16;
  s.image_channels = 1;
  s.spec_bins = 8;
  s.spec_frames = 12;
  return s;
}

}  // namespace

TEST_CASE("mae_loss examples and brute-force oracle") {
  Rng rng(1);
  auto x = oracles::random_tensor({3, 5}, rng, false);
  CHECK(mae_loss(x, x).item() == doctest::Approx(0.0));

  auto ones = Tensor<double>::full({1, 7}, 1.0);
  auto zero = Tensor<double>::zeros({1, 7});
  CHECK(mae_loss(ones, zero).item() == doctest::Approx(1.0));

  auto p = oracles::random_tensor({4, 6}, rng, false);
  auto t = oracles::random_tensor({4, 6}, rng, false);
  double acc = 0;
  for (index_t i = 0; i < p.numel(); ++i) {
    double d = p.data()[i] - t.data()[i];
    acc += d * d;
  }
  CHECK(mae_loss(p, t).item() == doctest::Approx(acc / 24.0).epsilon(1e-6));

  auto bad = Tensor<double>::zeros({4, 5});
  CHECK_THROWS_AS(mae_loss(p, bad), DimensionError);

  auto empty = Tensor<double>::zeros({2, 0, 6});
  CHECK(mae_loss(empty, empty).item() == 0.0);
}

TEST_CASE("joint loss composition and per-branch contributions") {
  Model<double> model(small_fusion(), small_decoder(), small_data(), 5);
  Rng rng(2);
  auto batch = generate_synthetic_batch<double>(small_synth(), 2, rng);
  auto images = stack_images(batch);
  auto specs = stack_spectrograms(batch);
  auto pv = step_mask_plans(16, 0.5, 2, 3, 0, 1);
  auto pa = step_mask_plans(6, 0.5, 2, 3, 0, 2);
  auto out = model.pretrain_forward(images, specs, pv, pa);
  CHECK(out.loss_total.item() == out.loss_v.item() + out.loss_a.item());
  CHECK(out.loss_v.item() > 0);
  CHECK(out.loss_a.item() > 0);

  // ratio 0 on audio: the audio branch contributes no loss
  auto pa0 = step_mask_plans(6, 0.0, 2, 3, 0, 2);
  auto out0 = model.pretrain_forward(images, specs, pv, pa0);
  CHECK(out0.loss_a.item() == 0.0);
  CHECK(out0.loss_total.item() == out0.loss_v.item());
  CHECK(out0.pred_a.dim(1) == 0);
}

TEST_CASE("audio weights receive gradient from the visual loss iff fusion is on") {
  for (FusionMode mode : {FusionMode::kNone, FusionMode::kFactorized}) {
    Model<double> model(small_fusion(mode), small_decoder(), small_data(), 5);
    Rng rng(3);
    auto batch = generate_synthetic_batch<double>(small_synth(), 2, rng);
    auto pv = step_mask_plans(16, 0.5, 2, 3, 0, 1);
    auto pa = step_mask_plans(6, 0.5, 2, 3, 0, 2);
    auto out = model.pretrain_forward(stack_images(batch), stack_spectrograms(batch), pv, pa);
    out.loss_v.backward();
    double mx = 0;
    for (const char* name : {"enc.l01.a.attn.wq", "embed.audio.w"}) {
      auto& p = model.params().at(name);
      for (double g : p.grad()) mx = std::max(mx, std::fabs(g));
    }
    if (mode == FusionMode::kNone) {
      CHECK(mx == 0.0);
    } else {
      CHECK(mx > 1e-12);
    }
  }
}

TEST_CASE("decoder head isolation and masked-order placement") {
  Model<double> model(small_fusion(), small_decoder(), small_data(), 7);
  Rng rng(4);
  auto batch = generate_synthetic_batch<double>(small_synth(), 1, rng);
  auto images = stack_images(batch);
  auto specs = stack_spectrograms(batch);
  auto pv = step_mask_plans(16, 0.5, 1, 9, 0, 1);
  auto pa = step_mask_plans(6, 0.5, 1, 9, 0, 2);

  // route a known patch through the head: zero head.w, bias = that patch
  auto gt = image_patches(images, 4);  // [1,16,16]
  index_t probe_row = pv[0].masked[1];
  auto& hw = model.params().at("dec.v.head.w");
  for (double& v : hw.data_mut()) v = 0.0;
  auto& hb = model.params().at("dec.v.head.b");
  for (index_t j = 0; j < 16; ++j) hb.data_mut()[j] = gt.at({0, probe_row, j});

  auto out = model.pretrain_forward(images, specs, pv, pa);
  CHECK(out.pred_v.shape() ==
        Shape{1, static_cast<index_t>(pv[0].masked.size()), 16});
  for (index_t r = 0; r < out.pred_v.dim(1); ++r)
    for (index_t j = 0; j < 16; ++j)
      CHECK(out.pred_v.at({0, r, j}) == doctest::Approx(gt.at({0, probe_row, j})));
}

TEST_CASE("decoder fusion_only policy runs and differs from the default") {
  DecoderConfig fo = small_decoder();
  fo.input_policy = DecoderInputPolicy::kFusionOnly;
  Model<double> a(small_fusion(), small_decoder(), small_data(), 11);
  Model<double> b(small_fusion(), fo, small_data(), 11);
  Rng rng(5);
  auto batch = generate_synthetic_batch<double>(small_synth(), 2, rng);
  auto pv = step_mask_plans(16, 0.5, 2, 13, 0, 1);
  auto pa = step_mask_plans(6, 0.5, 2, 13, 0, 2);
  auto oa = a.pretrain_forward(stack_images(batch), stack_spectrograms(batch), pv, pa);
  auto ob = b.pretrain_forward(stack_images(batch), stack_spectrograms(batch), pv, pa);
  CHECK(oa.pred_v.shape() == ob.pred_v.shape());
  bool differs = false;
  for (index_t i = 0; i < oa.pred_v.numel(); ++i)
    if (oa.pred_v.data()[i] != ob.pred_v.data()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("adam first step and stationarity") {
  ParamStore<double> store;
  Rng rng(6);
  auto& p = store.create("w", {4}, Init::kXavier, rng, false);
  Adam<double> opt(store);
  std::vector<double> before(p.data().begin(), p.data().end());

  // zero gradients, zero decay: parameters unchanged
  p.impl()->ensure_grad();
  opt.step(0.01, 0.0);
  for (index_t i = 0; i < 4; ++i) CHECK(p.data()[i] == before[i]);

  // first step with gradient g moves against sign(g) by about lr
  ParamStore<double> store2;
  auto& q = store2.create("w", {4}, Init::kXavier, rng, false);
  Adam<double> opt2(store2);
  std::vector<double> start(q.data().begin(), q.data().end());
  q.impl()->ensure_grad();
  std::vector<double> g{0.5, -2.0, 3.0, -0.25};
  for (index_t i = 0; i < 4; ++i) q.impl()->grad[static_cast<size_t>(i)] = g[static_cast<size_t>(i)];
  opt2.step(0.01, 0.0);
  for (index_t i = 0; i < 4; ++i) {
    double delta = q.data()[i] - start[static_cast<size_t>(i)];
    CHECK(delta * g[static_cast<size_t>(i)] < 0);  // opposite sign to the gradient
    CHECK(std::fabs(delta) == doctest::Approx(0.01).epsilon(1e-6));
  }
}

TEST_CASE("adam trajectory matches an independent implementation") {
  ParamStore<double> store;
  Rng rng(7);
  auto& p = store.create("x", {1}, Init::kZeros, rng, true);
  p.data_mut()[0] = 5.0;
  Adam<double> opt(store);
  p.impl()->ensure_grad();

  std::vector<double> ref{5.0};
  oracles::ReferenceAdam ref_opt(1, 0.05, 0.9, 0.999, 1e-8, 0.01);

  for (int step = 0; step < 100; ++step) {
    // quadratic: d/dx (x-3)^2 = 2(x-3)
    p.impl()->grad[0] = 2.0 * (p.data()[0] - 3.0);
    opt.step(0.05, 0.01);
    std::vector<double> g{2.0 * (ref[0] - 3.0)};
    ref_opt.update(ref, g);
    CHECK(std::fabs(p.data()[0] - ref[0]) < 1e-10);
  }
}

TEST_CASE("learning rate schedule") {
  ScheduleConfig cfg;
  cfg.base_lr = 1.5e-4;
  cfg.batch_size = 256;
  cfg.warmup_steps = 40;
  cfg.total_steps = 200;
  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(40, cfg) == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(lr_schedule(200, cfg) <= 1e-8);
  // continuity at the warmup/cosine junction
  CHECK(std::fabs(lr_schedule(40, cfg) - lr_schedule(39, cfg)) < 1.5e-4 / 40.0 + 1e-12);
  // linear scaling rule
  ScheduleConfig half = cfg;
  half.batch_size = 128;
  CHECK(lr_schedule(40, half) == doctest::Approx(0.75e-4));
  // monotone decay after warmup
  for (index_t s = 41; s <= 200; ++s) CHECK(lr_schedule(s, cfg) <= lr_schedule(s - 1, cfg));
}

namespace {

std::vector<StepRecord> run_small_training(uint64_t seed, int steps,
                                           FusionMode mode = FusionMode::kFactorized,
                                           double base_lr = 4e-3) {
  Model<float> model(small_fusion(mode), small_decoder(), small_data(), seed);
  Adam<float> opt(model.params());
  TrainConfig tc;
  tc.base_lr = base_lr;
  tc.batch_size = 8;
  tc.warmup_epochs = 1;
  tc.total_epochs = 10;
  tc.total_steps = steps;
  tc.mask_ratio_v = 0.5;
  tc.mask_ratio_a = 0.5;
  SyntheticSource<float> source(small_synth(), 64);
  std::vector<StepRecord> records;
  pretrain(model, opt, source, tc, seed, 0,
           [&](const StepRecord& r) { records.push_back(r); });
  return records;
}

}  // namespace

TEST_CASE("training reduces the joint loss and is deterministic per seed") {
  auto a = run_small_training(21, 60);
  REQUIRE(a.size() == 60);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) early += a[static_cast<size_t>(i)].loss_total;
  for (int i = 50; i < 60; ++i) late += a[static_cast<size_t>(i)].loss_total;
  CHECK(late < early);

  auto b = run_small_training(21, 60);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss_total == b[i].loss_total);
    CHECK(a[i].lr == b[i].lr);
  }

  auto c = run_small_training(22, 60);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].loss_total != c[i].loss_total) differs = true;
  CHECK(differs);
}

TEST_CASE("non-finite loss aborts with a diagnostic naming the step") {
  CHECK_THROWS_WITH_AS(run_small_training(23, 40, FusionMode::kFactorized, 1e9),
                       doctest::Contains("non-finite loss at step"), NumericError);
}

TEST_CASE("gradcheck suite: ops pass, scope filters, sign flip trips") {
  GradcheckOptions ops_only;
  ops_only.scope = "op.";
  auto results = run_gradcheck(ops_only);
  CHECK(results.size() >= 8);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.pass);
  }

  GradcheckOptions one;
  one.scope = "cross_attention";
  auto only = run_gradcheck(one);
  REQUIRE(only.size() == 1);
  CHECK(only[0].name == "block.cross_attention");
  CHECK(only[0].pass);

  GradcheckOptions flip;
  flip.scope = "op.gelu";
  flip.flip_sign_check = "op.gelu";
  auto flipped = run_gradcheck(flip);
  REQUIRE(flipped.size() == 1);
  CHECK_FALSE(flipped[0].pass);
}
