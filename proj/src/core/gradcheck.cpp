#include "core/gradcheck.h"

#include <cmath>
#include <functional>

#include "core/model.h"
#include "core/train.h"

namespace avfuse {

namespace {

using D = double;
using Td = Tensor<double>;

Td rand_t(Shape shape, Rng& rng, bool rg, double lo = -1.0, double hi = 1.0) {
  Td t = Td::zeros(std::move(shape), rg);
  for (double& v : t.data_mut()) v = rng.uniform(lo, hi);
  return t;
}

// Max relative error between central differences and sign * analytic.
double fd_against(const std::function<double()>& eval, Td& wrt,
                  std::span<const double> analytic, double sign,
                  const std::vector<index_t>* subset = nullptr, double h = 1e-5) {
  double worst = 0.0;
  auto data = wrt.data_mut();
  auto probe = [&](size_t i) {
    double keep = data[i];
    data[i] = keep + h;
    double up = eval();
    data[i] = keep - h;
    double dn = eval();
    data[i] = keep;
    double num = (up - dn) / (2.0 * h);
    double ana = analytic.empty() ? 0.0 : sign * analytic[i];
    double denom = std::max({std::fabs(num), std::fabs(ana), 1e-6});
    worst = std::max(worst, std::fabs(num - ana) / denom);
  };
  if (subset) {
    for (index_t i : *subset) probe(static_cast<size_t>(i));
  } else {
    for (size_t i = 0; i < data.size(); ++i) probe(i);
  }
  return worst;
}

struct Check {
  std::string name;
  double tolerance;
  std::function<double(double sign)> run;
};

// Runs loss once with grads, then FD-checks each listed tensor.
double check_tensors(const std::function<Td()>& loss_builder, std::vector<Td*> wrt,
                     double sign) {
  Td loss = loss_builder();
  loss.backward();
  auto eval = [&]() {
    NoGradGuard ng;
    return loss_builder().item();
  };
  double worst = 0.0;
  for (Td* t : wrt) worst = std::max(worst, fd_against(eval, *t, t->grad(), sign));
  return worst;
}

void add_op_checks(std::vector<Check>& checks) {
  checks.push_back({"op.matmul", 1e-4, [](double sign) {
    Rng rng(101);
    auto a = rand_t({2, 3, 4}, rng, true);
    auto b = rand_t({4, 5}, rng, true);
    auto w = rand_t({2, 3, 5}, rng, false);
    return check_tensors([&] { return sum(mul(matmul(a, b), w)); }, {&a, &b}, sign);
  }});
  checks.push_back({"op.softmax", 1e-4, [](double sign) {
    Rng rng(102);
    auto x = rand_t({3, 5}, rng, true, -3, 3);
    auto w = rand_t({3, 5}, rng, false);
    return check_tensors([&] { return sum(mul(softmax(x, 1), w)); }, {&x}, sign);
  }});
  checks.push_back({"op.layer_norm", 1e-4, [](double sign) {
    Rng rng(103);
    auto x = rand_t({4, 6}, rng, true);
    auto g = rand_t({6}, rng, true, 0.5, 1.5);
    auto b = rand_t({6}, rng, true);
    auto w = rand_t({4, 6}, rng, false);
    return check_tensors([&] { return sum(mul(layer_norm(x, g, b, 1e-5), w)); },
                         {&x, &g, &b}, sign);
  }});
  checks.push_back({"op.gelu", 1e-4, [](double sign) {
    Rng rng(104);
    auto x = rand_t({17}, rng, true, -2.5, 2.5);
    return check_tensors([&] { return sum(gelu(x)); }, {&x}, sign);
  }});
  checks.push_back({"op.add_mul_broadcast", 1e-4, [](double sign) {
    Rng rng(105);
    auto a = rand_t({2, 3, 4}, rng, true);
    auto b = rand_t({4}, rng, true);
    auto c = rand_t({3, 1}, rng, true);
    return check_tensors([&] { return sum(mul(add(a, b), add(c, b))); }, {&a, &b, &c}, sign);
  }});
  checks.push_back({"op.mean_mse", 1e-4, [](double sign) {
    Rng rng(106);
    auto p = rand_t({3, 4}, rng, true);
    auto t = rand_t({3, 4}, rng, false);
    return check_tensors([&] { return add(mse(p, t), mean(p)); }, {&p}, sign);
  }});
  checks.push_back({"op.mean_axis", 1e-4, [](double sign) {
    Rng rng(107);
    auto x = rand_t({3, 4, 2}, rng, true);
    auto w = rand_t({3, 2}, rng, false);
    return check_tensors([&] { return sum(mul(mean_axis(x, 1), w)); }, {&x}, sign);
  }});
  checks.push_back({"op.gather_scatter", 1e-4, [](double sign) {
    Rng rng(108);
    auto x = rand_t({6, 3}, rng, true);
    std::vector<index_t> take{4, 1, 1};
    std::vector<index_t> put{2, 0, 5};
    auto w = rand_t({6, 3}, rng, false);
    return check_tensors(
        [&] { return sum(mul(scatter_rows(gather_rows(x, take), put, 6), w)); }, {&x}, sign);
  }});
  checks.push_back({"op.structural", 1e-4, [](double sign) {
    Rng rng(109);
    auto a = rand_t({2, 3, 4}, rng, true);
    auto b = rand_t({2, 2, 4}, rng, true);
    auto w = rand_t({4, 20}, rng, false);
    return check_tensors(
        [&] {
          std::vector<Td> parts{a, b};
          auto cat = concat<double>(parts, 1);
          auto t = transpose(cat, 0, 2);
          return sum(mul(reshape(slice(t, 2, 0, 2), {4, -1}), slice(w, 1, 0, 10)));
        },
        {&a, &b}, sign);
  }});
}

void add_block_checks(std::vector<Check>& checks) {
  checks.push_back({"block.modality", 1e-4, [](double sign) {
    Rng rng(201);
    ParamStore<double> store;
    auto blk = make_self_block(store, "m", 8, 2, 4, 2.0, rng);
    auto x = rand_t({1, 4, 8}, rng, true);
    auto f = rand_t({1, 2, 8}, rng, true);
    auto w = rand_t({1, 4, 8}, rng, false);
    std::vector<Td*> wrt{&x, &f};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors([&] { return sum(mul(modality_block(x, f, blk, 2), w)); }, wrt,
                         sign);
  }});
  checks.push_back({"block.token_fusion", 1e-4, [](double sign) {
    Rng rng(202);
    ParamStore<double> store;
    auto blk = make_self_block(store, "mm", 8, 2, 3, 1.0, rng);
    auto x_mm = rand_t({1, 2, 8}, rng, true);
    auto x_v = rand_t({1, 3, 8}, rng, true);
    auto x_a = rand_t({1, 2, 8}, rng, true);
    auto w = rand_t({1, 2, 8}, rng, false);
    std::vector<Td*> wrt{&x_mm, &x_v, &x_a};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors(
        [&] { return sum(mul(token_fusion_block(x_mm, x_v, x_a, blk, 2, 3), w)); }, wrt,
        sign);
  }});
  checks.push_back({"block.cross_attention", 1e-4, [](double sign) {
    Rng rng(203);
    ParamStore<double> store;
    auto blk = make_cross_block(store, "x", 8, 2, 3, 1.0, rng);
    auto q = rand_t({1, 3, 8}, rng, true);
    auto kv = rand_t({1, 4, 8}, rng, true);
    auto w = rand_t({1, 3, 8}, rng, false);
    std::vector<Td*> wrt{&q, &kv};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors([&] { return sum(mul(cross_attention(q, kv, blk, 2, 3), w)); }, wrt,
                         sign);
  }});
  checks.push_back({"block.interaction_grid", 1e-4, [](double sign) {
    Rng rng(204);
    auto xa = rand_t({1, 3, 6}, rng, true);
    auto xv = rand_t({1, 2, 6}, rng, true);
    auto wa = rand_t({6, 6}, rng, true);
    auto wv = rand_t({6, 6}, rng, true);
    auto w = rand_t({1, 6, 6}, rng, false);
    return check_tensors(
        [&] { return sum(mul(interaction_grid(xa, xv, wa, wv), w)); }, {&xa, &xv, &wa, &wv},
        sign);
  }});
  checks.push_back({"block.dense_fusion", 1e-4, [](double sign) {
    Rng rng(205);
    ParamStore<double> store;
    auto blk = make_cross_block(store, "mm", 8, 2, 3, 1.0, rng);
    auto wa = rand_t({8, 8}, rng, true);
    auto wv = rand_t({8, 8}, rng, true);
    auto x_mm = rand_t({1, 2, 8}, rng, true);
    auto xa = rand_t({1, 3, 8}, rng, true);
    auto xv = rand_t({1, 2, 8}, rng, true);
    auto w = rand_t({1, 2, 8}, rng, false);
    std::vector<Td*> wrt{&x_mm, &xa, &xv, &wa, &wv};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors(
        [&] { return sum(mul(dense_fusion_block(x_mm, xa, xv, wa, wv, blk, 2, 3), w)); },
        wrt, sign);
  }});
  checks.push_back({"block.aggregate", 1e-4, [](double sign) {
    Rng rng(206);
    ParamStore<double> store;
    auto blk = make_cross_block(store, "agg", 8, 2, 3, 1.0, rng);
    auto agg = rand_t({1, 2, 8}, rng, true);
    auto xm = rand_t({1, 4, 8}, rng, true);
    auto w = rand_t({1, 2, 8}, rng, false);
    std::vector<Td*> wrt{&agg, &xm};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors([&] { return sum(mul(aggregate_tokens(agg, xm, blk, 2, 3), w)); },
                         wrt, sign);
  }});
  checks.push_back({"block.decoder", 1e-4, [](double sign) {
    Rng rng(207);
    ParamStore<double> store;
    DecoderConfig dc;
    dc.depth = 1;
    dc.dim = 8;
    dc.heads = 2;
    MaeDecoder<double> dec(dc, 8, 6, 2, 3, store, "dec", rng);
    Rng mrng(208);
    std::vector<MaskPlan> plans{sample_mask(6, 0.5, mrng)};
    auto x_mm = rand_t({1, 2, 8}, rng, true);
    auto x_vis = rand_t({1, 3, 8}, rng, true);
    auto w = rand_t({1, 3, 6}, rng, false);
    std::vector<Td*> wrt{&x_mm, &x_vis};
    for (const auto& n : store.names()) wrt.push_back(&store.at(n));
    return check_tensors([&] { return sum(mul(dec.decode(x_mm, x_vis, plans), w)); }, wrt,
                         sign);
  }});
}

void add_model_check(std::vector<Check>& checks) {
  checks.push_back({"model.full", 1e-3, [](double sign) {
    FusionConfig fc;
    fc.layers = 2;
    fc.dim = 16;
    fc.heads = 2;
    fc.attn_dim = 4;
    fc.fusion_tokens = 2;
    fc.agg_tokens_a = 2;
    fc.agg_tokens_v = 2;
    fc.mlp_ratio_modality = 1.0;
    fc.mlp_ratio_fusion = 1.0;
    fc.fusion_mode = FusionMode::kFactorized;
    fc.fusion_layers = FusionConfig::all_layers(2);
    DecoderConfig dc;
    dc.depth = 1;
    dc.dim = 16;
    dc.heads = 2;
    DataConfig data;
    data.image_size = 8;
    data.image_channels = 2;
    data.image_patch = 4;
    data.spec_bins = 4;
    data.spec_frames = 6;
    data.spec_patch = 2;
    Model<double> model(fc, dc, data, 42);

    Rng rng(301);
    auto images = rand_t({1, 2, 8, 8}, rng, false);
    auto specs = rand_t({1, 1, 4, 6}, rng, false);
    auto plans_v = step_mask_plans(data.visual_tokens(), 0.5, 1, 7, 0, 1);
    auto plans_a = step_mask_plans(data.audio_tokens(), 0.5, 1, 7, 0, 2);

    auto loss_builder = [&] {
      return model.pretrain_forward(images, specs, plans_v, plans_a).loss_total;
    };
    Td loss = loss_builder();
    loss.backward();
    auto eval = [&]() {
      NoGradGuard ng;
      return loss_builder().item();
    };
    // deterministic element subsample per parameter
    Rng pick(777);
    double worst = 0.0;
    for (const auto& name : model.params().names()) {
      Td& p = model.params().at(name);
      std::vector<index_t> subset;
      index_t n = p.numel();
      for (int k = 0; k < std::min<index_t>(6, n); ++k) subset.push_back(pick.uniform_int(n));
      worst = std::max(worst, fd_against(eval, p, p.grad(), sign, &subset));
    }
    return worst;
  }});
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opts) {
  std::vector<Check> checks;
  add_op_checks(checks);
  add_block_checks(checks);
  add_model_check(checks);

  std::vector<GradcheckResult> results;
  for (Check& c : checks) {
    if (!opts.scope.empty() && c.name.find(opts.scope) == std::string::npos) continue;
    double sign = (c.name == opts.flip_sign_check) ? -1.0 : 1.0;
    GradcheckResult r;
    r.name = c.name;
    r.tolerance = c.tolerance;
    r.max_rel_err = c.run(sign);
    r.pass = r.max_rel_err < c.tolerance;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace avfuse
