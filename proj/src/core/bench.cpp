#include "core/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <sstream>

#include "core/mem.h"

namespace avfuse {

FusionConfig BenchConfig::fusion_config() const {
  FusionConfig fc;
  fc.layers = layers;
  fc.dim = dim;
  fc.heads = heads;
  fc.attn_dim = attn_dim;
  fc.fusion_tokens = fusion_tokens;
  fc.agg_tokens_a = n_agg_a;
  fc.agg_tokens_v = n_agg_v;
  fc.mlp_ratio_modality = mlp_ratio_modality;
  fc.mlp_ratio_fusion = mlp_ratio_fusion;
  fc.fusion_mode = mode;
  if (mode != FusionMode::kNone) fc.fusion_layers = FusionConfig::all_layers(layers);
  return fc;
}

void BenchConfig::validate() const {
  if (n_v < 1 || n_a < 1) throw ConfigError("bench: token counts must be >= 1");
  if (batch_size < 1) throw ConfigError("bench: batch_size must be >= 1");
  if (timed_iters < 3) throw ConfigError("bench: timed_iters must be >= 3");
  if (warmup_iters < 0) throw ConfigError("bench: warmup_iters must be >= 0");
  fusion_config().validate();
}

InteractionCounts interaction_count(const BenchConfig& cfg) {
  InteractionCounts c;
  c.dense = static_cast<long>(cfg.n_a) * static_cast<long>(cfg.n_v);
  c.factorized = static_cast<long>(cfg.n_agg_a) * static_cast<long>(cfg.n_agg_v);
  c.ratio = c.factorized > 0 ? static_cast<double>(c.dense) / static_cast<double>(c.factorized)
                             : 0.0;
  return c;
}

long interactions_for_mode(const BenchConfig& cfg) {
  switch (cfg.mode) {
    case FusionMode::kDense: return static_cast<long>(cfg.n_a) * static_cast<long>(cfg.n_v);
    case FusionMode::kFactorized:
      return static_cast<long>(cfg.n_agg_a) * static_cast<long>(cfg.n_agg_v);
    case FusionMode::kToken:
    case FusionMode::kNone: return 0;
  }
  return 0;
}

namespace {

double attn_flops(double nq, double nk, double d, double h, double dk, double dv,
                  double hidden) {
  double f = 0.0;
  f += 2.0 * nq * d * h * dk;   // q projection
  f += 2.0 * nk * d * h * dk;   // k projection
  f += 2.0 * nk * d * h * dv;   // v projection
  f += 2.0 * h * nq * nk * dk;  // similarity
  f += 2.0 * h * nq * nk * dv;  // weighted values
  f += 2.0 * nq * h * dv * d;   // output projection
  f += 4.0 * nq * d * hidden;   // mlp (two matmuls)
  return f;
}

}  // namespace

double flops_estimate(const BenchConfig& cfg) {
  const double d = static_cast<double>(cfg.dim);
  const double h = static_cast<double>(cfg.heads);
  const double hd = d / h;
  const double ad = static_cast<double>(cfg.attn_dim);
  const double nv = static_cast<double>(cfg.n_v);
  const double na = static_cast<double>(cfg.n_a);
  const double f = static_cast<double>(cfg.fusion_tokens);
  const double hm = d * cfg.mlp_ratio_modality;
  const double hf = d * cfg.mlp_ratio_fusion;
  const bool fused = cfg.mode != FusionMode::kNone;

  double total = 0.0;
  for (int l = 0; l < cfg.layers; ++l) {
    double extra = fused ? f : 0.0;
    total += attn_flops(nv, nv + extra, d, h, hd, hd, hm);
    total += attn_flops(na, na + extra, d, h, hd, hd, hm);
    switch (cfg.mode) {
      case FusionMode::kNone:
        break;
      case FusionMode::kToken:
        total += attn_flops(f, f + nv + na, d, h, ad, hd, hf);
        break;
      case FusionMode::kDense: {
        total += 2.0 * na * d * d + 2.0 * nv * d * d + na * nv * d;  // grid
        total += attn_flops(f, na * nv, d, h, ad, hd, hf);
        break;
      }
      case FusionMode::kFactorized: {
        const double ga = static_cast<double>(cfg.n_agg_a);
        const double gv = static_cast<double>(cfg.n_agg_v);
        total += attn_flops(ga, na, d, h, ad, hd, hf);
        total += attn_flops(gv, nv, d, h, ad, hd, hf);
        total += 2.0 * ga * d * d + 2.0 * gv * d * d + ga * gv * d;
        total += attn_flops(f, ga * gv, d, h, ad, hd, hf);
        break;
      }
    }
  }
  return total;
}

BenchReport bench_forward(const BenchConfig& cfg) {
  BenchReport report;
  report.cfg = cfg;
  report.interactions = interactions_for_mode(cfg);
  report.flops = flops_estimate(cfg);
  try {
    cfg.validate();
    ParamStore<float> store;
    Rng rng(derive_seed(cfg.seed, 0xBE7C));
    FusionEncoder<float> enc(cfg.fusion_config(), store, rng);

    Tensor<float> xv = Tensor<float>::zeros({cfg.batch_size, cfg.n_v, cfg.dim});
    Tensor<float> xa = Tensor<float>::zeros({cfg.batch_size, cfg.n_a, cfg.dim});
    for (float& v : xv.data_mut()) v = static_cast<float>(rng.uniform(-1, 1));
    for (float& v : xa.data_mut()) v = static_cast<float>(rng.uniform(-1, 1));

    NoGradGuard ng;
    for (int i = 0; i < cfg.warmup_iters; ++i) enc.forward(xv, xa);

    std::vector<double> times;
    std::size_t peak = 0;
    for (int i = 0; i < cfg.timed_iters; ++i) {
      const std::size_t baseline = mem::current_bytes();
      mem::reset_peak();
      auto t0 = std::chrono::steady_clock::now();
      EncoderOutput<float> out = enc.forward(xv, xa);
      auto t1 = std::chrono::steady_clock::now();
      (void)out;
      peak = std::max(peak, mem::peak_bytes() - baseline);
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    double median = times[times.size() / 2];
    if (times.size() % 2 == 0) median = 0.5 * (median + times[times.size() / 2 - 1]);
    report.samples_per_sec = static_cast<double>(cfg.batch_size) / median;
    report.peak_bytes = peak;
  } catch (const std::bad_alloc&) {
    report.failed = true;
    report.error = "allocation failure";
  } catch (const std::exception& e) {
    report.failed = true;
    report.error = e.what();
  }
  return report;
}

std::vector<BenchReport> sweep(std::span<const BenchConfig> grid,
                               const std::function<void(const BenchReport&)>& on_row) {
  if (grid.empty()) throw ConfigError("bench sweep: empty grid");
  std::vector<BenchReport> out;
  out.reserve(grid.size());
  for (const BenchConfig& cfg : grid) {
    BenchReport r = bench_forward(cfg);
    if (on_row) on_row(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::string bench_csv_header() {
  return "config_id,fusion_mode,n_v,n_a,n_agg_v,n_agg_a,F,samples_per_sec,peak_bytes,"
         "interactions,flops_estimate";
}

std::string bench_csv_row(const BenchReport& r) {
  std::ostringstream os;
  os << r.cfg.id << ',' << to_string(r.cfg.mode) << ',' << r.cfg.n_v << ',' << r.cfg.n_a
     << ',' << r.cfg.n_agg_v << ',' << r.cfg.n_agg_a << ',' << r.cfg.fusion_tokens << ',';
  if (r.failed)
    os << "failed,failed,";
  else
    os << r.samples_per_sec << ',' << r.peak_bytes << ',';
  os << r.interactions << ',' << r.flops;
  return os.str();
}

}  // namespace avfuse
