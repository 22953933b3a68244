#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/encoder.h"

namespace avfuse {

// One benchmark cell, at token granularity (inputs are synthesized token
// tensors; patchification is not part of what Table-style forward timing
// measures here).
struct BenchConfig {
  std::string id = "cell";
  FusionMode mode = FusionMode::kFactorized;
  index_t n_v = 196;
  index_t n_a = 96;
  index_t n_agg_v = 8;
  index_t n_agg_a = 8;
  index_t fusion_tokens = 16;
  index_t dim = 192;
  int layers = 4;
  int heads = 4;
  index_t attn_dim = 16;
  double mlp_ratio_modality = 4.0;
  double mlp_ratio_fusion = 1.0;
  int batch_size = 1;
  int warmup_iters = 1;
  int timed_iters = 5;
  uint64_t seed = 1;

  FusionConfig fusion_config() const;
  void validate() const;
};

struct InteractionCounts {
  long dense = 0;
  long factorized = 0;
  double ratio = 0.0;  // dense / factorized
};

// Exact pair counts for a configuration.
InteractionCounts interaction_count(const BenchConfig& cfg);

// Pairs actually materialized by the configured mode: n_a*n_v for dense,
// n_agg_a*n_agg_v for factorized, 0 for token fusion and no fusion.
long interactions_for_mode(const BenchConfig& cfg);

// Analytic forward FLOPs per sample (matmul-dominant estimate from shapes).
double flops_estimate(const BenchConfig& cfg);

struct BenchReport {
  BenchConfig cfg;
  double samples_per_sec = 0.0;
  std::size_t peak_bytes = 0;  // peak transient allocation during forward
  long interactions = 0;
  double flops = 0.0;
  bool failed = false;
  std::string error;
};

// Median wall-time over timed iterations after warmup; single-threaded;
// deterministic inputs. Forward-only.
BenchReport bench_forward(const BenchConfig& cfg);

// Runs every cell, capturing per-cell failures; rows are emitted in input
// order via the callback as they finish.
std::vector<BenchReport> sweep(std::span<const BenchConfig> grid,
                               const std::function<void(const BenchReport&)>& on_row = {});

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace avfuse
