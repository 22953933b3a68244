#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/model.h"
#include "core/train.h"

namespace avfuse {

enum class FeatureFamily { kVisual, kAudio, kFusion, kConcat };

FeatureFamily parse_feature_family(const std::string& s);
std::string to_string(FeatureFamily f);

struct ProbeResult {
  std::string feature_family;
  std::string task;  // class_id | cross_label
  double accuracy = 0.0;
  int n_eval = 0;
  uint64_t seed = 0;
};

// Mean-pooled final-layer features for one token family; no masking is
// applied. concat stacks the pooled visual and audio features.
template <typename T>
Tensor<T> extract_features(const Model<T>& model, const Tensor<T>& images,
                           const Tensor<T>& specs, FeatureFamily family);

// Batched helper over a sample list, returned as plain double rows.
template <typename T>
std::vector<std::vector<double>> extract_feature_matrix(
    const Model<T>& model, const std::vector<SyntheticAVSample<T>>& samples,
    FeatureFamily family, int chunk = 32);

// Multinomial logistic regression on frozen features: full-batch gradient
// descent run to a 1e-6 loss-delta tolerance, deterministic given inputs.
ProbeResult linear_probe(const std::vector<std::vector<double>>& x_train,
                         const std::vector<int>& y_train,
                         const std::vector<std::vector<double>>& x_eval,
                         const std::vector<int>& y_eval, uint64_t seed);

// Leave-one-out cosine-similarity 1-NN label accuracy.
double nn_retrieval(const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels);

struct AblationSpec {
  std::string name;
  FusionConfig fusion;
  TrainConfig train;
  uint64_t seed = 1;
};

struct AblationCell {
  std::string name;
  bool failed = false;
  std::string error;
  std::vector<ProbeResult> probes;
};

// Pretrains and probes each configuration under a matched budget. Failed
// cells are marked and the grid continues.
std::vector<AblationCell> run_ablation_grid(std::span<const AblationSpec> specs,
                                            const DecoderConfig& decoder,
                                            const DataConfig& data,
                                            const SyntheticSpec& synth,
                                            std::span<const FeatureFamily> families,
                                            std::span<const std::string> tasks,
                                            int probe_train_n, int probe_eval_n);

std::string ablation_csv(std::span<const AblationCell> cells);

}  // namespace avfuse
