#include "core/evaluate.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace avfuse {

FeatureFamily parse_feature_family(const std::string& s) {
  if (s == "visual") return FeatureFamily::kVisual;
  if (s == "audio") return FeatureFamily::kAudio;
  if (s == "fusion") return FeatureFamily::kFusion;
  if (s == "concat") return FeatureFamily::kConcat;
  throw ConfigError("unknown feature family '" + s + "' (visual|audio|fusion|concat)");
}

std::string to_string(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::kVisual: return "visual";
    case FeatureFamily::kAudio: return "audio";
    case FeatureFamily::kFusion: return "fusion";
    case FeatureFamily::kConcat: return "concat";
  }
  return "?";
}

template <typename T>
Tensor<T> extract_features(const Model<T>& model, const Tensor<T>& images,
                           const Tensor<T>& specs, FeatureFamily family) {
  if (family == FeatureFamily::kFusion &&
      model.fusion_config().fusion_mode == FusionMode::kNone)
    throw ConfigError("fusion features are unavailable under fusion_mode none");
  NoGradGuard ng;
  EncoderOutput<T> enc = model.encode(images, specs);
  switch (family) {
    case FeatureFamily::kVisual: return mean_axis(enc.visual, 1);
    case FeatureFamily::kAudio: return mean_axis(enc.audio, 1);
    case FeatureFamily::kFusion: return mean_axis(enc.fusion, 1);
    case FeatureFamily::kConcat: {
      std::vector<Tensor<T>> parts{mean_axis(enc.visual, 1), mean_axis(enc.audio, 1)};
      return concat<T>(parts, 1);
    }
  }
  throw ConfigError("unreachable feature family");
}

template <typename T>
std::vector<std::vector<double>> extract_feature_matrix(
    const Model<T>& model, const std::vector<SyntheticAVSample<T>>& samples,
    FeatureFamily family, int chunk) {
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(chunk)) {
    size_t end = std::min(samples.size(), begin + static_cast<size_t>(chunk));
    std::vector<SyntheticAVSample<T>> part(samples.begin() + static_cast<long>(begin),
                                           samples.begin() + static_cast<long>(end));
    Tensor<T> feats =
        extract_features(model, stack_images(part), stack_spectrograms(part), family);
    index_t d = feats.dim(1);
    for (index_t r = 0; r < feats.dim(0); ++r) {
      std::vector<double> row(static_cast<size_t>(d));
      for (index_t j = 0; j < d; ++j)
        row[static_cast<size_t>(j)] = static_cast<double>(feats.at({r, j}));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

int infer_classes(const std::vector<int>& a, const std::vector<int>& b) {
  int k = 0;
  for (int y : a) k = std::max(k, y + 1);
  for (int y : b) k = std::max(k, y + 1);
  return k;
}

}  // namespace

ProbeResult linear_probe(const std::vector<std::vector<double>>& x_train,
                         const std::vector<int>& y_train,
                         const std::vector<std::vector<double>>& x_eval,
                         const std::vector<int>& y_eval, uint64_t seed) {
  if (x_train.empty() || x_train.size() != y_train.size() || x_eval.size() != y_eval.size())
    throw ConfigError("linear_probe: empty or misaligned feature/label sets");
  const size_t d = x_train[0].size();
  const int k = infer_classes(y_train, y_eval);
  if (k < 2) {
    std::set<int> distinct(y_train.begin(), y_train.end());
    if (distinct.size() < 2)
      throw ConfigError("linear_probe: labels are degenerate (single class)");
  }
  const size_t n = x_train.size();

  // standardize with train statistics
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (const auto& row : x_train)
    for (size_t j = 0; j < d; ++j) mu[j] += row[j];
  for (size_t j = 0; j < d; ++j) mu[j] /= static_cast<double>(n);
  for (const auto& row : x_train)
    for (size_t j = 0; j < d; ++j) sd[j] += (row[j] - mu[j]) * (row[j] - mu[j]);
  for (size_t j = 0; j < d; ++j)
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n)) + 1e-8;

  auto standardized = [&](const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out(rows.size(), std::vector<double>(d + 1, 1.0));
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < d; ++j) out[i][j] = (rows[i][j] - mu[j]) / sd[j];
    return out;  // trailing 1.0 is the bias feature
  };
  auto xt = standardized(x_train);
  auto xe = standardized(x_eval);

  std::vector<double> w(static_cast<size_t>(k) * (d + 1), 0.0);
  std::vector<double> logits(static_cast<size_t>(k));
  std::vector<double> grad(w.size());

  auto loss_and_grad = [&](const std::vector<double>& weights, std::vector<double>* g) {
    if (g) std::fill(g->begin(), g->end(), 0.0);
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int c = 0; c < k; ++c) {
        double acc = 0.0;
        for (size_t j = 0; j <= d; ++j)
          acc += weights[static_cast<size_t>(c) * (d + 1) + j] * xt[i][j];
        logits[static_cast<size_t>(c)] = acc;
        mx = std::max(mx, acc);
      }
      double z = 0.0;
      for (int c = 0; c < k; ++c) z += std::exp(logits[static_cast<size_t>(c)] - mx);
      loss += -(logits[static_cast<size_t>(y_train[i])] - mx - std::log(z));
      if (g) {
        for (int c = 0; c < k; ++c) {
          double p = std::exp(logits[static_cast<size_t>(c)] - mx) / z;
          double delta = p - (c == y_train[i] ? 1.0 : 0.0);
          for (size_t j = 0; j <= d; ++j)
            (*g)[static_cast<size_t>(c) * (d + 1) + j] += delta * xt[i][j];
        }
      }
    }
    loss /= static_cast<double>(n);
    if (g)
      for (double& v : *g) v /= static_cast<double>(n);
    return loss;
  };

  double lr = 1.0;
  double prev = loss_and_grad(w, &grad);
  for (int iter = 0; iter < 5000; ++iter) {
    std::vector<double> trial = w;
    for (size_t j = 0; j < w.size(); ++j) trial[j] -= lr * grad[j];
    std::vector<double> trial_grad(w.size());
    double cur = loss_and_grad(trial, &trial_grad);
    if (cur <= prev) {
      w.swap(trial);
      grad.swap(trial_grad);
      if (prev - cur < 1e-6) {
        prev = cur;
        break;
      }
      prev = cur;
      lr *= 1.1;
    } else {
      lr *= 0.5;
      if (lr < 1e-12) break;
    }
  }

  int correct = 0;
  for (size_t i = 0; i < xe.size(); ++i) {
    int best = 0;
    double best_v = -1e300;
    for (int c = 0; c < k; ++c) {
      double acc = 0.0;
      for (size_t j = 0; j <= d; ++j)
        acc += w[static_cast<size_t>(c) * (d + 1) + j] * xe[i][j];
      if (acc > best_v) {
        best_v = acc;
        best = c;
      }
    }
    if (best == y_eval[i]) ++correct;
  }
  ProbeResult r;
  r.accuracy = x_eval.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(xe.size());
  r.n_eval = static_cast<int>(xe.size());
  r.seed = seed;
  return r;
}

double nn_retrieval(const std::vector<std::vector<double>>& features,
                    const std::vector<int>& labels) {
  if (features.empty() || features.size() != labels.size())
    throw ConfigError("nn_retrieval: empty or misaligned features/labels");
  if (features.size() < 2)
    throw ConfigError("nn_retrieval: needs at least two samples");
  const size_t n = features.size();
  std::vector<double> norms(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (double v : features[i]) norms[i] += v * v;
    norms[i] = std::sqrt(norms[i]) + 1e-12;
  }
  int correct = 0;
  for (size_t i = 0; i < n; ++i) {
    double best = -2.0;
    size_t arg = i;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (size_t t = 0; t < features[i].size(); ++t) dot += features[i][t] * features[j][t];
      double cosv = dot / (norms[i] * norms[j]);
      if (cosv > best) {
        best = cosv;
        arg = j;
      }
    }
    if (labels[arg] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<AblationCell> run_ablation_grid(std::span<const AblationSpec> specs,
                                            const DecoderConfig& decoder,
                                            const DataConfig& data,
                                            const SyntheticSpec& synth,
                                            std::span<const FeatureFamily> families,
                                            std::span<const std::string> tasks,
                                            int probe_train_n, int probe_eval_n) {
  std::vector<AblationCell> cells;
  for (const AblationSpec& spec : specs) {
    AblationCell cell;
    cell.name = spec.name;
    try {
      Model<float> model(spec.fusion, decoder, data, spec.seed);
      Adam<float> opt(model.params());
      SyntheticSource<float> source(synth, probe_train_n);
      pretrain(model, opt, source, spec.train, spec.seed, 0);

      auto train_set = generate_synthetic_batch<float>(synth, probe_train_n,
                                                       derive_seed(spec.seed, 0xBEEF));
      auto eval_set = generate_synthetic_batch<float>(synth, probe_eval_n,
                                                      derive_seed(spec.seed, 0xCAFE));
      for (FeatureFamily fam : families) {
        auto xt = extract_feature_matrix(model, train_set, fam);
        auto xe = extract_feature_matrix(model, eval_set, fam);
        for (const std::string& task : tasks) {
          auto label_of = [&](const SyntheticAVSample<float>& s) {
            return task == "class_id" ? s.class_id : s.cross_label;
          };
          std::vector<int> yt, ye;
          for (const auto& s : train_set) yt.push_back(label_of(s));
          for (const auto& s : eval_set) ye.push_back(label_of(s));
          ProbeResult pr = linear_probe(xt, yt, xe, ye, spec.seed);
          pr.feature_family = to_string(fam);
          pr.task = task;
          cell.probes.push_back(std::move(pr));
        }
      }
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::string ablation_csv(std::span<const AblationCell> cells) {
  std::ostringstream os;
  os << "cell,feature_family,task,accuracy,n_eval,seed,status\n";
  for (const AblationCell& c : cells) {
    if (c.failed) {
      os << c.name << ",,,,,," << "failed: " << c.error << "\n";
      continue;
    }
    for (const ProbeResult& p : c.probes)
      os << c.name << ',' << p.feature_family << ',' << p.task << ',' << p.accuracy << ','
         << p.n_eval << ',' << p.seed << ",ok\n";
  }
  return os.str();
}

#define AVFUSE_INSTANTIATE_EVAL(T)                                                        \
  template Tensor<T> extract_features<T>(const Model<T>&, const Tensor<T>&,               \
                                         const Tensor<T>&, FeatureFamily);                \
  template std::vector<std::vector<double>> extract_feature_matrix<T>(                    \
      const Model<T>&, const std::vector<SyntheticAVSample<T>>&, FeatureFamily, int);

AVFUSE_INSTANTIATE_EVAL(float)
AVFUSE_INSTANTIATE_EVAL(double)

#undef AVFUSE_INSTANTIATE_EVAL

}  // namespace avfuse
