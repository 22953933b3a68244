#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/model.h"
#include "core/synthetic.h"
#include "core/train.h"

namespace avfuse {

// Full run configuration: flat dotted keys in a plain text file, command
// line overrides as key=value pairs, unknown keys rejected.
struct RunConfig {
  FusionConfig fusion;  // fusion_layers derived from fusion_layers_spec
  DecoderConfig decoder;
  DataConfig data;
  TrainConfig train;
  bool norm_pix_targets = false;

  // "all", "none", or a list like "1,3" / "1-4"; resolved against
  // model.layers when the model is built.
  std::string fusion_layers_spec = "all";
  std::string train_resume;

  std::string data_source = "synthetic";  // synthetic | directory
  std::string data_dir;
  int data_samples = 512;
  int data_classes = 4;
  double data_noise = 0.1;
  double data_class_amp = 0.6;
  double data_factor_amp = 1.0;

  uint64_t seed = 1;
  std::string out_dir = "runs/default";

  SyntheticSpec synth() const;
  FusionConfig fusion_config() const;
  void validate() const;

  // Canonical form: every key, sorted, one per line. Stable across
  // parse/serialize round trips.
  std::string serialize() const;

  // Keys that must match for a checkpoint to be loadable into this run.
  std::string architecture_signature() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path,
                             const std::vector<std::string>& overrides = {});
};

// Joins with the AVFUSE_OUT root when set and out_dir is relative.
std::string resolve_out_dir(const RunConfig& cfg);

std::string fusion_layers_to_string(const std::vector<int>& layers);
std::vector<int> parse_fusion_layers(const std::string& text, int total_layers);

}  // namespace avfuse
