#include "core/config.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace avfuse {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true|false, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, KeyHandler>& registry();

}  // namespace

std::string fusion_layers_to_string(const std::vector<int>& layers) {
  if (layers.empty()) return "none";
  std::ostringstream os;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    os << layers[i];
  }
  return os.str();
}

std::vector<int> parse_fusion_layers(const std::string& text, int total_layers) {
  std::string t = trim(text);
  if (t == "none" || t.empty()) return {};
  if (t == "all") return FusionConfig::all_layers(total_layers);
  std::vector<int> out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    size_t dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      int lo = static_cast<int>(parse_long("model.fusion_layers", item.substr(0, dash)));
      int hi = static_cast<int>(parse_long("model.fusion_layers", item.substr(dash + 1)));
      for (int l = lo; l <= hi; ++l) out.push_back(l);
    } else {
      out.push_back(static_cast<int>(parse_long("model.fusion_layers", item)));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

const std::map<std::string, KeyHandler>& registry() {
  static const std::map<std::string, KeyHandler> reg = [] {
    std::map<std::string, KeyHandler> r;
    auto add_long = [&](const std::string& key, auto member_set, auto member_get) {
      r[key] = {[key, member_set](RunConfig& c, const std::string& v) {
                  member_set(c, parse_long(key, v));
                },
                [member_get](const RunConfig& c) { return std::to_string(member_get(c)); }};
    };
    auto add_double = [&](const std::string& key, auto member_set, auto member_get) {
      r[key] = {[key, member_set](RunConfig& c, const std::string& v) {
                  member_set(c, parse_double(key, v));
                },
                [member_get](const RunConfig& c) { return fmt_double(member_get(c)); }};
    };

    add_long("model.layers", [](RunConfig& c, long v) { c.fusion.layers = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.layers); });
    add_long("model.dim", [](RunConfig& c, long v) { c.fusion.dim = v; },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.dim); });
    add_long("model.heads", [](RunConfig& c, long v) { c.fusion.heads = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.heads); });
    add_long("model.attn_dim", [](RunConfig& c, long v) { c.fusion.attn_dim = v; },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.attn_dim); });
    r["model.fusion_mode"] = {
        [](RunConfig& c, const std::string& v) { c.fusion.fusion_mode = parse_fusion_mode(v); },
        [](const RunConfig& c) { return to_string(c.fusion.fusion_mode); }};
    r["model.fusion_layers"] = {
        [](RunConfig& c, const std::string& v) { c.fusion_layers_spec = trim(v); },
        [](const RunConfig& c) {
          if (c.fusion.fusion_mode == FusionMode::kNone && c.fusion_layers_spec == "all")
            return std::string("none");
          return fusion_layers_to_string(
              parse_fusion_layers(c.fusion_layers_spec, c.fusion.layers));
        }};
    add_long("model.fusion_tokens", [](RunConfig& c, long v) { c.fusion.fusion_tokens = v; },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.fusion_tokens); });
    add_long("model.agg_tokens_a", [](RunConfig& c, long v) { c.fusion.agg_tokens_a = v; },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.agg_tokens_a); });
    add_long("model.agg_tokens_v", [](RunConfig& c, long v) { c.fusion.agg_tokens_v = v; },
             [](const RunConfig& c) { return static_cast<long>(c.fusion.agg_tokens_v); });
    add_double("model.mlp_ratio_modality",
               [](RunConfig& c, double v) { c.fusion.mlp_ratio_modality = v; },
               [](const RunConfig& c) { return c.fusion.mlp_ratio_modality; });
    add_double("model.mlp_ratio_fusion",
               [](RunConfig& c, double v) { c.fusion.mlp_ratio_fusion = v; },
               [](const RunConfig& c) { return c.fusion.mlp_ratio_fusion; });

    add_long("decoder.depth", [](RunConfig& c, long v) { c.decoder.depth = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.decoder.depth); });
    add_long("decoder.dim", [](RunConfig& c, long v) { c.decoder.dim = v; },
             [](const RunConfig& c) { return static_cast<long>(c.decoder.dim); });
    add_long("decoder.heads", [](RunConfig& c, long v) { c.decoder.heads = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.decoder.heads); });
    r["decoder.input_policy"] = {
        [](RunConfig& c, const std::string& v) { c.decoder.input_policy = parse_decoder_policy(v); },
        [](const RunConfig& c) { return to_string(c.decoder.input_policy); }};

    r["data.source"] = {[](RunConfig& c, const std::string& v) {
                          if (v != "synthetic" && v != "directory")
                            throw ConfigError("data.source must be synthetic|directory");
                          c.data_source = v;
                        },
                        [](const RunConfig& c) { return c.data_source; }};
    r["data.dir"] = {[](RunConfig& c, const std::string& v) { c.data_dir = v; },
                     [](const RunConfig& c) { return c.data_dir; }};
    add_long("data.samples", [](RunConfig& c, long v) { c.data_samples = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.data_samples); });
    add_long("data.classes", [](RunConfig& c, long v) { c.data_classes = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.data_classes); });
    add_long("data.image_size", [](RunConfig& c, long v) { c.data.image_size = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.image_size); });
    add_long("data.image_channels", [](RunConfig& c, long v) { c.data.image_channels = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.image_channels); });
    add_long("data.image_patch", [](RunConfig& c, long v) { c.data.image_patch = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.image_patch); });
    add_long("data.spec_bins", [](RunConfig& c, long v) { c.data.spec_bins = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.spec_bins); });
    add_long("data.spec_frames", [](RunConfig& c, long v) { c.data.spec_frames = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.spec_frames); });
    add_long("data.spec_patch", [](RunConfig& c, long v) { c.data.spec_patch = v; },
             [](const RunConfig& c) { return static_cast<long>(c.data.spec_patch); });
    add_double("data.noise", [](RunConfig& c, double v) { c.data_noise = v; },
               [](const RunConfig& c) { return c.data_noise; });
    add_double("data.class_amp", [](RunConfig& c, double v) { c.data_class_amp = v; },
               [](const RunConfig& c) { return c.data_class_amp; });
    add_double("data.factor_amp", [](RunConfig& c, double v) { c.data_factor_amp = v; },
               [](const RunConfig& c) { return c.data_factor_amp; });

    add_double("train.base_lr", [](RunConfig& c, double v) { c.train.base_lr = v; },
               [](const RunConfig& c) { return c.train.base_lr; });
    add_long("train.batch_size", [](RunConfig& c, long v) { c.train.batch_size = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.train.batch_size); });
    add_long("train.warmup_epochs",
             [](RunConfig& c, long v) { c.train.warmup_epochs = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.train.warmup_epochs); });
    add_long("train.total_epochs",
             [](RunConfig& c, long v) { c.train.total_epochs = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.train.total_epochs); });
    add_long("train.total_steps",
             [](RunConfig& c, long v) { c.train.total_steps = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.train.total_steps); });
    add_double("train.weight_decay", [](RunConfig& c, double v) { c.train.weight_decay = v; },
               [](const RunConfig& c) { return c.train.weight_decay; });
    add_double("train.mask_ratio_v", [](RunConfig& c, double v) { c.train.mask_ratio_v = v; },
               [](const RunConfig& c) { return c.train.mask_ratio_v; });
    add_double("train.mask_ratio_a", [](RunConfig& c, double v) { c.train.mask_ratio_a = v; },
               [](const RunConfig& c) { return c.train.mask_ratio_a; });
    add_long("train.checkpoint_every",
             [](RunConfig& c, long v) { c.train.checkpoint_every = static_cast<int>(v); },
             [](const RunConfig& c) { return static_cast<long>(c.train.checkpoint_every); });
    r["train.resume"] = {[](RunConfig& c, const std::string& v) { c.train_resume = v; },
                         [](const RunConfig& c) { return c.train_resume; }};
    r["train.norm_pix_targets"] = {
        [](RunConfig& c, const std::string& v) {
          c.norm_pix_targets = parse_bool("train.norm_pix_targets", v);
        },
        [](const RunConfig& c) { return c.norm_pix_targets ? std::string("true")
                                                           : std::string("false"); }};

    r["seed"] = {[](RunConfig& c, const std::string& v) {
                   c.seed = static_cast<uint64_t>(parse_long("seed", v));
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    r["out.dir"] = {[](RunConfig& c, const std::string& v) { c.out_dir = v; },
                    [](const RunConfig& c) { return c.out_dir; }};
    return r;
  }();
  return reg;
}

}  // namespace

SyntheticSpec RunConfig::synth() const {
  SyntheticSpec s;
  s.classes = data_classes;
  s.image_size = data.image_size;
  s.image_channels = data.image_channels;
  s.spec_bins = data.spec_bins;
  s.spec_frames = data.spec_frames;
  s.noise = data_noise;
  s.class_amp = data_class_amp;
  s.factor_amp = data_factor_amp;
  return s;
}

void RunConfig::validate() const {
  FusionConfig fc = fusion_config();
  fc.validate();
  decoder.validate();
  data.validate(fc.dim);
  train.validate();
  if (data_classes < 2) throw ConfigError("data.classes must be >= 2");
  if (data_samples < 1) throw ConfigError("data.samples must be >= 1");
  if (data_noise < 0) throw ConfigError("data.noise must be >= 0");
  if (data_source == "directory" && data_dir.empty())
    throw ConfigError("data.source=directory requires data.dir");
}

FusionConfig RunConfig::fusion_config() const {
  FusionConfig fc = fusion;
  if (fc.fusion_mode == FusionMode::kNone && fusion_layers_spec == "all")
    fc.fusion_layers.clear();
  else
    fc.fusion_layers = parse_fusion_layers(fusion_layers_spec, fc.layers);
  return fc;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, _] : registry()) out.push_back(key);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

std::string RunConfig::get(const std::string& key) const {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [key, h] : registry()) os << key << " = " << h.get(*this) << "\n";
  return os.str();
}

std::string RunConfig::architecture_signature() const {
  static const char* arch_keys[] = {
      "model.layers",      "model.dim",           "model.heads",
      "model.attn_dim",    "model.fusion_mode",   "model.fusion_layers",
      "model.fusion_tokens", "model.agg_tokens_a", "model.agg_tokens_v",
      "model.mlp_ratio_modality", "model.mlp_ratio_fusion",
      "decoder.depth",     "decoder.dim",         "decoder.heads",
      "decoder.input_policy",
      "data.image_size",   "data.image_channels", "data.image_patch",
      "data.spec_bins",    "data.spec_frames",    "data.spec_patch"};
  std::ostringstream os;
  for (const char* key : arch_keys) os << key << " = " << get(key) << "\n";
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path,
                               const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  RunConfig cfg = from_text(buf.str());
  for (const std::string& kv : overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must be key=value, got '" + kv + "'");
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return cfg;
}

std::string resolve_out_dir(const RunConfig& cfg) {
  const char* root = std::getenv("AVFUSE_OUT");
  if (root && root[0] != '\0' && !cfg.out_dir.empty() && cfg.out_dir[0] != '/')
    return std::string(root) + "/" + cfg.out_dir;
  return cfg.out_dir;
}

}  // namespace avfuse
