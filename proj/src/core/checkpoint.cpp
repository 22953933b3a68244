#include "core/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

namespace avfuse {

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_floats(std::ostream& os, const float* data, size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& is) {
  uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint truncated");
  return s;
}

std::vector<float> get_floats(std::istream& is, size_t n) {
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg,
                     const ParamStore<float>& params, const Adam<float>* opt, long step,
                     const Rng& rng) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 4);
  os.put(static_cast<char>(kCheckpointVersion));
  put_string(os, cfg.serialize());
  put_u64(os, static_cast<uint64_t>(step));
  put_string(os, rng.serialize());

  put_u32(os, static_cast<uint32_t>(params.size()));
  for (const std::string& name : params.names()) {
    const Tensor<float>& t = params.at(name);
    put_string(os, name);
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (index_t d : t.shape()) put_u32(os, static_cast<uint32_t>(d));
    put_floats(os, t.data().data(), t.data().size());
  }

  os.put(opt ? 1 : 0);
  if (opt) {
    Adam<float>& o = *const_cast<Adam<float>*>(opt);
    put_u64(os, static_cast<uint64_t>(o.step_count()));
    for (size_t i = 0; i < params.size(); ++i) {
      put_floats(os, o.moment1()[i].data(), o.moment1()[i].size());
      put_floats(os, o.moment2()[i].data(), o.moment2()[i].size());
    }
  }
  if (!os) throw IoError("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  int version = is.get();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint out;
  out.config_text = get_string(is);
  out.config = RunConfig::from_text(out.config_text);
  out.step = static_cast<long>(get_u64(is));
  out.rng.deserialize(get_string(is));

  uint32_t count = get_u32(is);
  out.params.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = get_string(is);
    uint32_t rank = get_u32(is);
    index_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<index_t>(get_u32(is)));
      numel *= t.shape.back();
    }
    t.data = get_floats(is, static_cast<size_t>(numel));
    out.params.push_back(std::move(t));
  }

  int flag = is.get();
  if (flag == 1) {
    out.has_optimizer = true;
    out.opt_step = static_cast<long>(get_u64(is));
    for (const CheckpointTensor& t : out.params) {
      out.moment1.push_back(get_floats(is, t.data.size()));
      out.moment2.push_back(get_floats(is, t.data.size()));
    }
  }
  return out;
}

void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamStore<float>& params,
                      Adam<float>* opt) {
  if (ckpt.params.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                      " tensors, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < ckpt.params.size(); ++i) {
    const CheckpointTensor& t = ckpt.params[i];
    if (!params.contains(t.name))
      throw ConfigError("checkpoint tensor '" + t.name + "' not present in this model");
    Tensor<float>& dst = params.at(t.name);
    if (dst.shape() != t.shape)
      throw ConfigError("checkpoint tensor '" + t.name + "' has shape " +
                        shape_str(t.shape) + ", model expects " + shape_str(dst.shape()));
    std::copy(t.data.begin(), t.data.end(), dst.data_mut().begin());
  }
  if (opt && ckpt.has_optimizer) {
    opt->set_step_count(ckpt.opt_step);
    for (size_t i = 0; i < ckpt.params.size(); ++i) {
      opt->moment1()[i] = ckpt.moment1[i];
      opt->moment2()[i] = ckpt.moment2[i];
    }
  }
}

std::vector<std::string> inspect_checkpoint(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  std::vector<std::string> lines;
  lines.push_back("version: " + std::to_string(kCheckpointVersion));
  lines.push_back("step: " + std::to_string(ckpt.step));
  lines.push_back("optimizer: " + std::string(ckpt.has_optimizer ? "present" : "absent"));
  index_t total = 0;
  for (const CheckpointTensor& t : ckpt.params) total += static_cast<index_t>(t.data.size());
  lines.push_back("tensors: " + std::to_string(ckpt.params.size()) + " (" +
                  std::to_string(total) + " elements)");
  for (const CheckpointTensor& t : ckpt.params)
    lines.push_back("  " + t.name + " " + shape_str(t.shape));
  lines.push_back("config:");
  std::istringstream cfg(ckpt.config_text);
  std::string line;
  while (std::getline(cfg, line)) lines.push_back("  " + line);
  return lines;
}

}  // namespace avfuse
