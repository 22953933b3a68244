#include "core/tensorio.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace avfuse {

namespace fs = std::filesystem;

void write_tensor_file(const std::string& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write tensor file: " + path);
  os.write(kTensorMagic, 4);
  uint32_t rank = static_cast<uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 4);
  for (index_t d : t.shape()) {
    uint32_t dim = static_cast<uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&dim), 4);
  }
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.data().size() * 4));
  if (!os) throw IoError("short write: " + path);
}

Tensor<float> read_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open tensor file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw IoError("not a tensor file: " + path);
  uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 4);
  if (!is || rank > 8) throw IoError("bad tensor rank in " + path);
  Shape shape;
  index_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = 0;
    is.read(reinterpret_cast<char*>(&d), 4);
    if (!is) throw IoError("truncated tensor header in " + path);
    shape.push_back(static_cast<index_t>(d));
    numel *= d;
  }
  Tensor<float> t = Tensor<float>::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data_mut().data()),
          static_cast<std::streamsize>(numel * 4));
  if (!is) throw IoError("truncated tensor payload in " + path);
  return t;
}

std::vector<SyntheticAVSample<float>> load_tensor_dir(const std::string& dir,
                                                      const DataConfig& expected,
                                                      int classes) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::map<std::string, std::pair<std::string, std::string>> pairs;  // id -> paths
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    auto ends_with = [&](const char* suf) {
      std::string s(suf);
      return name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".image.avft"))
      pairs[name.substr(0, name.size() - 11)].first = entry.path().string();
    else if (ends_with(".audio.avft"))
      pairs[name.substr(0, name.size() - 11)].second = entry.path().string();
  }

  std::map<std::string, std::pair<int, int>> labels;
  std::ifstream lf(dir + "/labels.csv");
  if (lf) {
    std::string line;
    while (std::getline(lf, line)) {
      if (line.empty() || line.rfind("id,", 0) == 0) continue;
      std::stringstream ss(line);
      std::string id, cid, xid;
      if (std::getline(ss, id, ',') && std::getline(ss, cid, ',') && std::getline(ss, xid))
        labels[id] = {std::stoi(cid), std::stoi(xid)};
    }
  }

  std::vector<SyntheticAVSample<float>> out;
  for (const auto& [id, paths] : pairs) {
    if (paths.first.empty() || paths.second.empty())
      throw IoError("sample '" + id + "' is missing one modality file in " + dir);
    SyntheticAVSample<float> s;
    s.image = read_tensor_file(paths.first);
    s.spectrogram = read_tensor_file(paths.second);
    if (s.image.shape() != Shape{expected.image_channels, expected.image_size,
                                 expected.image_size})
      throw DimensionError("sample '" + id + "': image shape " + shape_str(s.image.shape()) +
                           " does not match the configured geometry");
    if (s.spectrogram.shape() != Shape{1, expected.spec_bins, expected.spec_frames})
      throw DimensionError("sample '" + id + "': spectrogram shape " +
                           shape_str(s.spectrogram.shape()) +
                           " does not match the configured geometry");
    auto it = labels.find(id);
    if (it != labels.end()) {
      s.class_id = it->second.first % classes;
      s.cross_label = it->second.second % classes;
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("no .image.avft/.audio.avft pairs found in " + dir);
  return out;
}

void write_tensor_dir(const std::string& dir,
                      const std::vector<SyntheticAVSample<float>>& samples) {
  fs::create_directories(dir);
  std::ofstream lf(dir + "/labels.csv");
  lf << "id,class_id,cross_label\n";
  for (size_t i = 0; i < samples.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "%06zu", i);
    write_tensor_file(dir + "/" + id + ".image.avft", samples[i].image);
    write_tensor_file(dir + "/" + id + ".audio.avft", samples[i].spectrogram);
    lf << id << ',' << samples[i].class_id << ',' << samples[i].cross_label << "\n";
  }
}

}  // namespace avfuse
