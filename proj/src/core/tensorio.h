#pragma once

#include <string>
#include <vector>

#include "core/model.h"
#include "core/synthetic.h"

namespace avfuse {

// Raw-float tensor file: magic "AVFT", then rank and dims as little-endian
// 32-bit integers, then little-endian 32-bit floats, row-major.
inline constexpr char kTensorMagic[4] = {'A', 'V', 'F', 'T'};

void write_tensor_file(const std::string& path, const Tensor<float>& t);
Tensor<float> read_tensor_file(const std::string& path);

// Paired dataset directory: <id>.image.avft and <id>.audio.avft per sample,
// plus labels.csv rows "id,class_id,cross_label" (header optional). Sample
// tensors must match the configured geometry.
std::vector<SyntheticAVSample<float>> load_tensor_dir(const std::string& dir,
                                                      const DataConfig& expected,
                                                      int classes);

void write_tensor_dir(const std::string& dir,
                      const std::vector<SyntheticAVSample<float>>& samples);

}  // namespace avfuse
