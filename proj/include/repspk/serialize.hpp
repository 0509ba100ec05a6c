#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repspk/network.hpp"
#include "repspk/tensor.hpp"

namespace repspk {

// One tensor of the weight container. Exactly one of f32/f64 is used,
// selected by is_f64.
struct NamedTensor {
  std::string name;
  bool is_f64 = false;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::int64_t count() const;
};

// Binary container: magic `RSPK`, u32 version 1, u32 entry count, then per
// entry u16 name length, name bytes, u8 dtype (0 f32, 1 f64), u8 rank,
// rank u32 dims, raw values. Everything little-endian, values row-major.
// The reader rejects trailing bytes and any size mismatch.
void write_weight_file(const std::string& path,
                       const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_weight_file(const std::string& path);

// Frame features: magic `FEAT`, u32 version 1, u32 frame count T, u32 bin
// count F, then T*F little-endian f32 values frame after frame.
struct FeatureMatrix {
  std::uint32_t frames = 0;
  std::uint32_t freq_bins = 0;
  std::vector<float> data;  // [frames][freq_bins]
};

void write_feature_file(const std::string& path, const FeatureMatrix& feat);
FeatureMatrix read_feature_file(const std::string& path);

// [1, 1, F, T] network input from a feature matrix.
template <typename T>
Tensor<T> feature_tensor(const FeatureMatrix& feat);

struct TensorInfo {
  std::string name;
  std::vector<std::uint32_t> shape;
  // Hyperparameters (BN epsilon) ride along in the weight file but do not
  // count as parameters.
  bool hyperparam = false;
};

// JSON sidecar describing a serialized model; the weight file path is
// relative to the manifest's directory.
struct ModelManifest {
  int format_version = 1;
  std::string arch;
  std::string variant;
  std::string state;      // "train" | "fused"
  std::string precision;  // "single" | "double"
  double width_a = 0.0;
  double width_b = 0.0;
  std::vector<int> stage_depths;
  std::vector<std::int64_t> stage_widths;
  std::vector<int> initial_strides;
  std::int64_t input_freq_bins = 0;
  std::int64_t embedding_dim = 0;
  std::uint64_t seed = 0;
  int block_count = 0;
  std::int64_t param_count = 0;
  // Fused manifests record the pre-fusion count; 0 in train manifests.
  std::int64_t train_param_count = 0;
  std::string weight_file;
  std::vector<TensorInfo> tensors;
};

void write_manifest(const std::string& path, const ModelManifest& manifest);
ModelManifest read_manifest(const std::string& path);

// Mutable named view of one parameter tensor inside a ModelSpec. Either
// values (bulk) or scalar (single hyperparameter) is set.
template <typename T>
struct TensorRef {
  std::string name;
  std::vector<T>* values = nullptr;
  T* scalar = nullptr;
  std::vector<std::uint32_t> dims;
  bool hyperparam = false;
};

// Canonical tensor enumeration shared by save and load, in fixed order:
// blocks (branch by branch) then the embedding head.
template <typename T>
std::vector<TensorRef<T>> enumerate_tensors(ModelSpec<T>& model);

// Parameters counted over an enumeration, hyperparameters excluded.
template <typename T>
std::int64_t parameter_count(ModelSpec<T>& model);

// Writes <dir>/manifest.json and <dir>/weights.rspk.
template <typename T>
void save_model(const std::string& dir, ModelSpec<T>& model,
                std::int64_t train_param_count = 0);

// Rebuilds the model a manifest describes and fills it from the weight
// file. The caller picks T to match manifest.precision.
template <typename T>
ModelSpec<T> load_model(const ModelManifest& manifest,
                        const std::string& manifest_path);

inline std::string manifest_path_in(const std::string& dir) {
  return dir + "/manifest.json";
}

}  // namespace repspk
