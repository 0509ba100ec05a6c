#include "repspk/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "repspk/reparam.hpp"

namespace repspk {

namespace {

constexpr char kWeightMagic[4] = {'R', 'S', 'P', 'K'};
constexpr char kFeatureMagic[4] = {'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint8_t kMaxRank = 8;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

template <typename T>
void put_values(std::string& out, const std::vector<T>& values) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    const char* raw = reinterpret_cast<const char*>(values.data());
    out.append(raw, values.size() * sizeof(T));
  } else {
    for (const T& v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      for (std::size_t i = sizeof(T); i-- > 0;) out.push_back(bytes[i]);
    }
  }
}

// Bounds-checked little-endian cursor over an in-memory file image.
class Cursor {
 public:
  Cursor(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint16_t u16() {
    const char* p = take(2);
    return static_cast<std::uint16_t>(
        static_cast<std::uint8_t>(p[0]) |
        (static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[1])) << 8));
  }

  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<std::uint8_t>(p[i]);
    }
    return v;
  }

  std::string bytes(std::size_t n) { return std::string(take(n), n); }

  template <typename T>
  std::vector<T> values(std::size_t count) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    const char* p = take(count * sizeof(T));
    std::vector<T> out(count);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), p, count * sizeof(T));
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        char bytes[sizeof(T)];
        for (std::size_t b = 0; b < sizeof(T); ++b) {
          bytes[b] = p[i * sizeof(T) + sizeof(T) - 1 - b];
        }
        std::memcpy(&out[i], bytes, sizeof(T));
      }
    }
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  const char* take(std::size_t n) {
    if (n > remaining()) {
      throw IoError(path_ + ": truncated (need " + std::to_string(n) +
                    " bytes, " + std::to_string(remaining()) + " left)");
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& data_;
  const std::string path_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("cannot read " + path);
  return std::move(buf).str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out.good()) throw IoError("cannot write " + path);
}

}  // namespace

std::int64_t NamedTensor::count() const {
  std::int64_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

void write_weight_file(const std::string& path,
                       const std::vector<NamedTensor>& tensors) {
  std::string out;
  out.append(kWeightMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.size() > 0xffff) {
      throw ValueError("weight tensor name length out of range: '" + t.name +
                       "'");
    }
    if (t.dims.empty() || t.dims.size() > kMaxRank) {
      throw ValueError("weight tensor '" + t.name + "' has unsupported rank " +
                       std::to_string(t.dims.size()));
    }
    const std::size_t expect = static_cast<std::size_t>(t.count());
    const std::size_t got = t.is_f64 ? t.f64.size() : t.f32.size();
    if (expect != got) {
      throw ValueError("weight tensor '" + t.name + "' dims give " +
                       std::to_string(expect) + " values, buffer holds " +
                       std::to_string(got));
    }
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out.append(t.name);
    out.push_back(static_cast<char>(t.is_f64 ? kDtypeF64 : kDtypeF32));
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(out, d);
    if (t.is_f64) {
      put_values(out, t.f64);
    } else {
      put_values(out, t.f32);
    }
  }
  write_file(path, out);
}

std::vector<NamedTensor> read_weight_file(const std::string& path) {
  const std::string data = read_file(path);
  Cursor cur(data, path);
  if (cur.bytes(4) != std::string(kWeightMagic, 4)) {
    throw IoError(path + ": not a weight file (bad magic)");
  }
  const std::uint32_t version = cur.u32();
  if (version != kFormatVersion) {
    throw IoError(path + ": unsupported weight file version " +
                  std::to_string(version));
  }
  const std::uint32_t count = cur.u32();
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = cur.bytes(cur.u16());
    if (t.name.empty()) {
      throw IoError(path + ": tensor " + std::to_string(i) + " has no name");
    }
    const std::uint8_t dtype = cur.u8();
    if (dtype != kDtypeF32 && dtype != kDtypeF64) {
      throw IoError(path + ": tensor '" + t.name + "' has unknown dtype " +
                    std::to_string(dtype));
    }
    t.is_f64 = dtype == kDtypeF64;
    const std::uint8_t rank = cur.u8();
    if (rank == 0 || rank > kMaxRank) {
      throw IoError(path + ": tensor '" + t.name + "' has unsupported rank " +
                    std::to_string(rank));
    }
    std::uint64_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const std::uint32_t d = cur.u32();
      t.dims.push_back(d);
      n *= d;
      if (n > (std::uint64_t(1) << 33)) {
        throw IoError(path + ": tensor '" + t.name + "' is implausibly large");
      }
    }
    if (t.is_f64) {
      t.f64 = cur.values<double>(static_cast<std::size_t>(n));
    } else {
      t.f32 = cur.values<float>(static_cast<std::size_t>(n));
    }
    tensors.push_back(std::move(t));
  }
  if (cur.remaining() != 0) {
    throw IoError(path + ": " + std::to_string(cur.remaining()) +
                  " trailing bytes after last tensor");
  }
  return tensors;
}

void write_feature_file(const std::string& path, const FeatureMatrix& feat) {
  if (feat.data.size() !=
      static_cast<std::size_t>(feat.frames) * feat.freq_bins) {
    throw ValueError("feature matrix holds " + std::to_string(feat.data.size()) +
                     " values, header says " +
                     std::to_string(feat.frames) + "x" +
                     std::to_string(feat.freq_bins));
  }
  std::string out;
  out.append(kFeatureMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, feat.frames);
  put_u32(out, feat.freq_bins);
  put_values(out, feat.data);
  write_file(path, out);
}

FeatureMatrix read_feature_file(const std::string& path) {
  const std::string data = read_file(path);
  Cursor cur(data, path);
  if (cur.bytes(4) != std::string(kFeatureMagic, 4)) {
    throw IoError(path + ": not a feature file (bad magic)");
  }
  const std::uint32_t version = cur.u32();
  if (version != kFormatVersion) {
    throw IoError(path + ": unsupported feature file version " +
                  std::to_string(version));
  }
  FeatureMatrix feat;
  feat.frames = cur.u32();
  feat.freq_bins = cur.u32();
  const std::uint64_t n =
      static_cast<std::uint64_t>(feat.frames) * feat.freq_bins;
  if (n > (std::uint64_t(1) << 31)) {
    throw IoError(path + ": implausibly large feature matrix");
  }
  feat.data = cur.values<float>(static_cast<std::size_t>(n));
  if (cur.remaining() != 0) {
    throw IoError(path + ": " + std::to_string(cur.remaining()) +
                  " trailing bytes after feature data");
  }
  return feat;
}

template <typename T>
Tensor<T> feature_tensor(const FeatureMatrix& feat) {
  Tensor<T> out(1, 1, feat.freq_bins, feat.frames);
  for (std::uint32_t t = 0; t < feat.frames; ++t) {
    for (std::uint32_t f = 0; f < feat.freq_bins; ++f) {
      out.at(0, 0, f, t) = static_cast<T>(feat.data[t * feat.freq_bins + f]);
    }
  }
  return out;
}

void write_manifest(const std::string& path, const ModelManifest& manifest) {
  nlohmann::json j;
  j["format_version"] = manifest.format_version;
  j["arch"] = manifest.arch;
  j["variant"] = manifest.variant;
  j["state"] = manifest.state;
  j["precision"] = manifest.precision;
  j["width_a"] = manifest.width_a;
  j["width_b"] = manifest.width_b;
  j["stage_depths"] = manifest.stage_depths;
  j["stage_widths"] = manifest.stage_widths;
  j["initial_strides"] = manifest.initial_strides;
  j["input_freq_bins"] = manifest.input_freq_bins;
  j["embedding_dim"] = manifest.embedding_dim;
  j["seed"] = manifest.seed;
  j["block_count"] = manifest.block_count;
  j["param_count"] = manifest.param_count;
  if (manifest.state == "fused") {
    j["train_param_count"] = manifest.train_param_count;
  }
  j["weight_file"] = manifest.weight_file;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : manifest.tensors) {
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    if (t.hyperparam) entry["hyperparam"] = true;
    tensors.push_back(std::move(entry));
  }
  j["tensors"] = std::move(tensors);
  write_file(path, j.dump(2) + "\n");
}

ModelManifest read_manifest(const std::string& path) {
  const std::string data = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(data);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": invalid JSON: " + e.what());
  }
  ModelManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) {
      throw ValueError(path + ": unsupported manifest format_version " +
                       std::to_string(m.format_version));
    }
    m.arch = j.at("arch").get<std::string>();
    m.variant = j.at("variant").get<std::string>();
    m.state = j.at("state").get<std::string>();
    m.precision = j.at("precision").get<std::string>();
    m.width_a = j.at("width_a").get<double>();
    m.width_b = j.at("width_b").get<double>();
    m.stage_depths = j.at("stage_depths").get<std::vector<int>>();
    m.stage_widths = j.at("stage_widths").get<std::vector<std::int64_t>>();
    m.initial_strides = j.at("initial_strides").get<std::vector<int>>();
    m.input_freq_bins = j.at("input_freq_bins").get<std::int64_t>();
    m.embedding_dim = j.at("embedding_dim").get<std::int64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.block_count = j.at("block_count").get<int>();
    m.param_count = j.at("param_count").get<std::int64_t>();
    m.train_param_count = j.value("train_param_count", std::int64_t(0));
    m.weight_file = j.at("weight_file").get<std::string>();
    for (const auto& entry : j.at("tensors")) {
      TensorInfo t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::uint32_t>>();
      t.hyperparam = entry.value("hyperparam", false);
      m.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(path + ": manifest field error: " + e.what());
  }
  if (m.state != "train" && m.state != "fused") {
    throw ValueError(path + ": state must be train or fused, got '" +
                     m.state + "'");
  }
  if (m.precision != "single" && m.precision != "double") {
    throw ValueError(path + ": precision must be single or double, got '" +
                     m.precision + "'");
  }
  return m;
}

namespace {

template <typename T>
void add_bn_refs(std::vector<TensorRef<T>>& refs, const std::string& prefix,
                 BNParams<T>& bn) {
  const auto c = static_cast<std::uint32_t>(bn.channels());
  refs.push_back({prefix + ".gamma", &bn.gamma, nullptr, {c}, false});
  refs.push_back({prefix + ".beta", &bn.beta, nullptr, {c}, false});
  refs.push_back({prefix + ".mean", &bn.mu, nullptr, {c}, false});
  refs.push_back({prefix + ".var", &bn.var, nullptr, {c}, false});
  refs.push_back({prefix + ".eps", nullptr, &bn.epsilon, {1}, true});
}

template <typename T>
void add_conv_bn_refs(std::vector<TensorRef<T>>& refs,
                      const std::string& prefix, ConvBNDesc<T>& cb) {
  Kernel<T>& k = cb.conv.kernel;
  refs.push_back({prefix + ".conv.weight",
                  &k.weight,
                  nullptr,
                  {static_cast<std::uint32_t>(k.out_ch),
                   static_cast<std::uint32_t>(k.in_ch),
                   static_cast<std::uint32_t>(k.kh),
                   static_cast<std::uint32_t>(k.kw)},
                  false});
  add_bn_refs(refs, prefix + ".bn", cb.bn);
}

}  // namespace

template <typename T>
std::vector<TensorRef<T>> enumerate_tensors(ModelSpec<T>& model) {
  std::vector<TensorRef<T>> refs;
  if (model.state == ModelState::kTrain) {
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
      RepBlock<T>& block = model.blocks[i];
      for (std::size_t b = 0; b < block.branches.size(); ++b) {
        const std::string prefix =
            "block" + std::to_string(i) + ".branch" + std::to_string(b);
        std::visit(
            [&](auto& branch) {
              using B = std::decay_t<decltype(branch)>;
              if constexpr (std::is_same_v<B, ConvBNDesc<T>>) {
                add_conv_bn_refs(refs, prefix, branch);
              } else if constexpr (std::is_same_v<B, SequenceDesc<T>>) {
                for (std::size_t s = 0; s < branch.stages.size(); ++s) {
                  add_conv_bn_refs(refs,
                                   prefix + ".stage" + std::to_string(s),
                                   branch.stages[s]);
                }
              } else if constexpr (std::is_same_v<B, AvgPoolDesc<T>>) {
                if (branch.pre) {
                  add_conv_bn_refs(refs, prefix + ".pre", *branch.pre);
                }
                add_bn_refs(refs, prefix + ".bn", branch.bn);
              } else {
                add_bn_refs(refs, prefix + ".bn", branch.bn);
              }
            },
            block.branches[b]);
      }
    }
  } else {
    for (std::size_t i = 0; i < model.fused.size(); ++i) {
      ConvSpec<T>& conv = model.fused[i];
      const std::string prefix = "block" + std::to_string(i) + ".fused";
      refs.push_back({prefix + ".weight",
                      &conv.kernel.weight,
                      nullptr,
                      {static_cast<std::uint32_t>(conv.kernel.out_ch),
                       static_cast<std::uint32_t>(conv.kernel.in_ch),
                       static_cast<std::uint32_t>(conv.kernel.kh),
                       static_cast<std::uint32_t>(conv.kernel.kw)},
                      false});
      refs.push_back({prefix + ".bias",
                      &conv.bias,
                      nullptr,
                      {static_cast<std::uint32_t>(conv.kernel.out_ch)},
                      false});
    }
  }
  refs.push_back({"embed.weight",
                  &model.embed_weight,
                  nullptr,
                  {static_cast<std::uint32_t>(model.config.embedding_dim),
                   static_cast<std::uint32_t>(model.pooled_dim())},
                  false});
  refs.push_back({"embed.bias",
                  &model.embed_bias,
                  nullptr,
                  {static_cast<std::uint32_t>(model.config.embedding_dim)},
                  false});
  return refs;
}

template <typename T>
std::int64_t parameter_count(ModelSpec<T>& model) {
  std::int64_t n = 0;
  for (const auto& ref : enumerate_tensors(model)) {
    if (ref.hyperparam) continue;
    std::int64_t c = 1;
    for (std::uint32_t d : ref.dims) c *= d;
    n += c;
  }
  return n;
}

template <typename T>
void save_model(const std::string& dir, ModelSpec<T>& model,
                std::int64_t train_param_count) {
  const std::vector<TensorRef<T>> refs = enumerate_tensors(model);

  ModelManifest m;
  m.arch = arch_name(model.arch);
  m.variant = variant_name(model.variant);
  m.state = model.state == ModelState::kTrain ? "train" : "fused";
  m.precision = sizeof(T) == 8 ? "double" : "single";
  m.width_a = model.config.width_a;
  m.width_b = model.config.width_b;
  m.stage_depths.assign(model.config.stage_depths.begin(),
                        model.config.stage_depths.end());
  m.stage_widths.assign(model.config.stage_widths.begin(),
                        model.config.stage_widths.end());
  m.initial_strides.assign(model.config.initial_strides.begin(),
                           model.config.initial_strides.end());
  m.input_freq_bins = model.config.input_freq_bins;
  m.embedding_dim = model.config.embedding_dim;
  m.seed = model.seed;
  m.block_count = static_cast<int>(model.block_count());
  m.train_param_count = train_param_count;
  m.weight_file = "weights.rspk";

  std::vector<NamedTensor> tensors;
  tensors.reserve(refs.size());
  for (const auto& ref : refs) {
    std::int64_t c = 1;
    for (std::uint32_t d : ref.dims) c *= d;
    if (!ref.hyperparam) m.param_count += c;
    m.tensors.push_back({ref.name, ref.dims, ref.hyperparam});

    NamedTensor t;
    t.name = ref.name;
    t.is_f64 = sizeof(T) == 8;
    t.dims = ref.dims;
    if constexpr (sizeof(T) == 8) {
      if (ref.values) {
        t.f64 = *ref.values;
      } else {
        t.f64.assign(1, *ref.scalar);
      }
    } else {
      if (ref.values) {
        t.f32 = *ref.values;
      } else {
        t.f32.assign(1, *ref.scalar);
      }
    }
    tensors.push_back(std::move(t));
  }

  write_weight_file(dir + "/" + m.weight_file, tensors);
  write_manifest(manifest_path_in(dir), m);
}

namespace {

std::string dirname_of(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  if (slash == std::string::npos) return ".";
  if (slash == 0) return "/";
  return path.substr(0, slash);
}

}  // namespace

template <typename T>
ModelSpec<T> load_model(const ModelManifest& manifest,
                        const std::string& manifest_path) {
  const bool want_f64 = sizeof(T) == 8;
  if (want_f64 != (manifest.precision == "double")) {
    throw ValueError("load_model: manifest precision is " + manifest.precision);
  }
  ModelSpec<T> model =
      build_skeleton<T>(parse_arch(manifest.arch),
                        parse_variant(manifest.variant));
  if (manifest.state == "fused") model = fuse_model(model);
  model.seed = manifest.seed;

  // The arch template must agree with what the manifest claims.
  const ArchConfig& c = model.config;
  const bool depths_ok =
      manifest.stage_depths ==
      std::vector<int>(c.stage_depths.begin(), c.stage_depths.end());
  const bool widths_ok =
      manifest.stage_widths ==
      std::vector<std::int64_t>(c.stage_widths.begin(), c.stage_widths.end());
  const bool strides_ok =
      manifest.initial_strides ==
      std::vector<int>(c.initial_strides.begin(), c.initial_strides.end());
  if (!depths_ok || !widths_ok || !strides_ok ||
      manifest.input_freq_bins != c.input_freq_bins ||
      manifest.embedding_dim != c.embedding_dim ||
      manifest.block_count != static_cast<int>(model.block_count())) {
    throw ValueError(manifest_path +
                     ": stage layout does not match arch '" + manifest.arch +
                     "'");
  }

  std::vector<TensorRef<T>> refs = enumerate_tensors(model);
  std::vector<NamedTensor> stored =
      read_weight_file(dirname_of(manifest_path) + "/" + manifest.weight_file);

  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : stored) {
    if (!by_name.emplace(t.name, &t).second) {
      throw ValueError("weight file has duplicate tensor '" + t.name + "'");
    }
  }
  std::map<std::string, const TensorInfo*> index_by_name;
  for (const auto& t : manifest.tensors) {
    if (!index_by_name.emplace(t.name, &t).second) {
      throw ValueError(manifest_path + ": duplicate tensor index entry '" +
                       t.name + "'");
    }
  }
  if (stored.size() != refs.size() || manifest.tensors.size() != refs.size()) {
    throw ValueError(manifest_path + ": expected " +
                     std::to_string(refs.size()) + " tensors, weight file has " +
                     std::to_string(stored.size()) + ", index lists " +
                     std::to_string(manifest.tensors.size()));
  }

  for (auto& ref : refs) {
    const auto idx = index_by_name.find(ref.name);
    if (idx == index_by_name.end()) {
      throw ValueError(manifest_path + ": tensor '" + ref.name +
                       "' missing from index");
    }
    if (idx->second->shape != ref.dims) {
      throw ValueError(manifest_path + ": tensor '" + ref.name +
                       "' has wrong indexed shape");
    }
    const auto it = by_name.find(ref.name);
    if (it == by_name.end()) {
      throw ValueError("weight file: tensor '" + ref.name + "' missing");
    }
    const NamedTensor& t = *it->second;
    if (t.is_f64 != want_f64) {
      throw ValueError("weight file: tensor '" + ref.name +
                       "' dtype does not match manifest precision");
    }
    if (t.dims != ref.dims) {
      throw ValueError("weight file: tensor '" + ref.name +
                       "' has wrong shape");
    }
    if constexpr (sizeof(T) == 8) {
      if (ref.values) {
        *ref.values = t.f64;
      } else {
        *ref.scalar = t.f64[0];
      }
    } else {
      if (ref.values) {
        *ref.values = t.f32;
      } else {
        *ref.scalar = t.f32[0];
      }
    }
  }
  return model;
}

template Tensor<float> feature_tensor(const FeatureMatrix&);
template Tensor<double> feature_tensor(const FeatureMatrix&);
template std::vector<TensorRef<float>> enumerate_tensors(ModelSpec<float>&);
template std::vector<TensorRef<double>> enumerate_tensors(ModelSpec<double>&);
template std::int64_t parameter_count(ModelSpec<float>&);
template std::int64_t parameter_count(ModelSpec<double>&);
template void save_model(const std::string&, ModelSpec<float>&, std::int64_t);
template void save_model(const std::string&, ModelSpec<double>&, std::int64_t);
template ModelSpec<float> load_model(const ModelManifest&, const std::string&);
template ModelSpec<double> load_model(const ModelManifest&, const std::string&);

}  // namespace repspk
