#include "repspk/network.hpp"

#include <algorithm>
#include <cmath>

#include "repspk/reparam.hpp"

namespace repspk {

const std::vector<std::string>& arch_names() {
  static const std::vector<std::string> names = {"a0", "a1", "a2", "toy"};
  return names;
}

std::string arch_name(Arch a) {
  return arch_names()[static_cast<std::size_t>(a)];
}

Arch parse_arch(const std::string& name) {
  const auto& names = arch_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<Arch>(i);
  }
  std::string valid;
  for (const auto& n : names) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw ValueError("unknown arch '" + name + "' (valid: " + valid + ")");
}

namespace {

ArchConfig scaled_config(double a, double b) {
  ArchConfig c;
  c.width_a = a;
  c.width_b = b;
  c.stage_depths = {1, 2, 4, 14, 1};
  c.initial_strides = {1, 1, 2, 2, 2};
  c.stage_widths = {
      std::min<std::int64_t>(64, std::llround(64 * a)),
      std::llround(64 * a),
      std::llround(128 * a),
      std::llround(256 * a),
      std::llround(512 * b),
  };
  c.input_freq_bins = 81;
  c.embedding_dim = 512;
  return c;
}

}  // namespace

ArchConfig arch_config(Arch arch) {
  switch (arch) {
    case Arch::kA0:
      return scaled_config(0.75, 2.5);
    case Arch::kA1:
      return scaled_config(1.0, 2.5);
    case Arch::kA2:
      return scaled_config(1.5, 2.75);
    case Arch::kToy: {
      ArchConfig c;
      c.width_a = 0.125;
      c.width_b = 0.125;
      c.stage_depths = {1, 1, 1, 2, 1};
      c.stage_widths = {8, 8, 16, 32, 64};
      c.initial_strides = {1, 1, 2, 2, 2};
      c.input_freq_bins = 16;
      c.embedding_dim = 32;
      return c;
    }
  }
  throw ValueError("arch_config: unhandled arch");
}

std::int64_t output_freq_bins(const ArchConfig& config) {
  std::int64_t f = config.input_freq_bins;
  for (int s : config.initial_strides) f = (f - 1) / s + 1;
  return f;
}

template <typename T>
std::int64_t ModelSpec<T>::block_count() const {
  std::int64_t n = 0;
  for (int d : config.stage_depths) n += d;
  return n;
}

template <typename T>
std::int64_t ModelSpec<T>::frame_dim() const {
  return config.stage_widths[4] * output_freq_bins(config);
}

namespace {

template <typename T>
ModelSpec<T> build_impl(Arch arch, BlockVariant variant, std::uint64_t seed,
                        InitPolicy* init) {
  ModelSpec<T> model;
  model.arch = arch;
  model.variant = variant;
  model.seed = seed;
  model.config = arch_config(arch);
  model.state = ModelState::kTrain;

  std::int64_t in_ch = 1;
  for (std::size_t s = 0; s < model.config.stage_depths.size(); ++s) {
    const std::int64_t width = model.config.stage_widths[s];
    for (int d = 0; d < model.config.stage_depths[s]; ++d) {
      const int stride = d == 0 ? model.config.initial_strides[s] : 1;
      model.blocks.push_back(
          make_block<T>(variant, in_ch, width, stride, stride, init));
      in_ch = width;
    }
  }

  const std::int64_t emb = model.config.embedding_dim;
  model.embed_weight.assign(
      static_cast<std::size_t>(emb * model.pooled_dim()), T(0));
  model.embed_bias.assign(static_cast<std::size_t>(emb), T(0));
  if (init) init->fill(model.embed_weight, model.pooled_dim());
  return model;
}

}  // namespace

template <typename T>
ModelSpec<T> build_model(Arch arch, BlockVariant variant, std::uint64_t seed) {
  InitPolicy init(seed);
  return build_impl<T>(arch, variant, seed, &init);
}

template <typename T>
ModelSpec<T> build_skeleton(Arch arch, BlockVariant variant) {
  return build_impl<T>(arch, variant, 0, nullptr);
}

template <typename T>
ModelSpec<T> fuse_model(const ModelSpec<T>& model) {
  if (model.state != ModelState::kTrain) {
    throw ValueError("fuse_model: model is already fused");
  }
  ModelSpec<T> out = model;
  out.state = ModelState::kFused;
  out.fused.reserve(model.blocks.size());
  for (const auto& block : model.blocks) out.fused.push_back(fuse_block(block));
  out.blocks.clear();
  return out;
}

template <typename T>
Tensor<T> forward_backbone(const ModelSpec<T>& model,
                           const Tensor<T>& features) {
  if (features.shape.c != 1 || features.shape.h != model.config.input_freq_bins) {
    throw ShapeError("forward_backbone: expected input [N, 1, " +
                     std::to_string(model.config.input_freq_bins) +
                     ", T], got " + features.shape.str());
  }
  if (features.shape.w < 8) {
    throw ShapeError("forward_backbone: need at least 8 frames for the "
                     "stride-2 stages, got " +
                     std::to_string(features.shape.w));
  }
  Tensor<T> x = features;
  if (model.state == ModelState::kTrain) {
    for (const auto& block : model.blocks) x = forward_train(block, x);
  } else {
    for (const auto& conv : model.fused) x = forward_inference(conv, x);
  }
  // [N][C][F'][T'] row-major flattens to [N][C*F'][T'] unchanged.
  x.shape = Shape4{x.shape.n, x.shape.c * x.shape.h, 1, x.shape.w};
  return x;
}

template <typename T>
Tensor<T> statistical_pooling(const Tensor<T>& frames) {
  if (frames.shape.h != 1 || frames.shape.w < 1) {
    throw ShapeError("statistical_pooling: expected [N, D, 1, T] with T >= 1, "
                     "got " + frames.shape.str());
  }
  const std::int64_t n_n = frames.shape.n, d_n = frames.shape.c,
                     t_n = frames.shape.w;
  Tensor<T> out(n_n, 2 * d_n, 1, 1);
  for (std::int64_t n = 0; n < n_n; ++n) {
    for (std::int64_t d = 0; d < d_n; ++d) {
      const T* row = frames.data.data() + frames.index(n, d, 0, 0);
      T sum = T(0);
      for (std::int64_t t = 0; t < t_n; ++t) sum += row[t];
      const T mean = sum / static_cast<T>(t_n);
      T sq = T(0);
      for (std::int64_t t = 0; t < t_n; ++t) {
        const T diff = row[t] - mean;
        sq += diff * diff;
      }
      const T var = sq / static_cast<T>(t_n);
      out.at(n, d, 0, 0) = mean;
      out.at(n, d_n + d, 0, 0) = std::sqrt(var + static_cast<T>(1e-10));
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<T>> embed(const ModelSpec<T>& model,
                                  const Tensor<T>& features) {
  const Tensor<T> pooled = statistical_pooling(forward_backbone(model, features));
  const std::int64_t dim = model.pooled_dim();
  if (pooled.shape.c != dim) {
    throw ShapeError("embed: pooled dim " + std::to_string(pooled.shape.c) +
                     " does not match head input " + std::to_string(dim));
  }
  const std::int64_t emb = model.config.embedding_dim;
  std::vector<std::vector<T>> out;
  out.reserve(static_cast<std::size_t>(pooled.shape.n));
  for (std::int64_t n = 0; n < pooled.shape.n; ++n) {
    const T* p = pooled.data.data() + pooled.index(n, 0, 0, 0);
    std::vector<T> e(static_cast<std::size_t>(emb));
    for (std::int64_t i = 0; i < emb; ++i) {
      const T* w = model.embed_weight.data() + i * dim;
      T acc = T(0);
      for (std::int64_t k = 0; k < dim; ++k) acc += w[k] * p[k];
      e[static_cast<std::size_t>(i)] =
          acc + model.embed_bias[static_cast<std::size_t>(i)];
      if (!std::isfinite(static_cast<double>(e[static_cast<std::size_t>(i)]))) {
        throw ValueError("embed: non-finite embedding value");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

double am_softmax_loss(const std::vector<double>& cosines, std::int64_t n,
                       std::int64_t c, const std::vector<int>& labels,
                       double s, double m) {
  if (n < 1 || c < 1 ||
      cosines.size() != static_cast<std::size_t>(n * c) ||
      labels.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("am_softmax_loss: need n*c cosines and n labels");
  }
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw ValueError("am_softmax_loss: label " + std::to_string(y) +
                       " out of range [0, " + std::to_string(c) + ")");
    }
    const double* row = cosines.data() + i * c;
    const double zy = s * (row[y] - m);
    double zmax = zy;
    for (std::int64_t j = 0; j < c; ++j) {
      if (j == y) continue;
      zmax = std::max(zmax, s * row[j]);
    }
    if (zmax == zy) {
      double sum = 0.0;
      for (std::int64_t j = 0; j < c; ++j) {
        if (j == y) continue;
        sum += std::exp(s * row[j] - zy);
      }
      total += std::log1p(sum);
    } else {
      double sum = std::exp(zy - zmax);
      for (std::int64_t j = 0; j < c; ++j) {
        if (j == y) continue;
        sum += std::exp(s * row[j] - zmax);
      }
      total += (zmax - zy) + std::log(sum);
    }
  }
  return total / static_cast<double>(n);
}

template <typename T>
std::vector<std::optional<double>> branch_similarity(const RepBlock<T>& block,
                                                     const Tensor<T>& input) {
  if (block.branches.empty() ||
      !std::holds_alternative<ConvBNDesc<T>>(block.branches[0])) {
    throw ValueError("branch_similarity: block has no main conv branch");
  }
  const Tensor<T> main = branch_forward(block.branches[0], input);
  const std::int64_t per_sample = main.shape.c * main.shape.h * main.shape.w;

  std::vector<std::optional<double>> result;
  for (std::size_t b = 1; b < block.branches.size(); ++b) {
    if (std::holds_alternative<IdentityDesc<T>>(block.branches[b])) continue;
    const Tensor<T> aux = branch_forward(block.branches[b], input);
    double acc = 0.0;
    bool defined = true;
    for (std::int64_t n = 0; n < main.shape.n && defined; ++n) {
      const T* a = main.data.data() + n * per_sample;
      const T* x = aux.data.data() + n * per_sample;
      double dot = 0.0, na = 0.0, nx = 0.0;
      for (std::int64_t i = 0; i < per_sample; ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(x[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nx += static_cast<double>(x[i]) * static_cast<double>(x[i]);
      }
      if (na == 0.0 || nx == 0.0) {
        defined = false;
      } else {
        acc += dot / (std::sqrt(na) * std::sqrt(nx));
      }
    }
    if (defined) {
      result.emplace_back(acc / static_cast<double>(main.shape.n));
    } else {
      result.emplace_back(std::nullopt);
    }
  }
  if (result.empty()) {
    throw ValueError("branch_similarity: block has no auxiliary conv branch");
  }
  return result;
}

template struct ModelSpec<float>;
template struct ModelSpec<double>;
template ModelSpec<float> build_model(Arch, BlockVariant, std::uint64_t);
template ModelSpec<double> build_model(Arch, BlockVariant, std::uint64_t);
template ModelSpec<float> build_skeleton(Arch, BlockVariant);
template ModelSpec<double> build_skeleton(Arch, BlockVariant);
template ModelSpec<float> fuse_model(const ModelSpec<float>&);
template ModelSpec<double> fuse_model(const ModelSpec<double>&);
template Tensor<float> forward_backbone(const ModelSpec<float>&,
                                        const Tensor<float>&);
template Tensor<double> forward_backbone(const ModelSpec<double>&,
                                         const Tensor<double>&);
template Tensor<float> statistical_pooling(const Tensor<float>&);
template Tensor<double> statistical_pooling(const Tensor<double>&);
template std::vector<std::vector<float>> embed(const ModelSpec<float>&,
                                               const Tensor<float>&);
template std::vector<std::vector<double>> embed(const ModelSpec<double>&,
                                                const Tensor<double>&);
template std::vector<std::optional<double>> branch_similarity(
    const RepBlock<float>&, const Tensor<float>&);
template std::vector<std::optional<double>> branch_similarity(
    const RepBlock<double>&, const Tensor<double>&);

}  // namespace repspk
