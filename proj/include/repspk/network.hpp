#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "repspk/blocks.hpp"
#include "repspk/tensor.hpp"

namespace repspk {

enum class Arch { kA0, kA1, kA2, kToy };

const std::vector<std::string>& arch_names();
std::string arch_name(Arch a);
// Throws ValueError listing the valid names.
Arch parse_arch(const std::string& name);

// Five stages: stem plus four block stages. Widths follow the A-family
// convention: stem min(64, 64a), then [64a, 128a, 256a, 512b], rounded to
// nearest integer. The toy config shrinks everything to desk scale.
struct ArchConfig {
  double width_a = 1.0;
  double width_b = 1.0;
  std::array<int, 5> stage_depths{};
  std::array<std::int64_t, 5> stage_widths{};
  std::array<int, 5> initial_strides{};  // stride of each stage's first block
  std::int64_t input_freq_bins = 81;
  std::int64_t embedding_dim = 512;
};

ArchConfig arch_config(Arch arch);

// Frequency bins left after the stride-2 stages: f -> (f-1)/s + 1 per stage
// (3x3 pad-1 floor arithmetic; the fused 5x5 pad-2 form gives the same map).
std::int64_t output_freq_bins(const ArchConfig& config);

enum class ModelState { kTrain, kFused };

template <typename T>
struct ModelSpec {
  Arch arch = Arch::kToy;
  BlockVariant variant = BlockVariant::kRepVgg;
  std::uint64_t seed = 0;
  ArchConfig config;
  ModelState state = ModelState::kTrain;
  std::vector<RepBlock<T>> blocks;   // populated in train state
  std::vector<ConvSpec<T>> fused;    // populated in fused state
  std::vector<T> embed_weight;       // [embedding_dim x pooled_dim] row-major
  std::vector<T> embed_bias;         // [embedding_dim]

  std::int64_t block_count() const;
  // Feature dim per frame after the backbone reshape: final width * f_out.
  std::int64_t frame_dim() const;
  // Pooling doubles the frame dim (mean and std).
  std::int64_t pooled_dim() const { return 2 * frame_dim(); }
};

// Deterministic: one seeded stream consumed in fixed build order, so equal
// (arch, variant, seed) give byte-identical weights.
template <typename T>
ModelSpec<T> build_model(Arch arch, BlockVariant variant, std::uint64_t seed);

// Same structure with all weights zero; deserialization fills them in.
template <typename T>
ModelSpec<T> build_skeleton(Arch arch, BlockVariant variant);

// Collapses every block into its single-conv form.
template <typename T>
ModelSpec<T> fuse_model(const ModelSpec<T>& model);

// [N, 1, F, T] -> frame features [N, C*F', 1, T']. Requires T >= 8 so the
// stride-2 stages keep at least one frame.
template <typename T>
Tensor<T> forward_backbone(const ModelSpec<T>& model,
                           const Tensor<T>& features);

// [N, D, 1, T] -> [N, 2D, 1, 1]: per-dim mean over time, then per-dim
// std = sqrt(population variance + 1e-10).
template <typename T>
Tensor<T> statistical_pooling(const Tensor<T>& frames);

// Full pipeline: backbone, pooling, affine head. One embedding per batch row.
template <typename T>
std::vector<std::vector<T>> embed(const ModelSpec<T>& model,
                                  const Tensor<T>& features);

// Mean additive-margin softmax loss over scaled cosine logits: the target
// logit is s*(cos_y - m), the rest s*cos_j. Evaluated through a max-shifted
// log-sum-exp (log1p form when the target is the max) so near-zero losses
// keep full relative precision.
double am_softmax_loss(const std::vector<double>& cosines, std::int64_t n,
                       std::int64_t c, const std::vector<int>& labels,
                       double s, double m);

// Cosine similarity between the main branch's pre-addition output and each
// auxiliary (non-identity) branch's, flattened per sample and averaged over
// the batch. nullopt when a zero-norm output makes the cosine undefined.
template <typename T>
std::vector<std::optional<double>> branch_similarity(const RepBlock<T>& block,
                                                     const Tensor<T>& input);

}  // namespace repspk
