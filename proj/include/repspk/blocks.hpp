#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "repspk/init.hpp"
#include "repspk/tensor.hpp"

namespace repspk {

// Multi-branch block layouts. RSBA and RSBB are aliases of VAR_D and VAR_F;
// they keep their own enumerants so CLI round-trips preserve the given name.
enum class BlockVariant {
  kRepVgg,  // 3x3 | 1x1 | ID
  kVarA,    // 3x3 | 3x3 | ID
  kVarB,    // 3x3 | 1x3 | ID
  kVarC,    // 3x3 | 3x1 | ID
  kVarD,    // 3x3 | [1x1 -> 3x3] | ID
  kVarE,    // 3x3 | [1x1 -> 3x3 avgpool -> BN] | ID
  kVarF,    // 3x3 | 3x3 dilation 2 | ID
  kRsba,
  kRsbb,
};

const std::vector<std::string>& variant_names();
std::string variant_name(BlockVariant v);
// Throws ValueError listing the valid names.
BlockVariant parse_variant(const std::string& name);
// Maps the RSBA/RSBB aliases onto VAR_D/VAR_F.
BlockVariant canonical_variant(BlockVariant v);

// One convolution followed by batch normalization. The conv never carries
// its own bias; the BN beta plays that role.
template <typename T>
struct ConvBNDesc {
  ConvSpec<T> conv;
  BNParams<T> bn;
};

// Chain of ConvBN stages. Every stage after the first pads its input with
// the previous stage's BN-at-zero constant (see bn_at_zero) so the chain
// collapses into one convolution exactly, border pixels included.
template <typename T>
struct SequenceDesc {
  std::vector<ConvBNDesc<T>> stages;
};

// Optional 1x1 ConvBN, then average pooling, then batch normalization.
// Padded pool positions count toward the divisor and are filled with the
// pre-stage's BN-at-zero constant (zeros without a pre stage).
template <typename T>
struct AvgPoolDesc {
  std::optional<ConvBNDesc<T>> pre;
  int kh = 0, kw = 0;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;
  BNParams<T> bn;
};

// Identity shortcut through batch normalization.
template <typename T>
struct IdentityDesc {
  BNParams<T> bn;
};

template <typename T>
using BranchDesc =
    std::variant<ConvBNDesc<T>, SequenceDesc<T>, AvgPoolDesc<T>, IdentityDesc<T>>;

// Training-state block: parallel branches summed, then ReLU.
// branches[0] is always the main kxk ConvBN.
template <typename T>
struct RepBlock {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int sh = 1, sw = 1;
  std::vector<BranchDesc<T>> branches;
};

// BN output for zero input, per channel: beta - mu * gamma / sqrt(var + eps).
// This is the constant that bias-aware padding writes into the border.
template <typename T>
std::vector<T> bn_at_zero(const BNParams<T>& bn);

// Builds the branch set for a variant. All branches produce the same output
// geometry: 3x3 pad 1, 1x1 pad 0, 1x3 pad (0,1), 3x1 pad (1,0), dilated 3x3
// pad 2. Sequences put the block stride on the final kxk stage. The identity
// branch exists only when in_ch == out_ch and the stride is 1. When init is
// null, weights stay zero (deserialization fills them later).
template <typename T>
RepBlock<T> make_block(BlockVariant variant, std::int64_t in_ch,
                       std::int64_t out_ch, int sh, int sw,
                       InitPolicy* init = nullptr);

// Training-state forward of one branch, before the cross-branch addition.
template <typename T>
Tensor<T> branch_forward(const BranchDesc<T>& branch, const Tensor<T>& input);

// Sum of all branch outputs, then ReLU.
template <typename T>
Tensor<T> forward_train(const RepBlock<T>& block, const Tensor<T>& input);

// Inference-state forward: one convolution, then ReLU.
template <typename T>
Tensor<T> forward_inference(const ConvSpec<T>& conv, const Tensor<T>& input);

}  // namespace repspk
