#pragma once

#include <cstdint>
#include <vector>

#include "repspk/blocks.hpp"
#include "repspk/tensor.hpp"

namespace repspk {

// Kernel plus per-output-channel bias: a branch reduced to plain convolution.
template <typename T>
struct FusedConv {
  Kernel<T> weight;
  std::vector<T> bias;
};

// Folds batch normalization into the preceding convolution:
// weight'_o = (gamma_o / sigma_o) * weight_o,
// bias'_o   = beta_o - mu_o * gamma_o / sigma_o,  sigma_o = sqrt(var_o + eps).
template <typename T>
FusedConv<T> fuse_conv_bn(const Kernel<T>& weight, const BNParams<T>& bn);

// Embeds a kernel centered in a (kh, kw) zero kernel. The size difference
// must be even on both axes; an off-center embedding has no equivalent
// padding and is rejected.
template <typename T>
Kernel<T> pad_kernel(const Kernel<T>& weight, int kh, int kw);

// Expands a dilated kernel to its dense equivalent of size
// (1+(kh-1)*dh, 1+(kw-1)*dw): original taps at stride-d positions, zeros
// elsewhere. Convolving with the dense kernel at dilation 1 gives bit-equal
// output.
template <typename T>
Kernel<T> dilate_to_dense(const Kernel<T>& weight, int dh, int dw);

// Delta kernel reproducing the identity map: weight[c][c][center] = 1.
// Requires odd kernel dims (an even kernel has no center tap).
template <typename T>
Kernel<T> identity_to_conv(std::int64_t channels, int kh, int kw);

// Kernel computing a kh x kw average per channel: own-channel taps are
// 1/(kh*kw), cross-channel taps zero. Matches avgpool2d bit for bit under
// the divisor-counts-padding convention.
template <typename T>
Kernel<T> avgpool_to_conv(std::int64_t channels, int kh, int kw);

// Collapses [1x1 conv+bias] -> [kxk conv+bias] into one kxk conv+bias:
//   weight'_{o,i,u,v} = sum_m second_{o,m,u,v} * first_{m,i,0,0}
//   bias'_o = second_bias_o + sum_{d,u,v} first_bias_d * second_{o,d,u,v}
// Exact (borders included) only when the two-stage forward padded the
// intermediate with first's bias rather than zeros.
template <typename T>
FusedConv<T> fuse_sequential(const FusedConv<T>& first,
                             const FusedConv<T>& second);

// Sums branches into one conv: kernels zero-padded to (kh, kw) and added,
// biases added.
template <typename T>
FusedConv<T> merge_parallel(const std::vector<FusedConv<T>>& branches, int kh,
                            int kw);

// Reduces one training-state branch to a plain conv+bias at its natural
// dense kernel size (before padding to the block's merge target).
template <typename T>
FusedConv<T> reduce_branch(const BranchDesc<T>& branch);

// Full block fusion: every branch reduced, padded to the widest branch
// extent, summed. The result keeps the block stride, uses padding
// (target-1)/2, dilation 1, zero-filled padding, and carries a bias.
template <typename T>
ConvSpec<T> fuse_block(const RepBlock<T>& block);

// Multiply-accumulate count of one convolution on the given input:
// 2 * N * Cout * Hout * Wout * Cin * kh * kw. Bias and activation excluded.
template <typename T>
std::int64_t count_flops(const ConvSpec<T>& conv, const Shape4& input);

// Training-state block count: each conv as above, each pooling window as an
// own-channel conv, each BN and each branch addition as one op per output
// element. Activation excluded.
template <typename T>
std::int64_t count_flops(const RepBlock<T>& block, const Shape4& input);

}  // namespace repspk
