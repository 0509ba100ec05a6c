#include "repspk/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace repspk {

template <typename T>
FusedConv<T> fuse_conv_bn(const Kernel<T>& weight, const BNParams<T>& bn) {
  if (bn.channels() != weight.out_ch) {
    throw ShapeError("fuse_conv_bn: kernel has " +
                     std::to_string(weight.out_ch) +
                     " output channels but BN carries " +
                     std::to_string(bn.channels()));
  }
  FusedConv<T> out;
  out.weight = weight;
  out.bias.resize(static_cast<std::size_t>(weight.out_ch));
  const std::int64_t per_out = weight.in_ch *
                               static_cast<std::int64_t>(weight.kh) * weight.kw;
  for (std::int64_t o = 0; o < weight.out_ch; ++o) {
    const auto oc = static_cast<std::size_t>(o);
    const T v = bn.var[oc];
    if (!(v + bn.epsilon > T(0))) {
      throw ValueError("fuse_conv_bn: var[" + std::to_string(o) +
                       "] + epsilon must be positive");
    }
    const T scale = bn.gamma[oc] / std::sqrt(v + bn.epsilon);
    T* w = out.weight.weight.data() + o * per_out;
    for (std::int64_t i = 0; i < per_out; ++i) w[i] *= scale;
    out.bias[oc] = bn.beta[oc] - bn.mu[oc] * scale;
  }
  return out;
}

template <typename T>
Kernel<T> pad_kernel(const Kernel<T>& weight, int kh, int kw) {
  if (kh < weight.kh || kw < weight.kw) {
    throw ShapeError("pad_kernel: target " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " smaller than kernel " +
                     std::to_string(weight.kh) + "x" +
                     std::to_string(weight.kw));
  }
  if ((kh - weight.kh) % 2 != 0 || (kw - weight.kw) % 2 != 0) {
    throw ValueError("pad_kernel: cannot center a " +
                     std::to_string(weight.kh) + "x" +
                     std::to_string(weight.kw) + " kernel in " +
                     std::to_string(kh) + "x" + std::to_string(kw) +
                     " (odd size difference)");
  }
  const int oh = (kh - weight.kh) / 2;
  const int ow = (kw - weight.kw) / 2;
  Kernel<T> out(weight.out_ch, weight.in_ch, kh, kw);
  for (std::int64_t o = 0; o < weight.out_ch; ++o) {
    for (std::int64_t i = 0; i < weight.in_ch; ++i) {
      for (int u = 0; u < weight.kh; ++u) {
        for (int v = 0; v < weight.kw; ++v) {
          out.at(o, i, u + oh, v + ow) = weight.at(o, i, u, v);
        }
      }
    }
  }
  return out;
}

template <typename T>
Kernel<T> dilate_to_dense(const Kernel<T>& weight, int dh, int dw) {
  if (dh < 1 || dw < 1) {
    throw ValueError("dilate_to_dense: dilation must be >= 1");
  }
  if (dh == 1 && dw == 1) return weight;
  const int kh = 1 + (weight.kh - 1) * dh;
  const int kw = 1 + (weight.kw - 1) * dw;
  Kernel<T> out(weight.out_ch, weight.in_ch, kh, kw);
  for (std::int64_t o = 0; o < weight.out_ch; ++o) {
    for (std::int64_t i = 0; i < weight.in_ch; ++i) {
      for (int u = 0; u < weight.kh; ++u) {
        for (int v = 0; v < weight.kw; ++v) {
          out.at(o, i, u * dh, v * dw) = weight.at(o, i, u, v);
        }
      }
    }
  }
  return out;
}

template <typename T>
Kernel<T> identity_to_conv(std::int64_t channels, int kh, int kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ValueError("identity_to_conv: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " has no center tap");
  }
  Kernel<T> out(channels, channels, kh, kw);
  for (std::int64_t c = 0; c < channels; ++c) {
    out.at(c, c, kh / 2, kw / 2) = T(1);
  }
  return out;
}

template <typename T>
Kernel<T> avgpool_to_conv(std::int64_t channels, int kh, int kw) {
  if (kh < 1 || kw < 1) {
    throw ValueError("avgpool_to_conv: window must be >= 1");
  }
  Kernel<T> out(channels, channels, kh, kw);
  const T inv = T(1) / static_cast<T>(static_cast<std::int64_t>(kh) * kw);
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) out.at(c, c, u, v) = inv;
    }
  }
  return out;
}

template <typename T>
FusedConv<T> fuse_sequential(const FusedConv<T>& first,
                             const FusedConv<T>& second) {
  if (first.weight.kh != 1 || first.weight.kw != 1) {
    throw ValueError("fuse_sequential: leading kernel must be 1x1, got " +
                     std::to_string(first.weight.kh) + "x" +
                     std::to_string(first.weight.kw));
  }
  if (first.weight.out_ch != second.weight.in_ch) {
    throw ShapeError("fuse_sequential: first stage emits " +
                     std::to_string(first.weight.out_ch) +
                     " channels but second takes " +
                     std::to_string(second.weight.in_ch));
  }
  const std::int64_t mid = first.weight.out_ch;
  FusedConv<T> out;
  out.weight = Kernel<T>(second.weight.out_ch, first.weight.in_ch,
                         second.weight.kh, second.weight.kw);
  for (std::int64_t o = 0; o < out.weight.out_ch; ++o) {
    for (std::int64_t i = 0; i < out.weight.in_ch; ++i) {
      for (int u = 0; u < out.weight.kh; ++u) {
        for (int v = 0; v < out.weight.kw; ++v) {
          T acc = T(0);
          for (std::int64_t m = 0; m < mid; ++m) {
            acc += second.weight.at(o, m, u, v) * first.weight.at(m, i, 0, 0);
          }
          out.weight.at(o, i, u, v) = acc;
        }
      }
    }
  }
  out.bias.resize(static_cast<std::size_t>(out.weight.out_ch));
  for (std::int64_t o = 0; o < out.weight.out_ch; ++o) {
    // The first-stage bias is a constant plane per mid channel, so the
    // second conv turns it into sum_d b1_d * (sum of second's taps on d).
    T acc = second.bias.empty() ? T(0)
                                : second.bias[static_cast<std::size_t>(o)];
    for (std::int64_t m = 0; m < mid; ++m) {
      T taps = T(0);
      for (int u = 0; u < second.weight.kh; ++u) {
        for (int v = 0; v < second.weight.kw; ++v) {
          taps += second.weight.at(o, m, u, v);
        }
      }
      acc += first.bias[static_cast<std::size_t>(m)] * taps;
    }
    out.bias[static_cast<std::size_t>(o)] = acc;
  }
  return out;
}

template <typename T>
FusedConv<T> merge_parallel(const std::vector<FusedConv<T>>& branches, int kh,
                            int kw) {
  if (branches.empty()) throw ValueError("merge_parallel: no branches");
  const std::int64_t out_ch = branches[0].weight.out_ch;
  const std::int64_t in_ch = branches[0].weight.in_ch;
  for (std::size_t b = 1; b < branches.size(); ++b) {
    if (branches[b].weight.out_ch != out_ch ||
        branches[b].weight.in_ch != in_ch) {
      throw ShapeError("merge_parallel: branch " + std::to_string(b) +
                       " is " + std::to_string(branches[b].weight.in_ch) +
                       "->" + std::to_string(branches[b].weight.out_ch) +
                       ", expected " + std::to_string(in_ch) + "->" +
                       std::to_string(out_ch));
    }
  }
  FusedConv<T> out;
  out.weight = pad_kernel(branches[0].weight, kh, kw);
  out.bias = branches[0].bias;
  out.bias.resize(static_cast<std::size_t>(out_ch), T(0));
  for (std::size_t b = 1; b < branches.size(); ++b) {
    const Kernel<T> padded = pad_kernel(branches[b].weight, kh, kw);
    for (std::size_t i = 0; i < out.weight.weight.size(); ++i) {
      out.weight.weight[i] += padded.weight[i];
    }
    for (std::int64_t o = 0; o < out_ch; ++o) {
      if (!branches[b].bias.empty()) {
        out.bias[static_cast<std::size_t>(o)] +=
            branches[b].bias[static_cast<std::size_t>(o)];
      }
    }
  }
  return out;
}

template <typename T>
FusedConv<T> reduce_branch(const BranchDesc<T>& branch) {
  struct Visitor {
    FusedConv<T> operator()(const ConvBNDesc<T>& b) const {
      FusedConv<T> f = fuse_conv_bn(b.conv.kernel, b.bn);
      if (b.conv.dh > 1 || b.conv.dw > 1) {
        f.weight = dilate_to_dense(f.weight, b.conv.dh, b.conv.dw);
      }
      return f;
    }
    FusedConv<T> operator()(const SequenceDesc<T>& b) const {
      if (b.stages.size() < 2) {
        throw ValueError("reduce_branch: sequence needs at least 2 stages");
      }
      FusedConv<T> f = fuse_conv_bn(b.stages[0].conv.kernel, b.stages[0].bn);
      for (std::size_t i = 1; i < b.stages.size(); ++i) {
        f = fuse_sequential(
            f, fuse_conv_bn(b.stages[i].conv.kernel, b.stages[i].bn));
      }
      return f;
    }
    FusedConv<T> operator()(const AvgPoolDesc<T>& b) const {
      const std::int64_t ch = b.bn.channels();
      FusedConv<T> pool =
          fuse_conv_bn(avgpool_to_conv<T>(ch, b.kh, b.kw), b.bn);
      if (!b.pre) return pool;
      return fuse_sequential(fuse_conv_bn(b.pre->conv.kernel, b.pre->bn),
                             pool);
    }
    FusedConv<T> operator()(const IdentityDesc<T>& b) const {
      return fuse_conv_bn(identity_to_conv<T>(b.bn.channels(), 1, 1), b.bn);
    }
  };
  return std::visit(Visitor{}, branch);
}

template <typename T>
ConvSpec<T> fuse_block(const RepBlock<T>& block) {
  if (block.branches.empty()) throw ValueError("fuse_block: no branches");
  std::vector<FusedConv<T>> reduced;
  reduced.reserve(block.branches.size());
  int kh = 1, kw = 1;
  for (const auto& b : block.branches) {
    reduced.push_back(reduce_branch(b));
    kh = std::max(kh, reduced.back().weight.kh);
    kw = std::max(kw, reduced.back().weight.kw);
  }
  FusedConv<T> merged = merge_parallel(reduced, kh, kw);

  ConvSpec<T> out;
  out.kernel = std::move(merged.weight);
  out.bias = std::move(merged.bias);
  out.sh = block.sh;
  out.sw = block.sw;
  out.ph = (kh - 1) / 2;
  out.pw = (kw - 1) / 2;
  return out;
}

template <typename T>
std::int64_t count_flops(const ConvSpec<T>& conv, const Shape4& input) {
  const Shape4 out = conv_output_shape(input, conv);
  return 2 * out.n * out.c * out.h * out.w * conv.kernel.in_ch *
         conv.kernel.kh * conv.kernel.kw;
}

namespace {

template <typename T>
std::int64_t conv_bn_flops(const ConvBNDesc<T>& b, const Shape4& input,
                           Shape4* out_shape) {
  const Shape4 out = conv_output_shape(input, b.conv);
  if (out_shape) *out_shape = out;
  return 2 * out.n * out.c * out.h * out.w * b.conv.kernel.in_ch *
             b.conv.kernel.kh * b.conv.kernel.kw +
         out.size();
}

template <typename T>
Shape4 branch_output_shape(const BranchDesc<T>& branch, const Shape4& input) {
  struct Visitor {
    const Shape4& in;

    Shape4 operator()(const ConvBNDesc<T>& b) const {
      return conv_output_shape(in, b.conv);
    }
    Shape4 operator()(const SequenceDesc<T>& b) const {
      Shape4 shape = in;
      for (const auto& stage : b.stages) {
        shape = conv_output_shape(shape, stage.conv);
      }
      return shape;
    }
    Shape4 operator()(const AvgPoolDesc<T>& b) const {
      Shape4 shape = in;
      if (b.pre) shape = conv_output_shape(shape, b.pre->conv);
      shape.h = (shape.h + 2 * b.ph - b.kh) / b.sh + 1;
      shape.w = (shape.w + 2 * b.pw - b.kw) / b.sw + 1;
      return shape;
    }
    Shape4 operator()(const IdentityDesc<T>&) const { return in; }
  };
  return std::visit(Visitor{input}, branch);
}

}  // namespace

template <typename T>
std::int64_t count_flops(const RepBlock<T>& block, const Shape4& input) {
  struct Visitor {
    const Shape4& in;

    std::int64_t operator()(const ConvBNDesc<T>& b) const {
      return conv_bn_flops(b, in, nullptr);
    }
    std::int64_t operator()(const SequenceDesc<T>& b) const {
      std::int64_t total = 0;
      Shape4 shape = in;
      for (const auto& stage : b.stages) {
        Shape4 next;
        total += conv_bn_flops(stage, shape, &next);
        shape = next;
      }
      return total;
    }
    std::int64_t operator()(const AvgPoolDesc<T>& b) const {
      std::int64_t total = 0;
      Shape4 shape = in;
      if (b.pre) {
        Shape4 next;
        total += conv_bn_flops(*b.pre, shape, &next);
        shape = next;
      }
      const std::int64_t hout = (shape.h + 2 * b.ph - b.kh) / b.sh + 1;
      const std::int64_t wout = (shape.w + 2 * b.pw - b.kw) / b.sw + 1;
      total += 2 * shape.n * shape.c * hout * wout * b.kh * b.kw;
      total += shape.n * shape.c * hout * wout;  // BN after pooling
      return total;
    }
    std::int64_t operator()(const IdentityDesc<T>&) const {
      return in.size();  // BN only
    }
  };

  std::int64_t total = 0;
  for (const auto& b : block.branches) total += std::visit(Visitor{input}, b);
  const Shape4 out = branch_output_shape(block.branches[0], input);
  total += static_cast<std::int64_t>(block.branches.size() - 1) * out.size();
  return total;
}

template struct FusedConv<float>;
template struct FusedConv<double>;
template FusedConv<float> fuse_conv_bn(const Kernel<float>&,
                                       const BNParams<float>&);
template FusedConv<double> fuse_conv_bn(const Kernel<double>&,
                                        const BNParams<double>&);
template Kernel<float> pad_kernel(const Kernel<float>&, int, int);
template Kernel<double> pad_kernel(const Kernel<double>&, int, int);
template Kernel<float> dilate_to_dense(const Kernel<float>&, int, int);
template Kernel<double> dilate_to_dense(const Kernel<double>&, int, int);
template Kernel<float> identity_to_conv(std::int64_t, int, int);
template Kernel<double> identity_to_conv(std::int64_t, int, int);
template Kernel<float> avgpool_to_conv(std::int64_t, int, int);
template Kernel<double> avgpool_to_conv(std::int64_t, int, int);
template FusedConv<float> fuse_sequential(const FusedConv<float>&,
                                          const FusedConv<float>&);
template FusedConv<double> fuse_sequential(const FusedConv<double>&,
                                           const FusedConv<double>&);
template FusedConv<float> merge_parallel(const std::vector<FusedConv<float>>&,
                                         int, int);
template FusedConv<double> merge_parallel(
    const std::vector<FusedConv<double>>&, int, int);
template FusedConv<float> reduce_branch(const BranchDesc<float>&);
template FusedConv<double> reduce_branch(const BranchDesc<double>&);
template ConvSpec<float> fuse_block(const RepBlock<float>&);
template ConvSpec<double> fuse_block(const RepBlock<double>&);
template std::int64_t count_flops(const ConvSpec<float>&, const Shape4&);
template std::int64_t count_flops(const ConvSpec<double>&, const Shape4&);
template std::int64_t count_flops(const RepBlock<float>&, const Shape4&);
template std::int64_t count_flops(const RepBlock<double>&, const Shape4&);

}  // namespace repspk
