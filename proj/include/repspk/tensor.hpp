#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repspk/errors.hpp"

namespace repspk {

struct Shape4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;  // frequency bins
  std::int64_t w = 0;  // time frames

  std::int64_t size() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense 4-D array in row-major [N][C][H][W] order.
template <typename T>
struct Tensor {
  Shape4 shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : shape{n, c, h, w},
        data(static_cast<std::size_t>(shape.size()), T(0)) {}

  static Tensor full(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w, T value) {
    Tensor t(n, c, h, w);
    for (auto& x : t.data) x = value;
    return t;
  }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    return ((n * shape.c + c) * shape.h + h) * shape.w + w;
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(index(n, c, h, w))];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h,
              std::int64_t w) const {
    return data[static_cast<std::size_t>(index(n, c, h, w))];
  }

  bool all_finite() const;
};

// Convolution weights, [out_ch][in_ch][kh][kw] row-major.
template <typename T>
struct Kernel {
  std::int64_t out_ch = 0;
  std::int64_t in_ch = 0;
  int kh = 0;
  int kw = 0;
  std::vector<T> weight;

  Kernel() = default;
  Kernel(std::int64_t out, std::int64_t in, int kh_, int kw_)
      : out_ch(out), in_ch(in), kh(kh_), kw(kw_),
        weight(static_cast<std::size_t>(out * in * kh * kw), T(0)) {}

  std::int64_t size() const {
    return out_ch * in_ch * static_cast<std::int64_t>(kh) * kw;
  }
  std::int64_t index(std::int64_t o, std::int64_t i, int u, int v) const {
    return ((o * in_ch + i) * kh + u) * kw + v;
  }
  T& at(std::int64_t o, std::int64_t i, int u, int v) {
    return weight[static_cast<std::size_t>(index(o, i, u, v))];
  }
  const T& at(std::int64_t o, std::int64_t i, int u, int v) const {
    return weight[static_cast<std::size_t>(index(o, i, u, v))];
  }
};

template <typename T>
struct BNParams {
  std::vector<T> gamma, beta, mu, var;
  T epsilon = static_cast<T>(1e-5);

  std::int64_t channels() const {
    return static_cast<std::int64_t>(gamma.size());
  }

  static BNParams identity(std::int64_t channels,
                           T epsilon = static_cast<T>(1e-5)) {
    BNParams bn;
    bn.gamma.assign(static_cast<std::size_t>(channels), T(1));
    bn.beta.assign(static_cast<std::size_t>(channels), T(0));
    bn.mu.assign(static_cast<std::size_t>(channels), T(0));
    bn.var.assign(static_cast<std::size_t>(channels), T(1));
    bn.epsilon = epsilon;
    return bn;
  }
};

// Hyperparameters plus weights of one convolution. Covers both training-state
// branch convs and fused inference-state convs.
template <typename T>
struct ConvSpec {
  Kernel<T> kernel;
  int sh = 1, sw = 1;  // stride
  int ph = 0, pw = 0;  // padding
  int dh = 1, dw = 1;  // dilation
  // Constant used to fill the padding region, one value per input channel.
  // Empty means all-zero padding.
  std::vector<T> pad_value;
  // Per-output-channel bias; empty means no bias.
  std::vector<T> bias;

  std::int64_t in_channels() const { return kernel.in_ch; }
  std::int64_t out_channels() const { return kernel.out_ch; }
};

// Output shape of conv2d(input, spec); validates the geometry.
template <typename T>
Shape4 conv_output_shape(const Shape4& in, const ConvSpec<T>& spec);

// Direct 2-D cross-correlation with stride, constant-value padding and
// dilation. Per output element the accumulation order is fixed:
// in_channel innermost, then kh, then kw. Bias, when present, is added last.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec<T>& spec);

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const BNParams<T>& bn);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Mean over each kh x kw window. Padded positions are filled with pad_value
// (zeros when empty) and always count toward the kh*kw divisor, which makes
// this exactly the fixed-kernel convolution of avgpool_to_conv.
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& input, int kh, int kw, int sh, int sw,
                    int ph, int pw, const std::vector<T>& pad_value = {});

// Elementwise sum in list order.
template <typename T>
Tensor<T> add(const std::vector<Tensor<T>>& inputs);

// max |ref - got| / max |ref|, in double; falls back to the absolute error
// when ref is identically zero.
template <typename T>
double rel_linf(const std::vector<T>& ref, const std::vector<T>& got);

}  // namespace repspk
