#include "repspk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace repspk {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "[" << n << ", " << c << ", " << h << ", " << w << "]";
  return os.str();
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& x : data) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

namespace {

template <typename T>
void validate_conv(const Shape4& in, const ConvSpec<T>& spec) {
  const Kernel<T>& k = spec.kernel;
  if (k.kh < 1 || k.kw < 1 || spec.sh < 1 || spec.sw < 1 || spec.dh < 1 ||
      spec.dw < 1 || spec.ph < 0 || spec.pw < 0) {
    throw ShapeError("conv2d: kernel/stride/dilation must be >= 1 and padding >= 0");
  }
  if (static_cast<std::int64_t>(k.weight.size()) != k.size()) {
    throw ShapeError("conv2d: weight buffer holds " +
                     std::to_string(k.weight.size()) + " values, expected " +
                     std::to_string(k.size()));
  }
  if (in.c != k.in_ch) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) +
                     " channels but kernel expects " + std::to_string(k.in_ch) +
                     " (channel axis)");
  }
  if (!spec.pad_value.empty() &&
      static_cast<std::int64_t>(spec.pad_value.size()) != k.in_ch) {
    throw ShapeError("conv2d: pad_value has " +
                     std::to_string(spec.pad_value.size()) +
                     " entries, expected one per input channel (" +
                     std::to_string(k.in_ch) + ")");
  }
  if (!spec.bias.empty() &&
      static_cast<std::int64_t>(spec.bias.size()) != k.out_ch) {
    throw ShapeError("conv2d: bias has " + std::to_string(spec.bias.size()) +
                     " entries, expected one per output channel (" +
                     std::to_string(k.out_ch) + ")");
  }
}

}  // namespace

template <typename T>
Shape4 conv_output_shape(const Shape4& in, const ConvSpec<T>& spec) {
  validate_conv(in, spec);
  const std::int64_t eff_kh = 1 + (spec.kernel.kh - 1) * spec.dh;
  const std::int64_t eff_kw = 1 + (spec.kernel.kw - 1) * spec.dw;
  const std::int64_t hp = in.h + 2 * spec.ph;
  const std::int64_t wp = in.w + 2 * spec.pw;
  if (eff_kh > hp) {
    throw ShapeError("conv2d: effective kernel height " +
                     std::to_string(eff_kh) + " exceeds padded input height " +
                     std::to_string(hp));
  }
  if (eff_kw > wp) {
    throw ShapeError("conv2d: effective kernel width " + std::to_string(eff_kw) +
                     " exceeds padded input width " + std::to_string(wp));
  }
  const std::int64_t hout = (hp - eff_kh) / spec.sh + 1;
  const std::int64_t wout = (wp - eff_kw) / spec.sw + 1;
  return Shape4{in.n, spec.kernel.out_ch, hout, wout};
}

namespace {

// Fill one sample's padded planes: [C][Hp][Wp], constant pad per channel.
template <typename T>
void fill_padded(const Tensor<T>& in, std::int64_t n, int ph, int pw,
                 const std::vector<T>& pad_value, std::vector<T>& buf) {
  const std::int64_t c_n = in.shape.c, h_n = in.shape.h, w_n = in.shape.w;
  const std::int64_t hp = h_n + 2 * ph, wp = w_n + 2 * pw;
  for (std::int64_t c = 0; c < c_n; ++c) {
    const T fill = pad_value.empty() ? T(0) : pad_value[static_cast<std::size_t>(c)];
    T* plane = buf.data() + c * hp * wp;
    std::fill(plane, plane + hp * wp, fill);
    for (std::int64_t h = 0; h < h_n; ++h) {
      const T* src = in.data.data() + in.index(n, c, h, 0);
      std::copy(src, src + w_n, plane + (h + ph) * wp + pw);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec<T>& spec) {
  const Shape4 out_shape = conv_output_shape(input.shape, spec);
  const Kernel<T>& k = spec.kernel;
  const std::int64_t hp = input.shape.h + 2 * spec.ph;
  const std::int64_t wp = input.shape.w + 2 * spec.pw;

  Tensor<T> out(out_shape.n, out_shape.c, out_shape.h, out_shape.w);
  std::vector<T> padded(static_cast<std::size_t>(k.in_ch * hp * wp));
  std::vector<T> acc(static_cast<std::size_t>(out_shape.w));

  for (std::int64_t n = 0; n < input.shape.n; ++n) {
    fill_padded(input, n, spec.ph, spec.pw, spec.pad_value, padded);
    for (std::int64_t oc = 0; oc < k.out_ch; ++oc) {
      for (std::int64_t oh = 0; oh < out_shape.h; ++oh) {
        std::fill(acc.begin(), acc.end(), T(0));
        // Whole output rows accumulate together; each output element still
        // receives its terms in the fixed (kw, kh, in_channel) nesting with
        // in_channel innermost, so results are bit-identical to the
        // per-element loop.
        for (int v = 0; v < k.kw; ++v) {
          for (int u = 0; u < k.kh; ++u) {
            for (std::int64_t ic = 0; ic < k.in_ch; ++ic) {
              const T w = k.at(oc, ic, u, v);
              const T* row = padded.data() +
                             (ic * hp + oh * spec.sh + static_cast<std::int64_t>(u) * spec.dh) * wp +
                             static_cast<std::int64_t>(v) * spec.dw;
              for (std::int64_t ow = 0; ow < out_shape.w; ++ow) {
                acc[static_cast<std::size_t>(ow)] += w * row[ow * spec.sw];
              }
            }
          }
        }
        T* dst = out.data.data() + out.index(n, oc, oh, 0);
        if (spec.bias.empty()) {
          std::copy(acc.begin(), acc.end(), dst);
        } else {
          const T b = spec.bias[static_cast<std::size_t>(oc)];
          for (std::int64_t ow = 0; ow < out_shape.w; ++ow) {
            dst[ow] = acc[static_cast<std::size_t>(ow)] + b;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const BNParams<T>& bn) {
  const std::int64_t c_n = input.shape.c;
  if (bn.channels() != c_n ||
      bn.beta.size() != bn.gamma.size() || bn.mu.size() != bn.gamma.size() ||
      bn.var.size() != bn.gamma.size()) {
    throw ShapeError("batchnorm_forward: input has " + std::to_string(c_n) +
                     " channels but parameters carry " +
                     std::to_string(bn.channels()) + " (channel axis)");
  }
  std::vector<T> sigma(static_cast<std::size_t>(c_n));
  for (std::int64_t c = 0; c < c_n; ++c) {
    const T v = bn.var[static_cast<std::size_t>(c)];
    if (!(v >= T(0)) || !(v + bn.epsilon > T(0))) {
      throw ValueError("batchnorm_forward: var[" + std::to_string(c) +
                       "] + epsilon must be positive");
    }
    sigma[static_cast<std::size_t>(c)] = std::sqrt(v + bn.epsilon);
  }

  Tensor<T> out(input.shape.n, input.shape.c, input.shape.h, input.shape.w);
  const std::int64_t plane = input.shape.h * input.shape.w;
  for (std::int64_t n = 0; n < input.shape.n; ++n) {
    for (std::int64_t c = 0; c < c_n; ++c) {
      const T g = bn.gamma[static_cast<std::size_t>(c)];
      const T b = bn.beta[static_cast<std::size_t>(c)];
      const T m = bn.mu[static_cast<std::size_t>(c)];
      const T s = sigma[static_cast<std::size_t>(c)];
      const T* src = input.data.data() + input.index(n, c, 0, 0);
      T* dst = out.data.data() + out.index(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[i] = g * (src[i] - m) / s + b;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& x : out.data) x = std::max(T(0), x);
  return out;
}

template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& input, int kh, int kw, int sh, int sw,
                    int ph, int pw, const std::vector<T>& pad_value) {
  if (kh < 1 || kw < 1 || sh < 1 || sw < 1 || ph < 0 || pw < 0) {
    throw ShapeError("avgpool2d: window/stride must be >= 1 and padding >= 0");
  }
  if (!pad_value.empty() &&
      static_cast<std::int64_t>(pad_value.size()) != input.shape.c) {
    throw ShapeError("avgpool2d: pad_value has " +
                     std::to_string(pad_value.size()) +
                     " entries, expected one per channel (" +
                     std::to_string(input.shape.c) + ")");
  }
  const std::int64_t hp = input.shape.h + 2 * ph;
  const std::int64_t wp = input.shape.w + 2 * pw;
  if (kh > hp || kw > wp) {
    throw ShapeError("avgpool2d: window " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " exceeds padded input extent " +
                     std::to_string(hp) + "x" + std::to_string(wp));
  }
  const std::int64_t hout = (hp - kh) / sh + 1;
  const std::int64_t wout = (wp - kw) / sw + 1;
  // Multiply-per-tap instead of divide-at-end so the result matches the
  // avgpool_to_conv kernel bit for bit.
  const T inv = T(1) / static_cast<T>(static_cast<std::int64_t>(kh) * kw);

  Tensor<T> out(input.shape.n, input.shape.c, hout, wout);
  std::vector<T> padded(static_cast<std::size_t>(input.shape.c * hp * wp));
  for (std::int64_t n = 0; n < input.shape.n; ++n) {
    fill_padded(input, n, ph, pw, pad_value, padded);
    for (std::int64_t c = 0; c < input.shape.c; ++c) {
      const T* plane = padded.data() + c * hp * wp;
      for (std::int64_t oh = 0; oh < hout; ++oh) {
        for (std::int64_t ow = 0; ow < wout; ++ow) {
          T acc = T(0);
          for (int v = 0; v < kw; ++v) {
            for (int u = 0; u < kh; ++u) {
              acc += inv * plane[(oh * sh + u) * wp + ow * sw + v];
            }
          }
          out.at(n, c, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ValueError("add: empty input list");
  const Shape4& shape = inputs[0].shape;
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i].shape != shape) {
      throw ShapeError("add: input " + std::to_string(i) + " has shape " +
                       inputs[i].shape.str() + ", expected " + shape.str());
    }
  }
  Tensor<T> out = inputs[0];
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    const T* src = inputs[i].data.data();
    T* dst = out.data.data();
    const std::size_t n = out.data.size();
    for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
  }
  return out;
}

template <typename T>
double rel_linf(const std::vector<T>& ref, const std::vector<T>& got) {
  if (ref.size() != got.size()) {
    throw ShapeError("rel_linf: size mismatch " + std::to_string(ref.size()) +
                     " vs " + std::to_string(got.size()));
  }
  double max_diff = 0.0, max_ref = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(ref[i]) -
                                           static_cast<double>(got[i])));
    max_ref = std::max(max_ref, std::abs(static_cast<double>(ref[i])));
  }
  if (max_ref == 0.0) return max_diff;
  return max_diff / max_ref;
}

template struct Tensor<float>;
template struct Tensor<double>;

template Shape4 conv_output_shape(const Shape4&, const ConvSpec<float>&);
template Shape4 conv_output_shape(const Shape4&, const ConvSpec<double>&);
template Tensor<float> conv2d(const Tensor<float>&, const ConvSpec<float>&);
template Tensor<double> conv2d(const Tensor<double>&, const ConvSpec<double>&);
template Tensor<float> batchnorm_forward(const Tensor<float>&, const BNParams<float>&);
template Tensor<double> batchnorm_forward(const Tensor<double>&, const BNParams<double>&);
template Tensor<float> relu(const Tensor<float>&);
template Tensor<double> relu(const Tensor<double>&);
template Tensor<float> avgpool2d(const Tensor<float>&, int, int, int, int, int, int,
                                 const std::vector<float>&);
template Tensor<double> avgpool2d(const Tensor<double>&, int, int, int, int, int, int,
                                  const std::vector<double>&);
template Tensor<float> add(const std::vector<Tensor<float>>&);
template Tensor<double> add(const std::vector<Tensor<double>>&);
template double rel_linf(const std::vector<float>&, const std::vector<float>&);
template double rel_linf(const std::vector<double>&, const std::vector<double>&);

}  // namespace repspk
