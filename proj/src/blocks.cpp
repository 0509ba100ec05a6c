#include "repspk/blocks.hpp"

#include <cmath>

namespace repspk {

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "repvgg", "var_a", "var_b", "var_c", "var_d",
      "var_e",  "var_f", "rsba",  "rsbb"};
  return names;
}

std::string variant_name(BlockVariant v) {
  return variant_names()[static_cast<std::size_t>(v)];
}

BlockVariant parse_variant(const std::string& name) {
  const auto& names = variant_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<BlockVariant>(i);
  }
  std::string valid;
  for (const auto& n : names) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw ValueError("unknown block variant '" + name + "' (valid: " + valid + ")");
}

BlockVariant canonical_variant(BlockVariant v) {
  if (v == BlockVariant::kRsba) return BlockVariant::kVarD;
  if (v == BlockVariant::kRsbb) return BlockVariant::kVarF;
  return v;
}

template <typename T>
std::vector<T> bn_at_zero(const BNParams<T>& bn) {
  std::vector<T> out(static_cast<std::size_t>(bn.channels()));
  for (std::size_t c = 0; c < out.size(); ++c) {
    const T sigma = std::sqrt(bn.var[c] + bn.epsilon);
    out[c] = bn.beta[c] - bn.mu[c] * bn.gamma[c] / sigma;
  }
  return out;
}

namespace {

template <typename T>
ConvBNDesc<T> make_conv_bn(std::int64_t out_ch, std::int64_t in_ch, int kh,
                           int kw, int sh, int sw, int ph, int pw, int dh,
                           int dw, InitPolicy* init) {
  ConvBNDesc<T> b;
  b.conv.kernel = Kernel<T>(out_ch, in_ch, kh, kw);
  b.conv.sh = sh;
  b.conv.sw = sw;
  b.conv.ph = ph;
  b.conv.pw = pw;
  b.conv.dh = dh;
  b.conv.dw = dw;
  if (init) init->fill(b.conv.kernel.weight, in_ch * kh * kw);
  b.bn = BNParams<T>::identity(out_ch);
  return b;
}

}  // namespace

template <typename T>
RepBlock<T> make_block(BlockVariant variant, std::int64_t in_ch,
                       std::int64_t out_ch, int sh, int sw, InitPolicy* init) {
  if (in_ch < 1 || out_ch < 1) {
    throw ValueError("make_block: channel counts must be >= 1, got " +
                     std::to_string(in_ch) + "->" + std::to_string(out_ch));
  }
  if (sh < 1 || sw < 1) {
    throw ValueError("make_block: stride must be >= 1");
  }
  RepBlock<T> block;
  block.in_channels = in_ch;
  block.out_channels = out_ch;
  block.sh = sh;
  block.sw = sw;

  block.branches.push_back(
      make_conv_bn<T>(out_ch, in_ch, 3, 3, sh, sw, 1, 1, 1, 1, init));

  switch (canonical_variant(variant)) {
    case BlockVariant::kRepVgg:
      block.branches.push_back(
          make_conv_bn<T>(out_ch, in_ch, 1, 1, sh, sw, 0, 0, 1, 1, init));
      break;
    case BlockVariant::kVarA:
      block.branches.push_back(
          make_conv_bn<T>(out_ch, in_ch, 3, 3, sh, sw, 1, 1, 1, 1, init));
      break;
    case BlockVariant::kVarB:
      block.branches.push_back(
          make_conv_bn<T>(out_ch, in_ch, 1, 3, sh, sw, 0, 1, 1, 1, init));
      break;
    case BlockVariant::kVarC:
      block.branches.push_back(
          make_conv_bn<T>(out_ch, in_ch, 3, 1, sh, sw, 1, 0, 1, 1, init));
      break;
    case BlockVariant::kVarD: {
      SequenceDesc<T> seq;
      seq.stages.push_back(
          make_conv_bn<T>(out_ch, in_ch, 1, 1, 1, 1, 0, 0, 1, 1, init));
      seq.stages.push_back(
          make_conv_bn<T>(out_ch, out_ch, 3, 3, sh, sw, 1, 1, 1, 1, init));
      block.branches.push_back(std::move(seq));
      break;
    }
    case BlockVariant::kVarE: {
      AvgPoolDesc<T> pool;
      pool.pre = make_conv_bn<T>(out_ch, in_ch, 1, 1, 1, 1, 0, 0, 1, 1, init);
      pool.kh = 3;
      pool.kw = 3;
      pool.sh = sh;
      pool.sw = sw;
      pool.ph = 1;
      pool.pw = 1;
      pool.bn = BNParams<T>::identity(out_ch);
      block.branches.push_back(std::move(pool));
      break;
    }
    case BlockVariant::kVarF:
      block.branches.push_back(
          make_conv_bn<T>(out_ch, in_ch, 3, 3, sh, sw, 2, 2, 2, 2, init));
      break;
    default:
      throw ValueError("make_block: unhandled variant");
  }

  if (in_ch == out_ch && sh == 1 && sw == 1) {
    block.branches.push_back(IdentityDesc<T>{BNParams<T>::identity(out_ch)});
  }
  return block;
}

template <typename T>
Tensor<T> branch_forward(const BranchDesc<T>& branch, const Tensor<T>& input) {
  struct Visitor {
    const Tensor<T>& x;

    Tensor<T> operator()(const ConvBNDesc<T>& b) const {
      return batchnorm_forward(conv2d(x, b.conv), b.bn);
    }
    Tensor<T> operator()(const SequenceDesc<T>& b) const {
      if (b.stages.size() < 2) {
        throw ValueError("branch_forward: sequence needs at least 2 stages");
      }
      Tensor<T> y = batchnorm_forward(conv2d(x, b.stages[0].conv),
                                      b.stages[0].bn);
      for (std::size_t i = 1; i < b.stages.size(); ++i) {
        ConvSpec<T> spec = b.stages[i].conv;
        spec.pad_value = bn_at_zero(b.stages[i - 1].bn);
        y = batchnorm_forward(conv2d(y, spec), b.stages[i].bn);
      }
      return y;
    }
    Tensor<T> operator()(const AvgPoolDesc<T>& b) const {
      if (b.pre) {
        Tensor<T> y = batchnorm_forward(conv2d(x, b.pre->conv), b.pre->bn);
        y = avgpool2d(y, b.kh, b.kw, b.sh, b.sw, b.ph, b.pw,
                      bn_at_zero(b.pre->bn));
        return batchnorm_forward(y, b.bn);
      }
      Tensor<T> y = avgpool2d(x, b.kh, b.kw, b.sh, b.sw, b.ph, b.pw);
      return batchnorm_forward(y, b.bn);
    }
    Tensor<T> operator()(const IdentityDesc<T>& b) const {
      return batchnorm_forward(x, b.bn);
    }
  };
  return std::visit(Visitor{input}, branch);
}

template <typename T>
Tensor<T> forward_train(const RepBlock<T>& block, const Tensor<T>& input) {
  if (input.shape.c != block.in_channels) {
    throw ShapeError("forward_train: input has " +
                     std::to_string(input.shape.c) + " channels, block takes " +
                     std::to_string(block.in_channels));
  }
  if (block.branches.empty()) {
    throw ValueError("forward_train: block has no branches");
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(block.branches.size());
  for (const auto& b : block.branches) outs.push_back(branch_forward(b, input));
  return relu(add(outs));
}

template <typename T>
Tensor<T> forward_inference(const ConvSpec<T>& conv, const Tensor<T>& input) {
  return relu(conv2d(input, conv));
}

template std::vector<float> bn_at_zero(const BNParams<float>&);
template std::vector<double> bn_at_zero(const BNParams<double>&);
template RepBlock<float> make_block(BlockVariant, std::int64_t, std::int64_t,
                                    int, int, InitPolicy*);
template RepBlock<double> make_block(BlockVariant, std::int64_t, std::int64_t,
                                     int, int, InitPolicy*);
template Tensor<float> branch_forward(const BranchDesc<float>&,
                                      const Tensor<float>&);
template Tensor<double> branch_forward(const BranchDesc<double>&,
                                       const Tensor<double>&);
template Tensor<float> forward_train(const RepBlock<float>&,
                                     const Tensor<float>&);
template Tensor<double> forward_train(const RepBlock<double>&,
                                      const Tensor<double>&);
template Tensor<float> forward_inference(const ConvSpec<float>&,
                                         const Tensor<float>&);
template Tensor<double> forward_inference(const ConvSpec<double>&,
                                          const Tensor<double>&);

}  // namespace repspk
