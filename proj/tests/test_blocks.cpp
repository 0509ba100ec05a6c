#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <variant>
#include <vector>

#include "oracles.hpp"
#include "repspk/blocks.hpp"
#include "repspk/errors.hpp"
#include "repspk/init.hpp"
#include "repspk/reparam.hpp"

using repspk::AvgPoolDesc;
using repspk::BlockVariant;
using repspk::BNParams;
using repspk::ConvBNDesc;
using repspk::IdentityDesc;
using repspk::InitPolicy;
using repspk::Kernel;
using repspk::RepBlock;
using repspk::SequenceDesc;
using repspk::Tensor;
using repspk::ValueError;

namespace {

const std::vector<BlockVariant> kAllVariants = {
    BlockVariant::kRepVgg, BlockVariant::kVarA, BlockVariant::kVarB,
    BlockVariant::kVarC,   BlockVariant::kVarD, BlockVariant::kVarE,
    BlockVariant::kVarF,   BlockVariant::kRsba, BlockVariant::kRsbb};

template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  Tensor<T> t(x.shape.n, x.shape.c, x.shape.w, x.shape.h);
  for (std::int64_t n = 0; n < x.shape.n; ++n) {
    for (std::int64_t c = 0; c < x.shape.c; ++c) {
      for (std::int64_t h = 0; h < x.shape.h; ++h) {
        for (std::int64_t w = 0; w < x.shape.w; ++w) {
          t.at(n, c, w, h) = x.at(n, c, h, w);
        }
      }
    }
  }
  return t;
}

template <typename T>
repspk::ConvSpec<T> transpose_spec(const repspk::ConvSpec<T>& s) {
  repspk::ConvSpec<T> t = s;
  t.kernel = Kernel<T>(s.kernel.out_ch, s.kernel.in_ch, s.kernel.kw,
                       s.kernel.kh);
  for (std::int64_t o = 0; o < s.kernel.out_ch; ++o) {
    for (std::int64_t i = 0; i < s.kernel.in_ch; ++i) {
      for (int u = 0; u < s.kernel.kh; ++u) {
        for (int v = 0; v < s.kernel.kw; ++v) {
          t.kernel.at(o, i, v, u) = s.kernel.at(o, i, u, v);
        }
      }
    }
  }
  std::swap(t.sh, t.sw);
  std::swap(t.ph, t.pw);
  std::swap(t.dh, t.dw);
  return t;
}

// HW-mirror of a block whose branches are all ConvBN or identity.
template <typename T>
RepBlock<T> transpose_block(const RepBlock<T>& b) {
  RepBlock<T> t = b;
  std::swap(t.sh, t.sw);
  for (auto& branch : t.branches) {
    if (auto* cb = std::get_if<ConvBNDesc<T>>(&branch)) {
      cb->conv = transpose_spec(cb->conv);
    }
  }
  return t;
}

}  // namespace

TEST_CASE("variant names round-trip through the parser") {
  for (BlockVariant v : kAllVariants) {
    CHECK(repspk::parse_variant(repspk::variant_name(v)) == v);
  }
  CHECK(repspk::variant_name(BlockVariant::kRsba) == "rsba");
  CHECK(repspk::variant_name(BlockVariant::kVarF) == "var_f");
}

TEST_CASE("parse_variant rejects unknown names and lists the valid ones") {
  CHECK_THROWS_WITH_AS(repspk::parse_variant("resnet"),
                       doctest::Contains("repvgg"), ValueError);
  CHECK_THROWS_WITH_AS(repspk::parse_variant(""),
                       doctest::Contains("rsbb"), ValueError);
}

TEST_CASE("rsba and rsbb are aliases of var_d and var_f") {
  CHECK(repspk::canonical_variant(BlockVariant::kRsba) == BlockVariant::kVarD);
  CHECK(repspk::canonical_variant(BlockVariant::kRsbb) == BlockVariant::kVarF);
  CHECK(repspk::canonical_variant(BlockVariant::kRepVgg) ==
        BlockVariant::kRepVgg);

  auto a = repspk::make_block<double>(BlockVariant::kRsba, 3, 5, 1, 1);
  auto d = repspk::make_block<double>(BlockVariant::kVarD, 3, 5, 1, 1);
  REQUIRE(a.branches.size() == d.branches.size());
  const auto& sa = std::get<SequenceDesc<double>>(a.branches[1]);
  const auto& sd = std::get<SequenceDesc<double>>(d.branches[1]);
  CHECK(sa.stages.size() == sd.stages.size());
}

TEST_CASE("make_block: repvgg geometry") {
  auto same = repspk::make_block<double>(BlockVariant::kRepVgg, 4, 4, 1, 1);
  REQUIRE(same.branches.size() == 3);
  const auto& main = std::get<ConvBNDesc<double>>(same.branches[0]);
  CHECK(main.conv.kernel.kh == 3);
  CHECK(main.conv.kernel.kw == 3);
  CHECK(main.conv.ph == 1);
  CHECK(main.conv.pw == 1);
  CHECK(main.conv.kernel.in_ch == 4);
  CHECK(main.conv.kernel.out_ch == 4);
  const auto& aux = std::get<ConvBNDesc<double>>(same.branches[1]);
  CHECK(aux.conv.kernel.kh == 1);
  CHECK(aux.conv.kernel.kw == 1);
  CHECK(aux.conv.ph == 0);
  CHECK(aux.conv.pw == 0);
  CHECK(std::holds_alternative<IdentityDesc<double>>(same.branches[2]));

  // Channel change or stride removes only the identity branch.
  auto wide = repspk::make_block<double>(BlockVariant::kRepVgg, 4, 8, 1, 1);
  CHECK(wide.branches.size() == 2);
  auto strided = repspk::make_block<double>(BlockVariant::kRepVgg, 4, 4, 2, 2);
  CHECK(strided.branches.size() == 2);
  const auto& smain = std::get<ConvBNDesc<double>>(strided.branches[0]);
  CHECK(smain.conv.sh == 2);
  const auto& saux = std::get<ConvBNDesc<double>>(strided.branches[1]);
  CHECK(saux.conv.sh == 2);
}

TEST_CASE("make_block: asymmetric and dilated aux kernels") {
  auto b = repspk::make_block<double>(BlockVariant::kVarB, 3, 3, 1, 1);
  const auto& kb = std::get<ConvBNDesc<double>>(b.branches[1]).conv;
  CHECK(kb.kernel.kh == 1);
  CHECK(kb.kernel.kw == 3);
  CHECK(kb.ph == 0);
  CHECK(kb.pw == 1);

  auto c = repspk::make_block<double>(BlockVariant::kVarC, 3, 3, 1, 1);
  const auto& kc = std::get<ConvBNDesc<double>>(c.branches[1]).conv;
  CHECK(kc.kernel.kh == 3);
  CHECK(kc.kernel.kw == 1);
  CHECK(kc.ph == 1);
  CHECK(kc.pw == 0);

  auto f = repspk::make_block<double>(BlockVariant::kVarF, 3, 3, 1, 1);
  const auto& kf = std::get<ConvBNDesc<double>>(f.branches[1]).conv;
  CHECK(kf.kernel.kh == 3);
  CHECK(kf.kernel.kw == 3);
  CHECK(kf.dh == 2);
  CHECK(kf.dw == 2);
  CHECK(kf.ph == 2);
  CHECK(kf.pw == 2);

  auto a = repspk::make_block<double>(BlockVariant::kVarA, 3, 3, 1, 1);
  const auto& ka = std::get<ConvBNDesc<double>>(a.branches[1]).conv;
  CHECK(ka.kernel.kh == 3);
  CHECK(ka.kernel.kw == 3);
  CHECK(ka.dh == 1);
}

TEST_CASE("make_block: sequence and pooling branches") {
  auto d = repspk::make_block<double>(BlockVariant::kVarD, 3, 6, 2, 2);
  REQUIRE(d.branches.size() == 2);
  const auto& seq = std::get<SequenceDesc<double>>(d.branches[1]);
  REQUIRE(seq.stages.size() == 2);
  CHECK(seq.stages[0].conv.kernel.kh == 1);
  CHECK(seq.stages[0].conv.kernel.kw == 1);
  CHECK(seq.stages[0].conv.kernel.in_ch == 3);
  CHECK(seq.stages[0].conv.kernel.out_ch == 6);
  CHECK(seq.stages[0].conv.sh == 1);  // stride lives on the kxk stage
  CHECK(seq.stages[1].conv.kernel.kh == 3);
  CHECK(seq.stages[1].conv.kernel.in_ch == 6);
  CHECK(seq.stages[1].conv.kernel.out_ch == 6);
  CHECK(seq.stages[1].conv.sh == 2);
  CHECK(seq.stages[1].conv.ph == 1);

  auto e = repspk::make_block<double>(BlockVariant::kVarE, 3, 6, 2, 2);
  REQUIRE(e.branches.size() == 2);
  const auto& pool = std::get<AvgPoolDesc<double>>(e.branches[1]);
  REQUIRE(pool.pre.has_value());
  CHECK(pool.pre->conv.kernel.kh == 1);
  CHECK(pool.pre->conv.kernel.out_ch == 6);
  CHECK(pool.kh == 3);
  CHECK(pool.kw == 3);
  CHECK(pool.sh == 2);
  CHECK(pool.ph == 1);
  CHECK(pool.bn.channels() == 6);
}

TEST_CASE("make_block validates its arguments") {
  CHECK_THROWS_AS(repspk::make_block<double>(BlockVariant::kRepVgg, 0, 4, 1, 1),
                  ValueError);
  CHECK_THROWS_AS(repspk::make_block<double>(BlockVariant::kRepVgg, 4, 4, 0, 1),
                  ValueError);
}

TEST_CASE("all branches of every variant agree on output geometry") {
  oracles::Rng rng(31);
  for (BlockVariant v : kAllVariants) {
    for (int stride : {1, 2}) {
      for (auto [in_ch, out_ch] : {std::pair<std::int64_t, std::int64_t>{3, 3},
                                   std::pair<std::int64_t, std::int64_t>{3, 6}}) {
        for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{8, 9},
                            std::pair<std::int64_t, std::int64_t>{9, 8},
                            std::pair<std::int64_t, std::int64_t>{7, 7}}) {
          InitPolicy init(7);
          auto block = repspk::make_block<double>(v, in_ch, out_ch, stride,
                                                  stride, &init);
          auto x = oracles::random_tensor<double>(rng, 2, in_ch, h, w);
          auto y0 = repspk::branch_forward(block.branches[0], x);
          CHECK(y0.shape.c == out_ch);
          for (std::size_t b = 1; b < block.branches.size(); ++b) {
            auto yb = repspk::branch_forward(block.branches[b], x);
            CHECK(yb.shape == y0.shape);
          }
          auto t = repspk::forward_train(block, x);
          CHECK(t.shape == y0.shape);
        }
      }
    }
  }
}

TEST_CASE("forward_train: identity-kernel single branch reduces to ReLU") {
  oracles::Rng rng(37);
  RepBlock<double> block;
  block.in_channels = block.out_channels = 3;
  ConvBNDesc<double> cb;
  cb.conv.kernel = repspk::identity_to_conv<double>(3, 3, 3);
  cb.conv.ph = cb.conv.pw = 1;
  cb.bn = BNParams<double>::identity(3, 0.0);
  block.branches.push_back(cb);

  auto x = oracles::random_tensor<double>(rng, 2, 3, 5, 6);
  auto y = repspk::forward_train(block, x);
  auto want = repspk::relu(x);
  CHECK(y.data == want.data);
}

TEST_CASE("forward_train: zero convs plus identity shortcut reduce to ReLU") {
  oracles::Rng rng(41);
  auto block = repspk::make_block<double>(BlockVariant::kRepVgg, 3, 3, 1, 1);
  // Weights start zero without an init policy; pin every BN to the exact
  // identity so the conv branches contribute exactly zero.
  std::get<ConvBNDesc<double>>(block.branches[0]).bn =
      BNParams<double>::identity(3, 0.0);
  std::get<ConvBNDesc<double>>(block.branches[1]).bn =
      BNParams<double>::identity(3, 0.0);
  std::get<IdentityDesc<double>>(block.branches[2]).bn =
      BNParams<double>::identity(3, 0.0);

  auto x = oracles::random_tensor<double>(rng, 1, 3, 4, 7);
  auto y = repspk::forward_train(block, x);
  auto want = repspk::relu(x);
  CHECK(y.data == want.data);
}

TEST_CASE("var_b and var_c are HW mirrors of each other") {
  oracles::Rng rng(43);

  SUBCASE("integer-valued weights give bit-equal mirrored outputs") {
    InitPolicy init(13);
    auto b = repspk::make_block<double>(BlockVariant::kVarB, 2, 2, 1, 1, &init);
    for (auto& branch : b.branches) {
      if (auto* cb = std::get_if<ConvBNDesc<double>>(&branch)) {
        for (auto& w : cb->conv.kernel.weight) {
          w = static_cast<double>(rng.integer(-3, 3));
        }
        cb->bn = BNParams<double>::identity(2, 0.0);
      }
    }
    auto c = transpose_block(b);

    Tensor<double> x(1, 2, 4, 6);
    for (auto& v : x.data) v = static_cast<double>(rng.integer(-4, 4));
    auto xt = transpose_hw(x);

    auto yb = repspk::forward_train(b, x);
    auto yc = repspk::forward_train(c, xt);
    CHECK(transpose_hw(yc).data == yb.data);
  }

  SUBCASE("random weights agree within 1e-12") {
    InitPolicy init(17);
    auto b = repspk::make_block<double>(BlockVariant::kVarB, 3, 3, 1, 1, &init);
    oracles::randomize_block(rng, b);
    auto c = transpose_block(b);

    auto x = oracles::random_tensor<double>(rng, 2, 3, 5, 7);
    auto yb = repspk::forward_train(b, x);
    auto yc = repspk::forward_train(c, transpose_hw(x));
    CHECK(repspk::rel_linf(yb.data, transpose_hw(yc).data) <= 1e-12);
  }
}

TEST_CASE("bn_at_zero equals batchnorm applied to a zero tensor") {
  oracles::Rng rng(47);
  for (int rep = 0; rep < 5; ++rep) {
    const auto c = rng.integer(1, 6);
    auto bn = oracles::random_bn<double>(rng, c);
    auto pad = repspk::bn_at_zero(bn);
    Tensor<double> zero(1, c, 1, 1);
    auto y = repspk::batchnorm_forward(zero, bn);
    REQUIRE(pad.size() == static_cast<std::size_t>(c));
    for (std::int64_t i = 0; i < c; ++i) {
      CHECK(pad[static_cast<std::size_t>(i)] == y.at(0, i, 0, 0));
    }
  }
}

TEST_CASE("sequence stages pad with the previous stage's bn_at_zero") {
  // A sequence forward must differ from naive zero padding whenever the
  // first stage's BN shifts zero; this is what makes later fusion exact.
  oracles::Rng rng(53);
  InitPolicy init(11);
  auto block = repspk::make_block<double>(BlockVariant::kVarD, 2, 3, 1, 1,
                                          &init);
  auto& seq = std::get<SequenceDesc<double>>(block.branches[1]);
  oracles::randomize_conv_bn(rng, seq.stages[0]);
  oracles::randomize_conv_bn(rng, seq.stages[1]);

  auto x = oracles::random_tensor<double>(rng, 1, 2, 5, 5);
  auto got = repspk::branch_forward(block.branches[1], x);

  // Reproduce by hand with explicit pad values.
  auto mid = repspk::batchnorm_forward(repspk::conv2d(x, seq.stages[0].conv),
                                       seq.stages[0].bn);
  auto spec = seq.stages[1].conv;
  spec.pad_value = repspk::bn_at_zero(seq.stages[0].bn);
  auto want = repspk::batchnorm_forward(repspk::conv2d(mid, spec),
                                        seq.stages[1].bn);
  CHECK(got.data == want.data);

  // Naive zero padding gives a different border.
  spec.pad_value.clear();
  auto naive = repspk::batchnorm_forward(repspk::conv2d(mid, spec),
                                         seq.stages[1].bn);
  CHECK(naive.data != want.data);
}

TEST_CASE("forward_train rejects mismatched input channels") {
  InitPolicy init(3);
  auto block = repspk::make_block<double>(BlockVariant::kRepVgg, 3, 3, 1, 1,
                                          &init);
  Tensor<double> x(1, 4, 5, 5);
  CHECK_THROWS_WITH_AS(repspk::forward_train(block, x),
                       doctest::Contains("channel"), repspk::ShapeError);
}

TEST_CASE("forward_inference applies conv then ReLU") {
  oracles::Rng rng(59);
  auto x = oracles::random_tensor<double>(rng, 1, 2, 4, 4);
  repspk::ConvSpec<double> s;
  s.kernel = oracles::random_kernel<double>(rng, 2, 2, 3, 3);
  s.ph = s.pw = 1;
  s.bias = {0.25, -0.25};
  auto got = repspk::forward_inference(s, x);
  auto want = repspk::relu(repspk::conv2d(x, s));
  CHECK(got.data == want.data);
}
