#pragma once

// Independent reference implementations the test suite checks the library
// against. Everything here is written straight from the operation contracts
// and kept deliberately naive: direct loops, extended precision where it
// helps, no sharing of code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "repspk/blocks.hpp"
#include "repspk/metrics.hpp"
#include "repspk/tensor.hpp"

namespace oracles {

// Deterministic test randomness, decoupled from the library's InitPolicy.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    const double u =
        static_cast<double>(engine_() >> 11) * 0x1.0p-53;  // [0, 1)
    return lo + (hi - lo) * u;
  }

  std::int64_t integer(std::int64_t lo, std::int64_t hi) {  // inclusive
    return lo + static_cast<std::int64_t>(
                    engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  bool flip() { return (engine_() & 1) != 0; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
void fill_uniform(Rng& rng, std::vector<T>& dst, double lo, double hi) {
  for (auto& x : dst) x = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
repspk::Tensor<T> random_tensor(Rng& rng, std::int64_t n, std::int64_t c,
                                std::int64_t h, std::int64_t w,
                                double lo = -2.0, double hi = 2.0) {
  repspk::Tensor<T> t(n, c, h, w);
  fill_uniform(rng, t.data, lo, hi);
  return t;
}

template <typename T>
repspk::Kernel<T> random_kernel(Rng& rng, std::int64_t out_ch,
                                std::int64_t in_ch, int kh, int kw,
                                double lo = -1.0, double hi = 1.0) {
  repspk::Kernel<T> k(out_ch, in_ch, kh, kw);
  fill_uniform(rng, k.weight, lo, hi);
  return k;
}

// Realistic BN statistics: scale of either sign bounded away from zero,
// strictly positive variance, epsilon drawn from common magnitudes.
template <typename T>
repspk::BNParams<T> random_bn(Rng& rng, std::int64_t channels) {
  repspk::BNParams<T> bn;
  const auto n = static_cast<std::size_t>(channels);
  bn.gamma.resize(n);
  bn.beta.resize(n);
  bn.mu.resize(n);
  bn.var.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double sign = rng.flip() ? 1.0 : -1.0;
    bn.gamma[c] = static_cast<T>(sign * rng.uniform(0.4, 1.6));
    bn.beta[c] = static_cast<T>(rng.uniform(-1.0, 1.0));
    bn.mu[c] = static_cast<T>(rng.uniform(-1.0, 1.0));
    bn.var[c] = static_cast<T>(rng.uniform(0.05, 2.0));
  }
  const int pick = static_cast<int>(rng.integer(0, 2));
  bn.epsilon = pick == 0 ? T(0) : (pick == 1 ? static_cast<T>(1e-5)
                                             : static_cast<T>(1e-3));
  return bn;
}

template <typename T>
void randomize_conv_bn(Rng& rng, repspk::ConvBNDesc<T>& cb) {
  fill_uniform(rng, cb.conv.kernel.weight, -1.0, 1.0);
  cb.bn = random_bn<T>(rng, cb.conv.kernel.out_ch);
}

// Fresh random weights and BN statistics for every branch of a block.
template <typename T>
void randomize_block(Rng& rng, repspk::RepBlock<T>& block) {
  for (auto& branch : block.branches) {
    std::visit(
        [&](auto& b) {
          using B = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<B, repspk::ConvBNDesc<T>>) {
            randomize_conv_bn(rng, b);
          } else if constexpr (std::is_same_v<B, repspk::SequenceDesc<T>>) {
            for (auto& stage : b.stages) randomize_conv_bn(rng, stage);
          } else if constexpr (std::is_same_v<B, repspk::AvgPoolDesc<T>>) {
            if (b.pre) randomize_conv_bn(rng, *b.pre);
            b.bn = random_bn<T>(rng, b.bn.channels());
          } else {
            b.bn = random_bn<T>(rng, b.bn.channels());
          }
        },
        branch);
  }
}

// Random BN statistics everywhere while weights stay as initialized.
template <typename T>
void randomize_block_bn(Rng& rng, repspk::RepBlock<T>& block) {
  for (auto& branch : block.branches) {
    std::visit(
        [&](auto& b) {
          using B = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<B, repspk::ConvBNDesc<T>>) {
            b.bn = random_bn<T>(rng, b.bn.channels());
          } else if constexpr (std::is_same_v<B, repspk::SequenceDesc<T>>) {
            for (auto& stage : b.stages) {
              stage.bn = random_bn<T>(rng, stage.bn.channels());
            }
          } else if constexpr (std::is_same_v<B, repspk::AvgPoolDesc<T>>) {
            if (b.pre) b.pre->bn = random_bn<T>(rng, b.pre->bn.channels());
            b.bn = random_bn<T>(rng, b.bn.channels());
          } else {
            b.bn = random_bn<T>(rng, b.bn.channels());
          }
        },
        branch);
  }
}

// Plain per-output-element convolution, evaluated exactly per the contract:
// bounds-checked reads (no padded buffer), terms accumulated with in_channel
// innermost, then kernel row, then kernel column; bias added last.
template <typename T>
repspk::Tensor<T> conv_reference(const repspk::Tensor<T>& x,
                                 const repspk::ConvSpec<T>& spec) {
  const repspk::Kernel<T>& k = spec.kernel;
  const std::int64_t eff_kh = 1 + (k.kh - 1) * spec.dh;
  const std::int64_t eff_kw = 1 + (k.kw - 1) * spec.dw;
  const std::int64_t hout = (x.shape.h + 2 * spec.ph - eff_kh) / spec.sh + 1;
  const std::int64_t wout = (x.shape.w + 2 * spec.pw - eff_kw) / spec.sw + 1;

  repspk::Tensor<T> out(x.shape.n, k.out_ch, hout, wout);
  for (std::int64_t n = 0; n < x.shape.n; ++n) {
    for (std::int64_t oc = 0; oc < k.out_ch; ++oc) {
      for (std::int64_t oh = 0; oh < hout; ++oh) {
        for (std::int64_t ow = 0; ow < wout; ++ow) {
          T acc = T(0);
          for (int v = 0; v < k.kw; ++v) {
            for (int u = 0; u < k.kh; ++u) {
              for (std::int64_t ic = 0; ic < k.in_ch; ++ic) {
                const std::int64_t ih = oh * spec.sh + std::int64_t(u) * spec.dh - spec.ph;
                const std::int64_t iw = ow * spec.sw + std::int64_t(v) * spec.dw - spec.pw;
                T val;
                if (ih >= 0 && ih < x.shape.h && iw >= 0 && iw < x.shape.w) {
                  val = x.at(n, ic, ih, iw);
                } else {
                  val = spec.pad_value.empty()
                            ? T(0)
                            : spec.pad_value[static_cast<std::size_t>(ic)];
                }
                acc += k.at(oc, ic, u, v) * val;
              }
            }
          }
          if (!spec.bias.empty()) {
            acc += spec.bias[static_cast<std::size_t>(oc)];
          }
          out.at(n, oc, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

// Per-channel BN evaluated independently of the library.
template <typename T>
repspk::Tensor<T> bn_reference(const repspk::Tensor<T>& x,
                               const repspk::BNParams<T>& bn) {
  repspk::Tensor<T> out = x;
  for (std::int64_t n = 0; n < x.shape.n; ++n) {
    for (std::int64_t c = 0; c < x.shape.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const T sigma = std::sqrt(bn.var[ci] + bn.epsilon);
      for (std::int64_t h = 0; h < x.shape.h; ++h) {
        for (std::int64_t w = 0; w < x.shape.w; ++w) {
          out.at(n, c, h, w) =
              bn.gamma[ci] * (x.at(n, c, h, w) - bn.mu[ci]) / sigma +
              bn.beta[ci];
        }
      }
    }
  }
  return out;
}

// Window mean computed as sum-then-divide (the library multiplies each tap
// by 1/(kh*kw) instead), so agreement is approximate by construction.
template <typename T>
repspk::Tensor<T> pool_reference(const repspk::Tensor<T>& x, int kh, int kw,
                                 int sh, int sw, int ph, int pw,
                                 const std::vector<T>& pad_value = {}) {
  const std::int64_t hout = (x.shape.h + 2 * ph - kh) / sh + 1;
  const std::int64_t wout = (x.shape.w + 2 * pw - kw) / sw + 1;
  repspk::Tensor<T> out(x.shape.n, x.shape.c, hout, wout);
  for (std::int64_t n = 0; n < x.shape.n; ++n) {
    for (std::int64_t c = 0; c < x.shape.c; ++c) {
      for (std::int64_t oh = 0; oh < hout; ++oh) {
        for (std::int64_t ow = 0; ow < wout; ++ow) {
          double sum = 0.0;
          for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
              const std::int64_t ih = oh * sh + u - ph;
              const std::int64_t iw = ow * sw + v - pw;
              if (ih >= 0 && ih < x.shape.h && iw >= 0 && iw < x.shape.w) {
                sum += static_cast<double>(x.at(n, c, ih, iw));
              } else if (!pad_value.empty()) {
                sum += static_cast<double>(
                    pad_value[static_cast<std::size_t>(c)]);
              }
            }
          }
          out.at(n, c, oh, ow) =
              static_cast<T>(sum / (static_cast<double>(kh) * kw));
        }
      }
    }
  }
  return out;
}

// Exhaustive threshold sweep for the equal error rate, counting from scratch
// at every candidate. Shares only the published crossing formula with the
// library.
struct SweepResult {
  double value = 0.0;
  double threshold = 0.0;
};

inline SweepResult eer_bruteforce(const std::vector<repspk::ScoredTrial>& trials) {
  std::vector<double> targets, nontargets;
  for (const auto& t : trials) {
    (t.target ? targets : nontargets).push_back(t.score);
  }
  std::set<double> distinct;
  for (const auto& t : trials) distinct.insert(t.score);
  std::vector<double> candidates(distinct.begin(), distinct.end());
  candidates.push_back(candidates.back() + 1.0);

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  double prev_far = 1.0, prev_frr = 0.0, prev_t = candidates.front();
  for (const double t : candidates) {
    std::int64_t miss = 0, fa = 0;
    for (const double s : targets) miss += s < t ? 1 : 0;
    for (const double s : nontargets) fa += s >= t ? 1 : 0;
    const double frr = static_cast<double>(miss) / nt;
    const double far = static_cast<double>(fa) / nn;
    if (frr >= far) {
      if (frr == far) return {far, t};
      const double alpha =
          (prev_far - prev_frr) / ((frr - prev_frr) - (far - prev_far));
      return {prev_far + alpha * (far - prev_far),
              prev_t + alpha * (t - prev_t)};
    }
    prev_far = far;
    prev_frr = frr;
    prev_t = t;
  }
  return {1.0, candidates.back()};  // unreachable for two-class input
}

inline SweepResult mindcf_bruteforce(const std::vector<repspk::ScoredTrial>& trials,
                                     const repspk::DcfParams& params) {
  std::vector<double> targets, nontargets;
  for (const auto& t : trials) {
    (t.target ? targets : nontargets).push_back(t.score);
  }
  std::set<double> distinct;
  for (const auto& t : trials) distinct.insert(t.score);
  std::vector<double> candidates;
  candidates.push_back(*distinct.begin() - 1.0);
  candidates.insert(candidates.end(), distinct.begin(), distinct.end());
  candidates.push_back(*distinct.rbegin() + 1.0);

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  const double miss_w = params.c_miss * params.p_target;
  const double fa_w = params.c_fa * (1.0 - params.p_target);

  double best = 0.0, best_t = 0.0;
  bool first = true;
  for (const double t : candidates) {
    std::int64_t miss = 0, fa = 0;
    for (const double s : targets) miss += s < t ? 1 : 0;
    for (const double s : nontargets) fa += s >= t ? 1 : 0;
    const double cost = miss_w * (static_cast<double>(miss) / nt) +
                        fa_w * (static_cast<double>(fa) / nn);
    if (first || cost < best) {
      best = cost;
      best_t = t;
      first = false;
    }
  }
  return {best / std::min(miss_w, fa_w), best_t};
}

// Extended-precision additive-margin softmax, same definition evaluated in
// long double with its own shift logic.
inline double am_softmax_longdouble(const std::vector<double>& cosines,
                                    std::int64_t n, std::int64_t c,
                                    const std::vector<int>& labels, double s,
                                    double m) {
  long double total = 0.0L;
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    std::vector<long double> z(static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j) {
      z[static_cast<std::size_t>(j)] =
          static_cast<long double>(s) *
          static_cast<long double>(cosines[static_cast<std::size_t>(i * c + j)]);
    }
    z[static_cast<std::size_t>(y)] -=
        static_cast<long double>(s) * static_cast<long double>(m);
    const long double zy = z[static_cast<std::size_t>(y)];
    const long double zmax = *std::max_element(z.begin(), z.end());
    if (zmax == zy) {
      long double sum = 0.0L;
      for (std::int64_t j = 0; j < c; ++j) {
        if (j == y) continue;
        sum += std::exp(z[static_cast<std::size_t>(j)] - zy);
      }
      total += std::log1p(sum);
    } else {
      long double sum = 0.0L;
      for (std::int64_t j = 0; j < c; ++j) {
        sum += std::exp(z[static_cast<std::size_t>(j)] - zmax);
      }
      total += (zmax - zy) + std::log(sum);
    }
  }
  return static_cast<double>(total / static_cast<long double>(n));
}

// Independent max |a-b| / max |a|.
template <typename T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) -
                                   static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(a[i])));
  }
  return scale == 0.0 ? diff : diff / scale;
}

}  // namespace oracles
