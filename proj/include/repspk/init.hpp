#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace repspk {

// Deterministic weight initialization. One engine, consumed in a fixed
// order, so equal seeds give byte-identical models on any platform.
class InitPolicy {
 public:
  explicit InitPolicy(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits, identical across platforms.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)).
  double weight_sample(std::int64_t fan_in) {
    return (2.0 * uniform() - 1.0) / std::sqrt(static_cast<double>(fan_in));
  }

  template <typename T>
  void fill(std::vector<T>& dst, std::int64_t fan_in) {
    for (auto& x : dst) x = static_cast<T>(weight_sample(fan_in));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace repspk
