#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace utrcaf {

// A random stream identified by (seed, purpose tag, counter). Two streams with
// the same identity produce the same sequence regardless of what other streams
// were drawn from before, so results do not depend on execution order.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0);

  std::mt19937_64& engine() { return engine_; }

  double uniform(double low, double high);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Beta(alpha, alpha) via two gamma draws.
  double beta_symmetric(double alpha);
  std::uint64_t index(std::uint64_t n);  // uniform in [0, n)

 private:
  std::mt19937_64 engine_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter);

}  // namespace utrcaf
