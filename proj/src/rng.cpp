#include "utrcaf/rng.hpp"

namespace utrcaf {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a(tag));
  h = splitmix64(h ^ counter);
  return h;
}

RngStream::RngStream(std::uint64_t seed, std::string_view tag, std::uint64_t counter)
    : engine_(derive_seed(seed, tag, counter)) {}

double RngStream::uniform(double low, double high) {
  if (low == high) return low;
  return std::uniform_real_distribution<double>(low, high)(engine_);
}

double RngStream::normal(double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

double RngStream::beta_symmetric(double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(engine_);
  const double b = gamma(engine_);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

std::uint64_t RngStream::index(std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
}

}  // namespace utrcaf
