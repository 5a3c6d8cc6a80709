#include "dpfl/rng.hpp"

#include <cmath>
#include <numbers>

namespace dpfl {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(splitmix64(splitmix64(seed) ^ (0xD1B54A32D192ED03ULL * (stream_id + 1)))) {}

std::uint64_t RngStream::next_u64() {
  // Two rounds of mixing over (key, counter) keep adjacent counters decorrelated.
  std::uint64_t c = counter_++;
  return splitmix64(splitmix64(key_ + c * 0x9E3779B97F4A7C15ULL) ^ key_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  double u1 = uniform_open_low();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw ParameterError("below(0)");
  // Rejection sampling removes modulo bias.
  std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

RngState::RngState(std::uint64_t seed) : seed_(seed) {
  for (std::size_t i = 0; i < kStreamCount; ++i) streams_[i] = RngStream(seed, i);
}

template <typename T>
Tensor<T> gaussian_sample(RngStream& rng, const Shape& shape, double stddev) {
  if (!(stddev >= 0.0) || !std::isfinite(stddev)) {
    throw ParameterError("gaussian stddev must be finite and >= 0, got " +
                         std::to_string(stddev));
  }
  Tensor<T> out(shape);
  if (stddev == 0.0) return out;
  for (auto& v : out.values()) v = static_cast<T>(stddev * rng.normal());
  return out;
}

template Tensor<float> gaussian_sample<float>(RngStream&, const Shape&, double);
template Tensor<double> gaussian_sample<double>(RngStream&, const Shape&, double);

}  // namespace dpfl
