#pragma once

#include <array>
#include <cstdint>

#include "dpfl/tensor.hpp"

namespace dpfl {

// Consumers that draw randomness. Each owns an independent stream so that,
// for example, a change in lot sampling never shifts the noise sequence.
enum class Stream : std::uint32_t {
  kNoise = 0,
  kInit = 1,
  kSampling = 2,
  kData = 3,
};
inline constexpr std::size_t kStreamCount = 4;

// Counter-based generator: draw i of a stream is a pure function of
// (seed, stream id, i), so streams can be split and replayed freely.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in (0, 1].
  double uniform_open_low() { return 1.0 - uniform(); }
  // Standard normal via Box-Muller; one draw consumes two counters.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

class RngState {
 public:
  explicit RngState(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  RngStream& stream(Stream s) { return streams_[static_cast<std::size_t>(s)]; }

 private:
  std::uint64_t seed_;
  std::array<RngStream, kStreamCount> streams_;
};

std::uint64_t splitmix64(std::uint64_t x);

// I.i.d. N(0, stddev²) entries. stddev == 0 yields exact zeros and does not
// consume the stream.
template <typename T>
Tensor<T> gaussian_sample(RngStream& rng, const Shape& shape, double stddev);

}  // namespace dpfl
