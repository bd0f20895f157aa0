//
// Copyright 2026 The wpure Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WPURE_RNG_HPP
#define WPURE_RNG_HPP

#include <cstdint>
#include <random>

namespace wpure {

/// Named stream ids. Each pipeline stage draws from its own stream so that
/// changing one stage never shifts another stage's draws.
enum class Stream : std::uint32_t {
  CriticInit = 1,
  BatchSampling = 2,
  DetectorSampling = 3,
  MarkGeneration = 4,
  DataGeneration = 5,
  Manipulation = 6,
  ProbeTraining = 7,
  Baseline = 8,
  Evaluation = 9,
};

/// Deterministic random source keyed by (seed, stream id).
///
/// The engine state is derived by mixing both keys through splitmix64 and
/// feeding the result to a seed_seq, so neighbouring seeds or stream ids do
/// not produce correlated mt19937_64 states.
class SeedStream {
public:
  using engine_type = std::mt19937_64;

  SeedStream(std::uint64_t seed, std::uint32_t stream) : seed_(seed), stream_(stream) { reseed(); }
  SeedStream(std::uint64_t seed, Stream stream) : SeedStream(seed, static_cast<std::uint32_t>(stream)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint32_t stream() const noexcept { return stream_; }

  engine_type &engine() noexcept { return engine_; }

  /// Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double normal() { return normal_(engine_); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  /// A child stream derived from this one's keys; does not consume draws.
  SeedStream fork(std::uint32_t sub) const { return SeedStream(mix(seed_ ^ (std::uint64_t{sub} << 32)), stream_ + sub); }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  void reseed() {
    const std::uint64_t a = mix(seed_);
    const std::uint64_t b = mix(a ^ (0xd1b54a32d192ed03ULL * (std::uint64_t{stream_} + 1)));
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32), stream_};
    engine_.seed(seq);
    normal_.reset();
  }

  std::uint64_t seed_;
  std::uint32_t stream_;
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace wpure

#endif // WPURE_RNG_HPP
