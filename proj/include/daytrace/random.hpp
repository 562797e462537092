#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace daytrace {

/// Source of random bytes for salts, identifiers, tokens and codes.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual void fill(std::span<unsigned char> out) = 0;

  std::uint64_t next_u64();
};

/// OS-backed CSPRNG (OpenSSL RAND_bytes).
class SystemRandom final : public RandomSource {
 public:
  void fill(std::span<unsigned char> out) override;
};

/// Deterministic generator for simulations and tests. Never use for real salts.
class SeededRandom final : public RandomSource {
 public:
  explicit SeededRandom(std::uint64_t seed) : engine_(seed) {}
  void fill(std::span<unsigned char> out) override;

 private:
  std::mt19937_64 engine_;
};

/// Uniform integer in [0, bound) by rejection sampling. The result depends only
/// on the engine's output sequence, so it is identical across standard libraries.
std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t bound);

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
double uniform_unit(std::mt19937_64& engine);

std::string random_hex(RandomSource& rng, std::size_t bytes);

}  // namespace daytrace
