#include "daytrace/random.hpp"

#include <openssl/rand.h>

#include <vector>

#include "daytrace/common.hpp"

namespace daytrace {

std::uint64_t RandomSource::next_u64() {
  unsigned char buf[8];
  fill(buf);
  std::uint64_t v = 0;
  for (unsigned char b : buf) v = (v << 8) | b;
  return v;
}

void SystemRandom::fill(std::span<unsigned char> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
    throw Error(ErrorCode::storage_error, "RAND_bytes failed");
}

void SeededRandom::fill(std::span<unsigned char> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t v = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<unsigned char>(v >> (56 - 8 * b));
    }
  }
}

std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t bound) {
  if (bound == 0) throw Error(ErrorCode::invalid_argument, "uniform_below(0)");
  // Largest multiple of bound that fits in 2^64.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
  while (true) {
    std::uint64_t v = engine();
    if (v <= limit) return v % bound;
  }
}

double uniform_unit(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

std::string random_hex(RandomSource& rng, std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  rng.fill(buf);
  return to_hex(buf.data(), buf.size());
}

}  // namespace daytrace
