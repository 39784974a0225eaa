#pragma once

#include <array>
#include <cstdint>

namespace cbsde {

// Philox4x32-10 (Salmon et al., SC'11). Stateless: output is a pure function
// of (key, counter), so any draw can be regenerated in any order.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Block operator()(Block ctr) const;

 private:
  std::array<std::uint32_t, 2> key_;
};

// Stream ids keep unrelated consumers of one seed apart.
enum class Stream : std::uint32_t {
  brownian = 1,
  jumps = 2,
  jumps_aux = 3,
  perturbation = 4,
};

// Draws for one (seed, stream, path) triple, addressed by an index.
class PathStream {
 public:
  PathStream(std::uint64_t seed, Stream stream, std::uint64_t path)
      : gen_(seed), path_(path), stream_(static_cast<std::uint32_t>(stream)) {}

  // Uniform on the open interval (0, 1).
  double uniform(std::uint32_t index) const;
  double normal(std::uint32_t index) const;
  // +1 or -1 with equal probability.
  double sign(std::uint32_t index) const;

 private:
  Philox4x32::Block block(std::uint32_t index) const;

  Philox4x32 gen_;
  std::uint64_t path_;
  std::uint32_t stream_;
};

}  // namespace cbsde
