#ifndef SFV_RNG_HPP
#define SFV_RNG_HPP

#include <array>
#include <cstdint>
#include <limits>

namespace sfv {

// Independent stream families derived from one root seed.
enum class StreamDomain : std::uint64_t {
  kParticle = 1,  // (particle index, epoch)
  kBranch = 2,    // (branching index, 0)
  kTieBreak = 3,  // (particle index, epoch), hashed only
  kAuxiliary = 4,
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

// Stateless hash of (root, domain, a, b); used as a stream key.
std::uint64_t stream_key(std::uint64_t root, StreamDomain domain, std::uint64_t a,
                         std::uint64_t b) noexcept;

/// xoshiro256** generator. Cheap to construct, so a fresh stream can be spawned
/// for every particle at every epoch; results then do not depend on the order
/// in which particles are evolved.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed) noexcept;

  static RandomStream derive(std::uint64_t root, StreamDomain domain, std::uint64_t a,
                             std::uint64_t b = 0) noexcept {
    return RandomStream(stream_key(root, domain, a, b));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  // Uniform on (0, 1]; never returns 0 so -log(u) is finite.
  double uniform_pos() noexcept;

  // Uniform integer in [0, n) by Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace sfv

#endif  // SFV_RNG_HPP
