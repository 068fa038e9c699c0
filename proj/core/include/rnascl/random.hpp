#ifndef RNASCL_RANDOM_HPP
#define RNASCL_RANDOM_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace rnascl {

// Seeded generator with distribution code written out explicitly, so draws
// do not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in the open interval (0, 1).
    double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();
    double gumbel();

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    std::vector<std::size_t> permutation(std::size_t n);

    /// Independent generator for a named sub-stream.
    Rng fork(std::uint64_t stream);

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rnascl

#endif  // RNASCL_RANDOM_HPP
