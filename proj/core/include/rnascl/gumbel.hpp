#ifndef RNASCL_GUMBEL_HPP
#define RNASCL_GUMBEL_HPP

#include <cstddef>
#include <vector>

#include "rnascl/random.hpp"
#include "rnascl/tensor.hpp"

namespace rnascl {

/// softmax((v + noise) / tau) over the last axis. `noise` has v.numel() entries.
Tensor gumbel_softmax(const Tensor& logits, double tau, const std::vector<double>& noise);

/// Temperature schedule plus noise source shared by tutor and channel search.
class GumbelSampler {
public:
    static constexpr double kInitialTemperature = 5.0;
    static constexpr double kDecayExponent = 0.045;

    explicit GumbelSampler(std::uint64_t seed, double tau0 = kInitialTemperature, double decay = kDecayExponent);

    [[nodiscard]] double temperature() const { return tau_; }
    [[nodiscard]] std::size_t epochs_annealed() const { return epochs_; }

    /// tau <- tau * exp(-decay). Called once per search epoch.
    void anneal();

    /// Temperature after `epoch` annealing steps, tau0 * exp(-decay * epoch).
    [[nodiscard]] double temperature_at(std::size_t epoch) const;

    /// Standard Gumbel(0, 1) draws, -log(-log(U)).
    std::vector<double> noise(std::size_t n);

private:
    double tau0_;
    double decay_;
    double tau_;
    std::size_t epochs_ = 0;
    Rng rng_;
};

}  // namespace rnascl

#endif  // RNASCL_GUMBEL_HPP
