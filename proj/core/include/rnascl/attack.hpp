#ifndef RNASCL_ATTACK_HPP
#define RNASCL_ATTACK_HPP

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnascl/random.hpp"
#include "rnascl/tensor.hpp"

namespace rnascl::data {
struct Dataset;
}

namespace rnascl::attack {

/// White-box l∞ threat model. Pixel scale is [0, 1].
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    std::size_t steps = 20;
    double step_size = 2.0 / 255.0;
    double momentum = 0.0;  // MI-FGSM decay factor μ
    bool random_start = true;

    void validate() const;
    /// Set when steps·step_size cannot reach epsilon.
    [[nodiscard]] std::optional<std::string> reachability_warning() const;
};

/// PGD defaults: α = ε/4, random start, 20 steps.
AttackConfig pgd_config(double epsilon, std::size_t steps = 20);

enum class AttackKind { Fgsm, Pgd, MiFgsm };

struct AttackSpec {
    AttackKind kind = AttackKind::Pgd;
    AttackConfig config;

    [[nodiscard]] std::string name() const;
};

/// Maps an N×C×H×W batch to N×K logits.
using Classifier = std::function<Tensor(const Tensor&)>;

/// Called with every iterate of an iterative attack (instrumentation).
using IterateObserver = std::function<void(std::size_t step, const Tensor& iterate)>;

/// Sum over the batch of cross-entropy gradients with respect to the input.
/// Model parameters' stored grads are left untouched.
std::vector<double> input_gradient(const Classifier& model, const Tensor& x, const std::vector<int>& labels);

/// clip_[0,1](x + ε·sign(∇_x CE)).
Tensor fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels, double epsilon);

/// Projected sign-gradient ascent inside B∞(x, ε) ∩ [0,1]^d.
Tensor pgd(const Classifier& model, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg,
           Rng& rng, const IterateObserver& observer = {});

/// velocity ← μ·velocity + ∇/‖∇‖₁, with the ℓ1 norm taken per sample of a
/// batch of `batch` equally sized samples. Samples with zero gradient add nothing.
void accumulate_momentum(std::vector<double>& velocity, std::span<const double> grad, double mu, std::size_t batch);

/// Momentum iterative FGSM: g ← μ·g + ∇/‖∇‖₁ (per sample), step along sign(g).
Tensor mi_fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg,
               const IterateObserver& observer = {});

Tensor run_attack(const AttackSpec& spec, const Classifier& model, const Tensor& x, const std::vector<int>& labels,
                  Rng& rng);

/// Index of the largest logit per row; ties resolve to the lowest index.
std::vector<int> predict(const Tensor& logits);

struct EvalRow {
    std::string model_id;
    std::string attack;  // "clean", "fgsm", "pgd", "mifgsm"
    double epsilon = 0.0;
    std::size_t steps = 0;
    double accuracy = 0.0;
    std::size_t n_samples = 0;
};

/// Clean accuracy followed by one row per attack.
std::vector<EvalRow> evaluate(const Classifier& model, const data::Dataset& dataset,
                              const std::vector<AttackSpec>& attacks, const std::string& model_id,
                              std::uint64_t seed, std::size_t batch_size = 64);

/// model_id,attack,epsilon,steps,accuracy,n_samples
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);

}  // namespace rnascl::attack

#endif  // RNASCL_ATTACK_HPP
