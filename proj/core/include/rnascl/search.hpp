#ifndef RNASCL_SEARCH_HPP
#define RNASCL_SEARCH_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rnascl/attack.hpp"
#include "rnascl/data.hpp"
#include "rnascl/distill.hpp"
#include "rnascl/gumbel.hpp"
#include "rnascl/nn.hpp"

namespace rnascl::search {

// ---------------------------------------------------------------------------
// Optimisation

/// v ← μ·v + g + λ·p ;  p ← p − lr·v
void sgd_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum, double weight_decay);

/// Rescales grads so their joint ℓ2 norm is at most max_norm (no-op when
/// max_norm is 0). Returns the norm before clipping.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

class Sgd {
public:
    Sgd(std::vector<Tensor> params, double momentum, double weight_decay);

    /// Applies one update with gradients given in params() order.
    void step(std::span<const std::vector<double>> grads, double lr);

    [[nodiscard]] const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double momentum_;
    double weight_decay_;
};

enum class Schedule { Cosine, Step };

/// Learning rate for a 0-based epoch. Step: ×0.1 from 75% and again from 90%
/// of the run. Cosine: anneals to zero. A linear warm-up scales the first
/// warmup_epochs epochs by (epoch+1)/warmup_epochs.
double learning_rate(Schedule kind, double base_lr, std::size_t epoch, std::size_t total_epochs,
                     std::size_t warmup_epochs = 0);

struct TrainConfig {
    Schedule schedule = Schedule::Step;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    double gamma = 1.0;  // weight of the attention term
    bool flip = false;
    std::size_t crop_pad = 0;
    /// Adversarial training only: the attack budget ramps linearly to its
    /// full value over this many epochs (0 = full budget from the start).
    std::size_t epsilon_warmup = 0;
    /// The learning rate ramps linearly, lr·(e+1)/W, over the first W epochs.
    std::size_t warmup_epochs = 0;
    /// Global gradient-norm clip for model weights (0 = off).
    double clip_norm = 0.0;

    void validate() const;
};

/// Small-image profile: lr 0.1, step decay, weight decay 2e-4, batch 128.
TrainConfig cifar_profile();
/// Large-image profile: lr 0.05, cosine, weight decay 4e-5, batch 256, 200 epochs.
TrainConfig imagenet_profile();

// ---------------------------------------------------------------------------
// Losses

/// Which distillation terms enter the bracket (cross-entropy is always on).
struct LossTerms {
    bool kl = true;
    bool attention = true;
    double gamma = 1.0;

    [[nodiscard]] bool needs_teacher() const { return kl || attention; }
};

struct LossBreakdown {
    Tensor total;
    double cross_entropy = 0.0;
    double kl = 0.0;
    double attention = 0.0;
    double cost = 1.0;  // n_f (1 for the train loss)
};

/// −mean_batch log p[label], with p floored inside the log.
Tensor nll_from_probs(const Tensor& probs, const std::vector<int>& labels);

/// Normalized expected cost n_f = expected_macs / max_macs, a function of the
/// mask logits only.
Tensor cost_factor(const nn::SuperNet& net, const std::vector<Tensor>& choice_weights);

struct SearchLossInputs {
    const Tensor& student_probs;                 // N×K, p
    const std::vector<int>& labels;              // y
    const Tensor* teacher_probs = nullptr;       // N×K, q (needed when kl)
    const std::vector<Tensor>* student_acts = nullptr;
    const std::vector<Tensor>* teacher_acts = nullptr;
    const Tensor* connection_weights = nullptr;  // n_s×n_t Gumbel rows (needed when attention)
    const Tensor& cost;                          // n_f scalar
};

/// (−y log p + KL(p,q) + γ_s·L_attn) · n_f
LossBreakdown search_loss(const SearchLossInputs& in, const LossTerms& terms);

struct TrainLossInputs {
    const Tensor& student_probs;
    const std::vector<int>& labels;
    const Tensor* teacher_probs = nullptr;
    const std::vector<Tensor>* student_acts = nullptr;
    const std::vector<Tensor>* teacher_acts = nullptr;
    const std::vector<std::size_t>* tutors = nullptr;
};

/// L_CE + KL(p,q) + γ_t·L_attn with one-hot tutor rows.
LossBreakdown train_loss(const TrainLossInputs& in, const LossTerms& terms);

// ---------------------------------------------------------------------------
// Search phase

struct SearchConfig {
    TrainConfig weights;   // model-weight optimiser and batching
    double arch_lr = 0.01;
    LossTerms terms;
    double tau0 = GumbelSampler::kInitialTemperature;
    double tau_decay = GumbelSampler::kDecayExponent;
    double weight_fraction = 0.8;

    void validate() const;
};

/// Sizes of the (model-weight, architecture) parts of a batch.
std::pair<std::size_t, std::size_t> split_batch(std::size_t batch, double weight_fraction);

struct EpochMetrics {
    std::size_t epoch = 0;
    double tau = 0.0;
    double lr = 0.0;
    double loss = 0.0;
    double cross_entropy = 0.0;
    double kl = 0.0;
    double attention = 0.0;
    double cost = 0.0;
    double clean_acc = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

class SearchState {
public:
    /// `teacher` may be empty (no layers) when the loss terms do not use it.
    /// The connection matrix exists only when the attention term is on.
    SearchState(nn::SuperNet supernet, nn::Network teacher, SearchConfig cfg, std::uint64_t seed);

    nn::SuperNet supernet;
    nn::Network teacher;
    distill::ConnectionMatrix connections;
    GumbelSampler sampler;
    SearchConfig config;
    std::size_t epoch = 0;

    /// Architecture parameters: connection logits then per-block mask logits.
    [[nodiscard]] std::vector<Tensor> arch_parameters() const;
    [[nodiscard]] std::vector<Tensor> weight_parameters() const { return supernet.weight_parameters(); }

    [[nodiscard]] bool uses_connections() const { return connections.logits.defined(); }

    Sgd weight_optimizer;
    Sgd arch_optimizer;
    std::uint64_t seed;
};

/// One epoch: per batch, the leading weight_fraction of samples update model
/// weights on the search loss and the rest update architecture parameters;
/// τ is annealed at the end. Gumbel noise is drawn once per batch in the
/// order: connection matrix (row-major), then each block's mask.
EpochMetrics search_epoch(SearchState& state, const data::Dataset& train);

struct ArchDescription {
    nn::ArchSpec spec;
    std::vector<std::size_t> choice_index;
    std::vector<std::size_t> channels;
    std::vector<std::size_t> tutors;  // empty when no teacher was used
    std::size_t teacher_layers = 0;
    std::uint64_t macs = 0;
    std::size_t params = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static ArchDescription from_json(const nlohmann::json& j);
};

/// Argmax channel per block and argmax tutor per student layer (ties → lowest).
ArchDescription derive(const SearchState& state);

/// Throws unless every channel is one of its block's choices and every tutor
/// lies in [0, teacher_layers).
void validate(const ArchDescription& arch, const nn::SuperNetConfig& space);

/// Freshly initialised network of the derived widths.
nn::Network instantiate(const ArchDescription& arch, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training phase and teacher

class Trainer {
public:
    Trainer(nn::Network student, const nn::Network* teacher, std::vector<std::size_t> tutors, TrainConfig cfg,
            LossTerms terms, std::uint64_t seed);

    EpochMetrics run_epoch(const data::Dataset& train);

    [[nodiscard]] const nn::Network& student() const { return student_; }
    [[nodiscard]] std::size_t epoch() const { return epoch_; }

private:
    nn::Network student_;
    const nn::Network* teacher_;
    std::vector<std::size_t> tutors_;
    TrainConfig cfg_;
    LossTerms terms_;
    Sgd optimizer_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
};

/// Called after each epoch with (epoch, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Minimises cross-entropy on PGD-perturbed inputs (clean inputs when
/// `attack` is empty). Returns the per-epoch mean loss trace; the network
/// is frozen on return.
std::vector<double> train_classifier(nn::Network& net, const data::Dataset& train, const TrainConfig& cfg,
                                     const std::optional<attack::AttackConfig>& attack, std::uint64_t seed,
                                     const EpochCallback& on_epoch = {});

nn::Network adversarial_train_teacher(nn::ArchSpec spec, const data::Dataset& train, const attack::AttackConfig& attack,
                                      const TrainConfig& cfg, std::uint64_t seed);

}  // namespace rnascl::search

#endif  // RNASCL_SEARCH_HPP
