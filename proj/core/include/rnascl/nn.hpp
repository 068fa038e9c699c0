#ifndef RNASCL_NN_HPP
#define RNASCL_NN_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rnascl/random.hpp"
#include "rnascl/tensor.hpp"

namespace rnascl::nn {

/// Pixels in [0, 1] are shifted by this value before the first conv, so
/// attacks and datasets stay in pixel space.
inline constexpr double kInputCenter = 0.5;

/// One conv+relu block; padding is kernel / 2 ("same" for odd kernels).
struct ConvSpec {
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;

    bool operator==(const ConvSpec&) const = default;
};

/// A fully decided plain network: conv blocks, global average pool, linear head.
struct ArchSpec {
    std::size_t in_channels = 3;
    std::size_t input_size = 16;  // square inputs
    std::size_t num_classes = 2;
    std::vector<ConvSpec> blocks;

    bool operator==(const ArchSpec&) const = default;
};

nlohmann::json to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const nlohmann::json& j);

/// Spatial extent after each block for a square input.
std::vector<std::size_t> output_sizes(const ArchSpec& spec);

struct ForwardResult {
    Tensor logits;                    // N × classes, pre-softmax
    std::vector<Tensor> activations;  // one N×C×H×W tensor per conv block when captured
};

struct ConvBlock {
    Tensor weight;  // O×I×K×K
    std::size_t stride = 1;
    std::size_t padding = 1;

    [[nodiscard]] Tensor forward(const Tensor& x) const;
};

class Network {
public:
    Network() = default;
    /// He-normal conv weights, uniform head weights, zero head bias.
    Network(ArchSpec spec, Rng& rng);

    [[nodiscard]] ForwardResult forward(const Tensor& x, bool capture = false) const;
    [[nodiscard]] Tensor logits(const Tensor& x) const { return forward(x, false).logits; }

    [[nodiscard]] const ArchSpec& spec() const { return spec_; }
    [[nodiscard]] std::size_t num_layers() const { return blocks_.size(); }
    [[nodiscard]] std::vector<Tensor> parameters() const;
    [[nodiscard]] std::size_t parameter_count() const;

    std::vector<ConvBlock>& blocks() { return blocks_; }
    [[nodiscard]] const std::vector<ConvBlock>& blocks() const { return blocks_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

    /// Stops gradient recording into this network's parameters.
    void freeze();
    /// Deep copy with independent parameter storage.
    [[nodiscard]] Network clone() const;
    /// Combined checksum over all parameters.
    [[nodiscard]] std::uint64_t checksum() const;

    /// Assembles a network from explicit parameters (used by checkpoints and
    /// supernet extraction). `params` follows parameters() order.
    static Network from_parameters(ArchSpec spec, const std::vector<Tensor>& params);

private:
    void check_input(const Tensor& x) const;

    ArchSpec spec_;
    std::vector<ConvBlock> blocks_;
    Tensor head_w_;
    Tensor head_b_;
};

// ---------------------------------------------------------------------------
// Channel-searchable supernet.

struct StageSpec {
    std::size_t depth = 1;
    std::vector<std::size_t> choices;  // channel options, sorted, unique
    std::size_t stride = 1;           // applied by the first block of the stage

    bool operator==(const StageSpec&) const = default;
};

struct SuperNetConfig {
    std::size_t in_channels = 3;
    std::size_t input_size = 16;
    std::size_t num_classes = 2;
    std::size_t kernel = 3;
    std::vector<StageSpec> stages;

    bool operator==(const SuperNetConfig&) const = default;
};

nlohmann::json to_json(const SuperNetConfig& cfg);
SuperNetConfig supernet_from_json(const nlohmann::json& j);

/// Conv block whose weights are sized for the widest choice; narrower
/// choices are realised by zeroing trailing output channels.
class MaskedConvBlock {
public:
    MaskedConvBlock(std::size_t in_channels, std::vector<std::size_t> choices, std::size_t kernel,
                    std::size_t stride, Rng& rng);

    /// relu(conv(x)) gated per channel by sum_i w_i * [c < f_i].
    [[nodiscard]] Tensor forward(const Tensor& x, const Tensor& choice_weights) const;

    [[nodiscard]] const std::vector<std::size_t>& choices() const { return choices_; }
    [[nodiscard]] std::size_t max_channels() const { return max_channels_; }
    [[nodiscard]] std::size_t in_channels() const { return weight_.dim(1); }
    [[nodiscard]] std::size_t kernel() const { return weight_.dim(2); }
    [[nodiscard]] std::size_t stride() const { return stride_; }

    Tensor& weight() { return weight_; }
    [[nodiscard]] const Tensor& weight() const { return weight_; }
    Tensor& mask_logits() { return mask_logits_; }
    [[nodiscard]] const Tensor& mask_logits() const { return mask_logits_; }

    /// Per-channel gate vector for the given choice weights (length max_channels).
    [[nodiscard]] Tensor channel_gate(const Tensor& choice_weights) const;

private:
    std::vector<std::size_t> choices_;
    std::size_t max_channels_ = 0;
    std::size_t stride_ = 1;
    Tensor weight_;
    Tensor mask_logits_;
    Tensor gate_matrix_;  // max_channels × n_choices, entry 1 where c < f_i
};

/// Validates a choice list: non-empty, every entry >= 1, strictly monotone.
void validate_choices(const std::vector<std::size_t>& choices);

/// Checks that weights form a probability vector of the expected length.
void validate_simplex(const Tensor& weights, std::size_t expected_len, double tol = 1e-5);

class SuperNet {
public:
    SuperNet() = default;
    SuperNet(SuperNetConfig cfg, Rng& rng);

    /// `choice_weights[b]` is the simplex vector for block b.
    [[nodiscard]] ForwardResult forward(const Tensor& x, const std::vector<Tensor>& choice_weights,
                                        bool capture = false) const;

    [[nodiscard]] const SuperNetConfig& config() const { return cfg_; }
    [[nodiscard]] std::size_t num_layers() const { return blocks_.size(); }
    std::vector<MaskedConvBlock>& blocks() { return blocks_; }
    [[nodiscard]] const std::vector<MaskedConvBlock>& blocks() const { return blocks_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

    /// Conv weights and head (model weights).
    [[nodiscard]] std::vector<Tensor> weight_parameters() const;
    /// Per-block mask logits (architecture parameters).
    [[nodiscard]] std::vector<Tensor> mask_parameters() const;

    [[nodiscard]] ArchSpec spec_for(const std::vector<std::size_t>& choice_index) const;
    [[nodiscard]] ArchSpec max_width_spec() const;
    /// Plain network sharing truncated copies of this supernet's weights.
    [[nodiscard]] Network extract(const std::vector<std::size_t>& choice_index) const;

private:
    SuperNetConfig cfg_;
    std::vector<MaskedConvBlock> blocks_;
    Tensor head_w_;
    Tensor head_b_;
};

/// One-hot weight vector of length n with a 1 at `index`.
Tensor one_hot(std::size_t n, std::size_t index);

// ---------------------------------------------------------------------------
// Multiply-accumulate accounting.

/// Sum over conv blocks of C_in·C_out·K²·H_out·W_out plus the head's in·out.
std::uint64_t count_macs(const ArchSpec& spec);
/// Per-layer terms of count_macs: one per conv block, then the head.
std::vector<std::uint64_t> layer_macs(const ArchSpec& spec);
std::uint64_t count_macs(const Network& net);
/// Always throws: a supernet must be derived before it has a MAC count.
std::uint64_t count_macs(const SuperNet& net);
std::uint64_t max_macs(const SuperNet& net);

/// MAC count with each block's width replaced by its expected width
/// sum_i w_i f_i; the expected width also feeds the next block's input term.
Tensor expected_macs(const SuperNet& net, const std::vector<Tensor>& choice_weights);

std::size_t parameter_count(const ArchSpec& spec);

// ---------------------------------------------------------------------------
// Checkpoints: one line of JSON manifest, then tensor snapshots in order.

struct Checkpoint {
    nlohmann::json manifest;
    std::vector<Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace rnascl::nn

#endif  // RNASCL_NN_HPP
