#include "rnascl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"

namespace rnascl::nn {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride) {
    const std::size_t pad = k / 2;
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

// --- ArchSpec ------------------------------------------------------------------

nlohmann::json to_json(const ArchSpec& spec) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : spec.blocks) {
        blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}});
    }
    return {{"in_channels", spec.in_channels},
            {"input_size", spec.input_size},
            {"num_classes", spec.num_classes},
            {"blocks", blocks}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
    ArchSpec spec;
    try {
        spec.in_channels = j.at("in_channels").get<std::size_t>();
        spec.input_size = j.at("input_size").get<std::size_t>();
        spec.num_classes = j.at("num_classes").get<std::size_t>();
        for (const auto& b : j.at("blocks")) {
            spec.blocks.push_back({b.at("out_channels").get<std::size_t>(), b.at("kernel").get<std::size_t>(),
                                   b.at("stride").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("architecture description: ") + e.what());
    }
    return spec;
}

std::vector<std::size_t> output_sizes(const ArchSpec& spec) {
    std::vector<std::size_t> sizes;
    std::size_t s = spec.input_size;
    for (const auto& b : spec.blocks) {
        s = conv_out(s, b.kernel, b.stride);
        sizes.push_back(s);
    }
    return sizes;
}

// --- Network -------------------------------------------------------------------

Tensor ConvBlock::forward(const Tensor& x) const { return relu(conv2d(x, weight, stride, padding)); }

Network::Network(ArchSpec spec, Rng& rng) : spec_(std::move(spec)) {
    if (spec_.blocks.empty()) throw ConfigError("network needs at least one conv block");
    std::size_t in = spec_.in_channels;
    for (const auto& b : spec_.blocks) {
        if (b.out_channels == 0 || b.kernel == 0 || b.stride == 0) throw ConfigError("conv block extents must be positive");
        blocks_.push_back({he_normal({b.out_channels, in, b.kernel, b.kernel}, in * b.kernel * b.kernel, rng), b.stride,
                           b.kernel / 2});
        in = b.out_channels;
    }
    head_w_ = uniform_init({spec_.num_classes, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    head_b_ = Tensor::zeros({spec_.num_classes}, true);
}

void Network::check_input(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.input_size ||
        x.dim(3) != spec_.input_size) {
        throw ShapeError("network expects N×" + std::to_string(spec_.in_channels) + "×" +
                         std::to_string(spec_.input_size) + "×" + std::to_string(spec_.input_size) + " input, got " +
                         shape_str(x.shape()));
    }
}

ForwardResult Network::forward(const Tensor& x, bool capture) const {
    check_input(x);
    ForwardResult r;
    Tensor h = add_scalar(x, -kInputCenter);
    for (const auto& b : blocks_) {
        h = b.forward(h);
        if (capture) r.activations.push_back(h);
    }
    r.logits = linear(global_avg_pool(h), head_w_, head_b_);
    return r;
}

std::vector<Tensor> Network::parameters() const {
    std::vector<Tensor> p;
    for (const auto& b : blocks_) p.push_back(b.weight);
    p.push_back(head_w_);
    p.push_back(head_b_);
    return p;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

void Network::freeze() {
    for (auto& p : parameters()) {
        auto t = p;
        t.set_requires_grad(false);
    }
}

Network Network::clone() const {
    std::vector<Tensor> copies;
    for (const auto& p : parameters()) copies.push_back(p.clone());
    return from_parameters(spec_, copies);
}

std::uint64_t Network::checksum() const {
    std::uint64_t h = 0;
    for (const auto& p : parameters()) h = h * 1099511628211ULL ^ rnascl::checksum(p);
    return h;
}

Network Network::from_parameters(ArchSpec spec, const std::vector<Tensor>& params) {
    Network net;
    net.spec_ = std::move(spec);
    if (params.size() != net.spec_.blocks.size() + 2) {
        throw FormatError("network needs " + std::to_string(net.spec_.blocks.size() + 2) + " parameter tensors, got " +
                          std::to_string(params.size()));
    }
    std::size_t in = net.spec_.in_channels;
    for (std::size_t i = 0; i < net.spec_.blocks.size(); ++i) {
        const auto& b = net.spec_.blocks[i];
        const Shape expect{b.out_channels, in, b.kernel, b.kernel};
        if (params[i].shape() != expect) {
            throw ShapeError("block " + std::to_string(i) + " weight " + shape_str(params[i].shape()) + ", expected " +
                             shape_str(expect));
        }
        net.blocks_.push_back({params[i], b.stride, b.kernel / 2});
        in = b.out_channels;
    }
    net.head_w_ = params[net.spec_.blocks.size()];
    net.head_b_ = params[net.spec_.blocks.size() + 1];
    if (net.head_w_.shape() != Shape{net.spec_.num_classes, in} || net.head_b_.shape() != Shape{net.spec_.num_classes}) {
        throw ShapeError("classifier head shape mismatch");
    }
    return net;
}

// --- masked blocks -------------------------------------------------------------

void validate_choices(const std::vector<std::size_t>& choices) {
    if (choices.empty()) throw ConfigError("channel choice list is empty");
    for (auto c : choices) {
        if (c == 0) throw ConfigError("channel choices must be >= 1");
    }
    const bool inc = std::adjacent_find(choices.begin(), choices.end(), std::greater_equal<>()) == choices.end();
    const bool dec = std::adjacent_find(choices.begin(), choices.end(), std::less_equal<>()) == choices.end();
    if (!inc && !dec) throw ConfigError("channel choices must be sorted and unique");
}

void validate_simplex(const Tensor& weights, std::size_t expected_len, double tol) {
    if (!weights.defined() || weights.numel() != expected_len) {
        throw ShapeError("expected " + std::to_string(expected_len) + " choice weights, got " +
                         (weights.defined() ? std::to_string(weights.numel()) : std::string("none")));
    }
    double s = 0.0;
    for (double v : weights.data()) {
        if (v < 0.0) throw DomainError("choice weights must be non-negative");
        s += v;
    }
    if (std::abs(s - 1.0) > tol) throw DomainError("choice weights sum to " + std::to_string(s) + ", not 1");
}

MaskedConvBlock::MaskedConvBlock(std::size_t in_channels, std::vector<std::size_t> choices, std::size_t kernel,
                                 std::size_t stride, Rng& rng)
    : choices_(std::move(choices)), stride_(stride) {
    validate_choices(choices_);
    max_channels_ = *std::max_element(choices_.begin(), choices_.end());
    weight_ = he_normal({max_channels_, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
    mask_logits_ = Tensor::zeros({choices_.size()}, true);
    std::vector<double> m(max_channels_ * choices_.size(), 0.0);
    for (std::size_t c = 0; c < max_channels_; ++c)
        for (std::size_t i = 0; i < choices_.size(); ++i) m[c * choices_.size() + i] = c < choices_[i] ? 1.0 : 0.0;
    gate_matrix_ = Tensor::from({max_channels_, choices_.size()}, std::move(m));
}

Tensor MaskedConvBlock::channel_gate(const Tensor& choice_weights) const {
    validate_simplex(choice_weights, choices_.size());
    const auto row = reshape(choice_weights, {1, choices_.size()});
    return reshape(linear(row, gate_matrix_), {max_channels_});
}

Tensor MaskedConvBlock::forward(const Tensor& x, const Tensor& choice_weights) const {
    const auto gate = channel_gate(choice_weights);
    return channel_scale(relu(conv2d(x, weight_, stride_, kernel() / 2)), gate);
}

// --- SuperNet ------------------------------------------------------------------

nlohmann::json to_json(const SuperNetConfig& cfg) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : cfg.stages) stages.push_back({{"depth", s.depth}, {"choices", s.choices}, {"stride", s.stride}});
    return {{"in_channels", cfg.in_channels},
            {"input_size", cfg.input_size},
            {"num_classes", cfg.num_classes},
            {"kernel", cfg.kernel},
            {"stages", stages}};
}

SuperNetConfig supernet_from_json(const nlohmann::json& j) {
    SuperNetConfig cfg;
    try {
        cfg.in_channels = j.at("in_channels").get<std::size_t>();
        cfg.input_size = j.at("input_size").get<std::size_t>();
        cfg.num_classes = j.at("num_classes").get<std::size_t>();
        cfg.kernel = j.at("kernel").get<std::size_t>();
        for (const auto& s : j.at("stages")) {
            cfg.stages.push_back({s.at("depth").get<std::size_t>(), s.at("choices").get<std::vector<std::size_t>>(),
                                  s.at("stride").get<std::size_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("supernet description: ") + e.what());
    }
    return cfg;
}

SuperNet::SuperNet(SuperNetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.stages.empty()) throw ConfigError("supernet needs at least one stage");
    std::size_t in = cfg_.in_channels;
    for (const auto& stage : cfg_.stages) {
        if (stage.depth == 0) throw ConfigError("stage depth must be >= 1");
        for (std::size_t d = 0; d < stage.depth; ++d) {
            blocks_.emplace_back(in, stage.choices, cfg_.kernel, d == 0 ? stage.stride : 1, rng);
            in = blocks_.back().max_channels();
        }
    }
    head_w_ = uniform_init({cfg_.num_classes, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    head_b_ = Tensor::zeros({cfg_.num_classes}, true);
}

ForwardResult SuperNet::forward(const Tensor& x, const std::vector<Tensor>& choice_weights, bool capture) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_size || x.dim(3) != cfg_.input_size) {
        throw ShapeError("supernet input shape " + shape_str(x.shape()));
    }
    if (choice_weights.size() != blocks_.size()) {
        throw ShapeError("supernet has " + std::to_string(blocks_.size()) + " blocks, got " +
                         std::to_string(choice_weights.size()) + " weight vectors");
    }
    ForwardResult r;
    Tensor h = add_scalar(x, -kInputCenter);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        h = blocks_[b].forward(h, choice_weights[b]);
        if (capture) r.activations.push_back(h);
    }
    r.logits = linear(global_avg_pool(h), head_w_, head_b_);
    return r;
}

std::vector<Tensor> SuperNet::weight_parameters() const {
    std::vector<Tensor> p;
    for (const auto& b : blocks_) p.push_back(b.weight());
    p.push_back(head_w_);
    p.push_back(head_b_);
    return p;
}

std::vector<Tensor> SuperNet::mask_parameters() const {
    std::vector<Tensor> p;
    for (const auto& b : blocks_) p.push_back(b.mask_logits());
    return p;
}

ArchSpec SuperNet::spec_for(const std::vector<std::size_t>& choice_index) const {
    if (choice_index.size() != blocks_.size()) throw ShapeError("one choice index per block required");
    ArchSpec spec{cfg_.in_channels, cfg_.input_size, cfg_.num_classes, {}};
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        if (choice_index[b] >= blocks_[b].choices().size()) throw ShapeError("choice index out of range");
        spec.blocks.push_back({blocks_[b].choices()[choice_index[b]], blocks_[b].kernel(), blocks_[b].stride()});
    }
    return spec;
}

ArchSpec SuperNet::max_width_spec() const {
    ArchSpec spec{cfg_.in_channels, cfg_.input_size, cfg_.num_classes, {}};
    for (const auto& b : blocks_) spec.blocks.push_back({b.max_channels(), b.kernel(), b.stride()});
    return spec;
}

Network SuperNet::extract(const std::vector<std::size_t>& choice_index) const {
    const auto spec = spec_for(choice_index);
    std::vector<Tensor> params;
    std::size_t in = cfg_.in_channels;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& w = blocks_[b].weight();
        const auto out = spec.blocks[b].out_channels;
        const auto k = w.dim(2);
        const auto full_in = w.dim(1);
        std::vector<double> v;
        v.reserve(out * in * k * k);
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t i = 0; i < in; ++i)
                for (std::size_t t = 0; t < k * k; ++t) v.push_back(w.data()[(o * full_in + i) * k * k + t]);
        params.push_back(Tensor::from({out, in, k, k}, std::move(v), true));
        in = out;
    }
    const auto full_in = head_w_.dim(1);
    std::vector<double> hw;
    for (std::size_t c = 0; c < cfg_.num_classes; ++c)
        for (std::size_t i = 0; i < in; ++i) hw.push_back(head_w_.data()[c * full_in + i]);
    params.push_back(Tensor::from({cfg_.num_classes, in}, std::move(hw), true));
    params.push_back(head_b_.clone());
    return Network::from_parameters(spec, params);
}

Tensor one_hot(std::size_t n, std::size_t index) {
    if (index >= n) throw ShapeError("one_hot index out of range");
    std::vector<double> v(n, 0.0);
    v[index] = 1.0;
    return Tensor::from({n}, std::move(v));
}

// --- MAC accounting ------------------------------------------------------------

std::vector<std::uint64_t> layer_macs(const ArchSpec& spec) {
    std::vector<std::uint64_t> macs;
    std::uint64_t in = spec.in_channels;
    std::size_t size = spec.input_size;
    for (const auto& b : spec.blocks) {
        size = conv_out(size, b.kernel, b.stride);
        macs.push_back(in * b.out_channels * b.kernel * b.kernel * size * size);
        in = b.out_channels;
    }
    macs.push_back(in * spec.num_classes);
    return macs;
}

std::uint64_t count_macs(const ArchSpec& spec) {
    std::uint64_t total = 0;
    for (auto m : layer_macs(spec)) total += m;
    return total;
}

std::uint64_t count_macs(const Network& net) { return count_macs(net.spec()); }

std::uint64_t count_macs(const SuperNet&) {
    throw PhaseOrderError("MAC count requested on an undecided supernet; derive an architecture first");
}

std::uint64_t max_macs(const SuperNet& net) { return count_macs(net.max_width_spec()); }

Tensor expected_macs(const SuperNet& net, const std::vector<Tensor>& choice_weights) {
    const auto& blocks = net.blocks();
    if (choice_weights.size() != blocks.size()) throw ShapeError("one weight vector per block required");
    Tensor in_channels = Tensor::scalar(static_cast<double>(net.config().in_channels));
    Tensor total = Tensor::scalar(0.0);
    std::size_t size = net.config().input_size;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& blk = blocks[b];
        validate_simplex(choice_weights[b], blk.choices().size());
        std::vector<double> f(blk.choices().begin(), blk.choices().end());
        const auto n = f.size();
        const auto widths = Tensor::from({n}, std::move(f));
        const Tensor out_channels = sum(mul(choice_weights[b], widths));
        size = conv_out(size, blk.kernel(), blk.stride());
        const double spatial = static_cast<double>(blk.kernel() * blk.kernel() * size * size);
        total = add(total, scale(mul(in_channels, out_channels), spatial));
        in_channels = out_channels;
    }
    return add(total, scale(in_channels, static_cast<double>(net.config().num_classes)));
}

std::size_t parameter_count(const ArchSpec& spec) {
    std::size_t n = 0;
    std::size_t in = spec.in_channels;
    for (const auto& b : spec.blocks) {
        n += b.out_channels * in * b.kernel * b.kernel;
        in = b.out_channels;
    }
    return n + spec.num_classes * in + spec.num_classes;
}

// --- checkpoints ---------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    auto manifest = ckpt.manifest;
    manifest["tensor_count"] = ckpt.tensors.size();
    out << manifest.dump() << '\n';
    for (const auto& t : ckpt.tensors) write_snapshot(out, t);
    if (!out) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing manifest line at byte 0");
    Checkpoint ckpt;
    try {
        ckpt.manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad manifest: " + e.what());
    }
    const auto count = ckpt.manifest.value("tensor_count", std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const auto offset = static_cast<long long>(in.tellg());
        try {
            ckpt.tensors.push_back(read_snapshot(in));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": tensor " + std::to_string(i) + " at byte " + std::to_string(offset) +
                              ": " + e.what());
        }
    }
    return ckpt;
}

void save_network(const std::filesystem::path& path, const Network& net) {
    save_checkpoint(path, {{{"kind", "network"}, {"arch", to_json(net.spec())}}, net.parameters()});
}

Network load_network(const std::filesystem::path& path) {
    auto ckpt = load_checkpoint(path);
    if (ckpt.manifest.value("kind", "") != "network") throw FormatError(path.string() + ": not a network checkpoint");
    for (auto& t : ckpt.tensors) t.set_requires_grad(true);
    return Network::from_parameters(arch_from_json(ckpt.manifest.at("arch")), ckpt.tensors);
}

}  // namespace rnascl::nn
