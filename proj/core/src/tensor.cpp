#include "rnascl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rnascl/error.hpp"

namespace rnascl {

namespace {

Precision g_precision = Precision::Float32;
thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_node_seq = 0;

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw FormatError("tensor snapshot truncated at byte " + std::to_string(in.gcount()));
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

PrecisionGuard::PrecisionGuard(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionGuard::~PrecisionGuard() { g_precision = saved_; }

double round_to_precision(double v) {
    return g_precision == Precision::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_to_precision(std::span<double> v) {
    if (g_precision != Precision::Float32) return;
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    round_to_precision(impl->data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw Error("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    auto t = detach();
    t.impl_->requires_grad = impl_->requires_grad && is_leaf();
    return t;
}

// ---------------------------------------------------------------------------

namespace {

using LeafSink = std::function<void(const std::shared_ptr<detail::TensorImpl>&, std::vector<double>&)>;
using LeafFilter = std::function<bool(const detail::TensorImpl*)>;
using NodeSink = std::function<void(const detail::Node*, const std::vector<double>&)>;

void run_backward(const Tensor& root, const LeafFilter& wants_leaf, const LeafSink& leaf_sink,
                  const NodeSink& node_sink) {
    if (!root.defined()) throw Error("backward on undefined tensor");
    if (root.numel() != 1) throw ShapeError("backward root must be scalar, got shape " + shape_str(root.shape()));
    const auto& root_impl = root.impl();
    if (!root_impl->requires_grad) throw Error("backward root does not require grad");

    std::vector<double> seed{1.0};
    if (!root_impl->grad_fn) {
        if (wants_leaf(root_impl.get())) leaf_sink(root_impl, seed);
        return;
    }

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root_impl->grad_fn.get()};
    seen.insert(stack.back());
    while (!stack.empty()) {
        auto* node = stack.back();
        stack.pop_back();
        order.push_back(node);
        for (const auto& in : node->inputs) {
            if (in->grad_fn && seen.insert(in->grad_fn.get()).second) stack.push_back(in->grad_fn.get());
        }
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

    std::unordered_map<detail::Node*, std::vector<double>> pending;
    pending[root_impl->grad_fn.get()] = std::move(seed);

    for (auto* node : order) {
        auto it = pending.find(node);
        if (it == pending.end()) continue;
        std::vector<double> grad_out = std::move(it->second);
        pending.erase(it);
        if (node_sink) node_sink(node, grad_out);

        const auto n_in = node->inputs.size();
        std::vector<bool> needs(n_in, false);
        std::vector<std::vector<double>> grad_in(n_in);
        bool any = false;
        for (std::size_t i = 0; i < n_in; ++i) {
            const auto& in = node->inputs[i];
            if (!in->requires_grad) continue;
            if (in->grad_fn || wants_leaf(in.get())) {
                needs[i] = true;
                grad_in[i].assign(in->data.size(), 0.0);
                any = true;
            }
        }
        if (!any) continue;
        node->backward(grad_out, needs, grad_in);
        for (std::size_t i = 0; i < n_in; ++i) {
            if (!needs[i]) continue;
            round_to_precision(grad_in[i]);
            const auto& in = node->inputs[i];
            if (in->grad_fn) {
                auto& buf = pending[in->grad_fn.get()];
                if (buf.empty()) {
                    buf = std::move(grad_in[i]);
                } else {
                    for (std::size_t k = 0; k < buf.size(); ++k) buf[k] += grad_in[i][k];
                }
            } else {
                leaf_sink(in, grad_in[i]);
            }
        }
    }
}

}  // namespace

void Tensor::backward() const {
    run_backward(
        *this, [](const detail::TensorImpl* leaf) { return leaf->requires_grad; },
        [](const std::shared_ptr<detail::TensorImpl>& leaf, std::vector<double>& g) {
            if (leaf->grad.empty()) {
                leaf->grad = g;
            } else {
                for (std::size_t k = 0; k < g.size(); ++k) leaf->grad[k] += g[k];
            }
            round_to_precision(leaf->grad);
        },
        nullptr);
}

std::vector<std::vector<double>> gradients(const Tensor& root, std::span<const Tensor> wrt) {
    std::vector<std::vector<double>> out(wrt.size());
    std::unordered_map<const detail::TensorImpl*, std::size_t> leaf_index;
    std::unordered_map<const detail::Node*, std::size_t> node_index;
    for (std::size_t i = 0; i < wrt.size(); ++i) {
        out[i].assign(wrt[i].numel(), 0.0);
        if (wrt[i].is_leaf()) {
            leaf_index[wrt[i].impl().get()] = i;
        } else {
            node_index[wrt[i].impl()->grad_fn.get()] = i;
        }
    }
    run_backward(
        root, [&](const detail::TensorImpl* leaf) { return leaf_index.contains(leaf); },
        [&](const std::shared_ptr<detail::TensorImpl>& leaf, std::vector<double>& g) {
            auto& dst = out[leaf_index.at(leaf.get())];
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        },
        [&](const detail::Node* node, const std::vector<double>& g) {
            auto it = node_index.find(node);
            if (it != node_index.end()) out[it->second] = g;
        });
    return out;
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> values, std::string name, std::vector<Tensor> inputs,
                   decltype(Node::backward) backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    round_to_precision(impl->data);
    bool record = false;
    if (t_grad_enabled) {
        for (const auto& in : inputs) record = record || in.requires_grad();
    }
    if (record) {
        auto node = std::make_shared<Node>();
        node->seq = ++t_node_seq;
        node->name = std::move(name);
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) node->inputs.push_back(in.impl());
        node->backward = std::move(backward);
        impl->grad_fn = std::move(node);
        impl->requires_grad = true;
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

// ---------------------------------------------------------------------------

void write_snapshot(std::ostream& out, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

Tensor read_snapshot(std::istream& in) {
    const auto rank = get_u32(in);
    if (rank > 8) throw FormatError("tensor snapshot rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    for (auto& e : shape) e = get_u32(in);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(get_u32(in)));
    return Tensor::from(std::move(shape), std::move(values));
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : t.data()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace rnascl
