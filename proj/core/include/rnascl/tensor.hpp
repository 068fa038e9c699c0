#ifndef RNASCL_TENSOR_HPP
#define RNASCL_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rnascl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Arithmetic precision. Values are stored as double; in Float32 mode every op
// rounds its outputs (and the gradients it produces) to single precision, so
// results carry 32-bit semantics. Float64 is used for gradient checking.
enum class Precision { Float32, Float64 };

void set_precision(Precision p);
Precision precision();

class PrecisionGuard {
public:
    explicit PrecisionGuard(Precision p);
    ~PrecisionGuard();
    PrecisionGuard(const PrecisionGuard&) = delete;
    PrecisionGuard& operator=(const PrecisionGuard&) = delete;

private:
    Precision saved_;
};

/// Rounds to the active precision.
double round_to_precision(double v);
void round_to_precision(std::span<double> v);

// Graph recording is per thread. While disabled, ops produce plain values.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded op. `backward` receives the gradient of the op's output and
// fills `grad_inputs[i]` for every input with `needs[i]` set; the buffers are
// pre-sized and zeroed.
struct Node {
    std::uint64_t seq = 0;
    std::string name;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::function<void(std::span<const double> grad_out,
                       const std::vector<bool>& needs,
                       std::vector<std::vector<double>>& grad_inputs)>
        backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Dense row-major tensor participating in reverse-mode differentiation.
///
/// A Tensor is a handle: copies share storage and graph position. Use
/// clone() for an independent leaf with the same values.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    [[nodiscard]] bool defined() const { return impl_ != nullptr; }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const;
    [[nodiscard]] std::size_t numel() const;

    [[nodiscard]] std::span<const double> data() const;
    // Writes bypass the graph; only use on leaves.
    [[nodiscard]] std::span<double> mutable_data();
    [[nodiscard]] double item() const;
    [[nodiscard]] double at(std::size_t flat_index) const { return data()[flat_index]; }

    [[nodiscard]] bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    [[nodiscard]] bool is_leaf() const;

    [[nodiscard]] bool has_grad() const;
    [[nodiscard]] std::span<const double> grad() const;
    [[nodiscard]] std::span<double> mutable_grad();
    void zero_grad();

    [[nodiscard]] Tensor detach() const;
    [[nodiscard]] Tensor clone() const;

    /// Accumulates d(this)/d(leaf) into every requires_grad leaf reachable
    /// from this scalar. The graph is retained, so calling twice doubles grads.
    void backward() const;

    [[nodiscard]] const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradient of scalar `root` with respect to each of `wrt`, without touching
/// any leaf's stored grad. Entries for tensors not reachable are all-zero.
std::vector<std::vector<double>> gradients(const Tensor& root, std::span<const Tensor> wrt);

namespace detail {

// Builds the result tensor of an op and, when recording, attaches a Node.
Tensor make_result(Shape shape,
                   std::vector<double> values,
                   std::string name,
                   std::vector<Tensor> inputs,
                   decltype(Node::backward) backward);

}  // namespace detail

// Snapshot: u32 rank, u32 extents, then little-endian float32 values.
void write_snapshot(std::ostream& out, const Tensor& t);
Tensor read_snapshot(std::istream& in);

/// Order-sensitive FNV-1a checksum over the float64 bit patterns.
std::uint64_t checksum(const Tensor& t);

}  // namespace rnascl

#endif  // RNASCL_TENSOR_HPP
