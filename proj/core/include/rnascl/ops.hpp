#ifndef RNASCL_OPS_HPP
#define RNASCL_OPS_HPP

#include <cstddef>
#include <vector>

#include "rnascl/tensor.hpp"

namespace rnascl {

// Binary ops accept identical shapes, or one operand with a single element
// that is broadcast against the other. Nothing else.
enum class Elementwise { Add, Sub, Mul, Square, Relu, Exp, Log };

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // throws DomainError on non-positive input

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor stack(const std::vector<Tensor>& parts);
Tensor select(const Tensor& a, std::size_t index);  // along axis 0

enum class ConvStrategy { Direct, PatchMatrix };
void set_conv_strategy(ConvStrategy s);
ConvStrategy conv_strategy();

/// x: N×C×H×W, w: O×C×K×K. No bias.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);

enum class PoolKind { Max, Avg };
Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride);
Tensor global_avg_pool(const Tensor& x);  // N×C×H×W -> N×C

/// Multiplies channel c of an N×C×H×W tensor by s[c].
Tensor channel_scale(const Tensor& x, const Tensor& s);

/// x: N×in, w: out×in, b: out (may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Mean over the batch of -log_softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace rnascl

#endif  // RNASCL_OPS_HPP
