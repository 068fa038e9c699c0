#include "rnascl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rnascl/error.hpp"

namespace rnascl {

using detail::make_result;

namespace {

ConvStrategy g_conv_strategy = ConvStrategy::PatchMatrix;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input");
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
    }
}

std::vector<double> copy_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// --- binary elementwise ----------------------------------------------------

enum class Bin { Add, Sub, Mul };

Tensor binary(Bin op, const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined()) throw ShapeError("binary op: missing operand");
    const bool same = a.shape() == b.shape();
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!same && !a_scalar && !b_scalar) {
        throw ShapeError("shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const Shape out_shape = same ? a.shape() : (a_scalar ? b.shape() : a.shape());
    const auto n = shape_numel(out_shape);
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t as = a.numel() == n ? 1 : 0;
    const std::size_t bs = b.numel() == n ? 1 : 0;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i * as];
        const double y = bd[i * bs];
        out[i] = op == Bin::Add ? x + y : op == Bin::Sub ? x - y : x * y;
    }
    const char* name = op == Bin::Add ? "add" : op == Bin::Sub ? "sub" : "mul";
    return make_result(out_shape, std::move(out), name, {a, b},
                       [op, as, bs, a, b](std::span<const double> g, const std::vector<bool>& needs,
                                          std::vector<std::vector<double>>& gi) {
                           const auto ad = a.data();
                           const auto bd = b.data();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               double da = g[i];
                               double db = op == Bin::Sub ? -g[i] : g[i];
                               if (op == Bin::Mul) {
                                   da = g[i] * bd[i * bs];
                                   db = g[i] * ad[i * as];
                               }
                               if (needs[0]) gi[0][i * as] += da;
                               if (needs[1]) gi[1][i * bs] += db;
                           }
                       });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
    if (!a.defined()) throw ShapeError(std::string(name) + ": undefined input");
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
    auto saved_out = out;
    return make_result(a.shape(), std::move(out), name, {a},
                       [a, deriv, y = std::move(saved_out)](std::span<const double> g, const std::vector<bool>&,
                                                            std::vector<std::vector<double>>& gi) {
                           const auto ad = a.data();
                           for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] = g[i] * deriv(ad[i], y[i]);
                       });
}

// --- gemm kernels ----------------------------------------------------------

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

// c[m×n] += a[k×m]^T · b[k×n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[p * m + i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeom {
    std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
    [[nodiscard]] std::size_t patch() const { return c * k * k; }
    [[nodiscard]] std::size_t plane() const { return ho * wo; }
};

void im2col(const ConvGeom& g, const double* x, double* cols) {
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = cols + ((ci * g.k + ky) * g.k + kx) * g.plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.wo + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeom& g, const double* cols, double* gx) {
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols + ((ci * g.k + ky) * g.k + kx) * g.plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        gx[(ci * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

// Visits every (output position, input position, weight index) triple.
template <typename F>
void conv_direct_visit(const ConvGeom& g, F&& f) {
    for (std::size_t ni = 0; ni < g.n; ++ni) {
        for (std::size_t oc = 0; oc < g.o; ++oc) {
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
                for (std::size_t ox = 0; ox < g.wo; ++ox) {
                    const std::size_t out_idx = ((ni * g.o + oc) * g.ho + oy) * g.wo + ox;
                    for (std::size_t ci = 0; ci < g.c; ++ci) {
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            for (std::size_t kx = 0; kx < g.k; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                                const std::size_t in_idx = ((ni * g.c + ci) * g.h + iy) * g.w + ix;
                                const std::size_t w_idx = ((oc * g.c + ci) * g.k + ky) * g.k + kx;
                                f(out_idx, in_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
    switch (op) {
        case Elementwise::Add: return binary(Bin::Add, a, b);
        case Elementwise::Sub: return binary(Bin::Sub, a, b);
        case Elementwise::Mul: return binary(Bin::Mul, a, b);
        case Elementwise::Square:
            return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
        case Elementwise::Relu:
            return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
        case Elementwise::Exp:
            return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
        case Elementwise::Log:
            for (double v : a.data()) {
                if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
            }
            return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    }
    throw Error("unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::Mul, a, b); }
Tensor square(const Tensor& a) { return elementwise(Elementwise::Square, a); }
Tensor relu(const Tensor& a) { return elementwise(Elementwise::Relu, a); }
Tensor exp(const Tensor& a) { return elementwise(Elementwise::Exp, a); }
Tensor log(const Tensor& a) { return elementwise(Elementwise::Log, a); }

Tensor scale(const Tensor& a, double factor) {
    return unary(a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, "sum", {a},
                       [](std::span<const double> g, const std::vector<bool>&, std::vector<std::vector<double>>& gi) {
                           std::fill(gi[0].begin(), gi[0].end(), g[0]);
                       });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const auto len = a.dim(axis);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(outer * inner, 0.0);
    const auto ad = a.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += ad[(o * len + l) * inner + i];
    return make_result(out_shape, std::move(out), "sum_axis", {a},
                       [outer, len, inner](std::span<const double> g, const std::vector<bool>&,
                                           std::vector<std::vector<double>>& gi) {
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < inner; ++i)
                                       gi[0][(o * len + l) * inner + i] = g[o * inner + i];
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    }
    return make_result(std::move(shape), copy_of(a), "reshape", {a},
                       [](std::span<const double> g, const std::vector<bool>&, std::vector<std::vector<double>>& gi) {
                           std::copy(g.begin(), g.end(), gi[0].begin());
                       });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("stack of zero tensors");
    const Shape& part_shape = parts.front().shape();
    for (const auto& p : parts) {
        if (p.shape() != part_shape) {
            throw ShapeError("stack: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(part_shape));
        }
    }
    const auto m = parts.front().numel();
    std::vector<double> out;
    out.reserve(m * parts.size());
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    Shape shape{parts.size()};
    shape.insert(shape.end(), part_shape.begin(), part_shape.end());
    return make_result(shape, std::move(out), "stack", parts,
                       [m](std::span<const double> g, const std::vector<bool>& needs,
                           std::vector<std::vector<double>>& gi) {
                           for (std::size_t k = 0; k < gi.size(); ++k) {
                               if (needs[k]) std::copy(g.begin() + k * m, g.begin() + (k + 1) * m, gi[k].begin());
                           }
                       });
}

Tensor select(const Tensor& a, std::size_t index) {
    if (a.rank() == 0 || index >= a.dim(0)) {
        throw ShapeError("select index " + std::to_string(index) + " out of range for " + shape_str(a.shape()));
    }
    Shape shape(a.shape().begin() + 1, a.shape().end());
    const auto m = shape_numel(shape);
    std::vector<double> out(a.data().begin() + index * m, a.data().begin() + (index + 1) * m);
    return make_result(shape, std::move(out), "select", {a},
                       [index, m](std::span<const double> g, const std::vector<bool>&,
                                  std::vector<std::vector<double>>& gi) {
                           std::copy(g.begin(), g.end(), gi[0].begin() + index * m);
                       });
}

// --- convolution -------------------------------------------------------------

void set_conv_strategy(ConvStrategy s) { g_conv_strategy = s; }
ConvStrategy conv_strategy() { return g_conv_strategy; }

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    }
    if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
    if (stride < 1) throw DomainError("conv2d: stride must be >= 1");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, padding, 0, 0};
    if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
        throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " + shape_str(x.shape()));
    }
    g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

    std::vector<double> out(g.n * g.o * g.plane(), 0.0);
    const double* xd = x.data().data();
    const double* wd = w.data().data();

    if (g_conv_strategy == ConvStrategy::Direct) {
        conv_direct_visit(g, [&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += xd[ii] * wd[wi]; });
        return make_result({g.n, g.o, g.ho, g.wo}, std::move(out), "conv2d", {x, w},
                           [g, x, w](std::span<const double> go, const std::vector<bool>& needs,
                                     std::vector<std::vector<double>>& gi) {
                               const double* xd = x.data().data();
                               const double* wd = w.data().data();
                               conv_direct_visit(g, [&](std::size_t oi, std::size_t ii, std::size_t wi) {
                                   if (needs[0]) gi[0][ii] += go[oi] * wd[wi];
                                   if (needs[1]) gi[1][wi] += go[oi] * xd[ii];
                               });
                           });
    }

    const bool keep_cols = grad_enabled() && (x.requires_grad() || w.requires_grad());
    const auto col_size = g.patch() * g.plane();
    std::vector<double> cols(keep_cols ? g.n * col_size : col_size);
    for (std::size_t ni = 0; ni < g.n; ++ni) {
        double* c = cols.data() + (keep_cols ? ni * col_size : 0);
        im2col(g, xd + ni * g.c * g.h * g.w, c);
        gemm_nn(g.o, g.patch(), g.plane(), wd, c, out.data() + ni * g.o * g.plane());
    }
    if (!keep_cols) cols.clear();
    return make_result({g.n, g.o, g.ho, g.wo}, std::move(out), "conv2d", {x, w},
                       [g, w, cols = std::move(cols), col_size](std::span<const double> go,
                                                                const std::vector<bool>& needs,
                                                                std::vector<std::vector<double>>& gi) {
                           const double* wd = w.data().data();
                           std::vector<double> gcols(needs[0] ? col_size : 0);
                           for (std::size_t ni = 0; ni < g.n; ++ni) {
                               const double* gout = go.data() + ni * g.o * g.plane();
                               if (needs[1]) {
                                   gemm_nt(g.o, g.plane(), g.patch(), gout, cols.data() + ni * col_size,
                                           gi[1].data());
                               }
                               if (needs[0]) {
                                   std::fill(gcols.begin(), gcols.end(), 0.0);
                                   gemm_tn(g.patch(), g.o, g.plane(), wd, gout, gcols.data());
                                   col2im(g, gcols.data(), gi[0].data() + ni * g.c * g.h * g.w);
                               }
                           }
                       });
}

// --- pooling -------------------------------------------------------------------

Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride) {
    require_rank(x, 4, "pool2d");
    if (k < 1 || stride < 1) throw DomainError("pool2d: window and stride must be >= 1");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k > h || k > w) throw ShapeError("pool2d: window " + std::to_string(k) + " exceeds input " + shape_str(x.shape()));
    const auto ho = (h - k) / stride + 1;
    const auto wo = (w - k) / stride + 1;
    std::vector<double> out(n * c * ho * wo);
    std::vector<std::size_t> argmax(kind == PoolKind::Max ? out.size() : 0);
    const auto xd = x.data();
    const double inv = 1.0 / static_cast<double>(k * k);
    for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                const auto oi = (p * ho + oy) * wo + ox;
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                double acc = 0.0;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ii = (p * h + oy * stride + ky) * w + ox * stride + kx;
                        if (xd[ii] > best) {
                            best = xd[ii];
                            best_i = ii;
                        }
                        acc += xd[ii];
                    }
                }
                if (kind == PoolKind::Max) {
                    out[oi] = best;
                    argmax[oi] = best_i;
                } else {
                    out[oi] = acc * inv;
                }
            }
        }
    }
    return make_result({n, c, ho, wo}, std::move(out), kind == PoolKind::Max ? "max_pool" : "avg_pool", {x},
                       [=, argmax = std::move(argmax)](std::span<const double> go, const std::vector<bool>&,
                                                       std::vector<std::vector<double>>& gi) {
                           if (kind == PoolKind::Max) {
                               for (std::size_t oi = 0; oi < go.size(); ++oi) gi[0][argmax[oi]] += go[oi];
                               return;
                           }
                           for (std::size_t p = 0; p < n * c; ++p)
                               for (std::size_t oy = 0; oy < ho; ++oy)
                                   for (std::size_t ox = 0; ox < wo; ++ox) {
                                       const double gv = go[(p * ho + oy) * wo + ox] * inv;
                                       for (std::size_t ky = 0; ky < k; ++ky)
                                           for (std::size_t kx = 0; kx < k; ++kx)
                                               gi[0][(p * h + oy * stride + ky) * w + ox * stride + kx] += gv;
                                   }
                       });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(n * c, 0.0);
    const auto xd = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += xd[p * plane + i];
        out[p] = s / static_cast<double>(plane);
    }
    return make_result({n, c}, std::move(out), "global_avg_pool", {x},
                       [plane](std::span<const double> go, const std::vector<bool>&,
                               std::vector<std::vector<double>>& gi) {
                           const double inv = 1.0 / static_cast<double>(plane);
                           for (std::size_t p = 0; p < go.size(); ++p)
                               for (std::size_t i = 0; i < plane; ++i) gi[0][p * plane + i] = go[p] * inv;
                       });
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
    require_rank(x, 4, "channel_scale");
    if (s.numel() != x.dim(1)) {
        throw ShapeError("channel_scale: " + std::to_string(s.numel()) + " scales for " + std::to_string(x.dim(1)) +
                         " channels");
    }
    const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    const auto sd = s.data();
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < plane; ++i) {
                const auto idx = (ni * c + ci) * plane + i;
                out[idx] = xd[idx] * sd[ci];
            }
    return make_result(x.shape(), std::move(out), "channel_scale", {x, s},
                       [=](std::span<const double> go, const std::vector<bool>& needs,
                           std::vector<std::vector<double>>& gi) {
                           const auto xd = x.data();
                           const auto sd = s.data();
                           for (std::size_t ni = 0; ni < n; ++ni)
                               for (std::size_t ci = 0; ci < c; ++ci)
                                   for (std::size_t i = 0; i < plane; ++i) {
                                       const auto idx = (ni * c + ci) * plane + i;
                                       if (needs[0]) gi[0][idx] = go[idx] * sd[ci];
                                       if (needs[1]) gi[1][ci] += go[idx] * xd[idx];
                                   }
                       });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("linear: input width " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
    }
    const auto n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (b.defined() && b.numel() != out_dim) throw ShapeError("linear: bias " + shape_str(b.shape()));
    std::vector<double> out(n * out_dim, 0.0);
    gemm_nt(n, in, out_dim, x.data().data(), w.data().data(), out.data());
    if (b.defined()) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += b.data()[j];
    }
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result({n, out_dim}, std::move(out), "linear", inputs,
                       [=](std::span<const double> go, const std::vector<bool>& needs,
                           std::vector<std::vector<double>>& gi) {
                           if (needs[0]) gemm_nn(n, out_dim, in, go.data(), w.data().data(), gi[0].data());
                           if (needs[1]) gemm_tn(out_dim, n, in, go.data(), x.data().data(), gi[1].data());
                           if (needs.size() > 2 && needs[2]) {
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < out_dim; ++j) gi[2][j] += go[i * out_dim + j];
                           }
                       });
}

// --- softmax family ----------------------------------------------------------

namespace {

struct AxisGeom {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisGeom axis_geom(const Tensor& x, std::size_t axis, const char* op) {
    if (axis >= x.rank()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
    AxisGeom g;
    for (std::size_t i = 0; i < axis; ++i) g.outer *= x.dim(i);
    g.len = x.dim(axis);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) g.inner *= x.dim(i);
    return g;
}

// Writes stabilized softmax (or log-softmax) of x into out.
void softmax_kernel(const AxisGeom& g, std::span<const double> x, std::vector<double>& out, bool log_space) {
    for (std::size_t o = 0; o < g.outer; ++o) {
        for (std::size_t i = 0; i < g.inner; ++i) {
            auto at = [&](std::size_t l) { return (o * g.len + l) * g.inner + i; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < g.len; ++l) mx = std::max(mx, x[at(l)]);
            double z = 0.0;
            for (std::size_t l = 0; l < g.len; ++l) z += std::exp(x[at(l)] - mx);
            const double log_z = std::log(z);
            for (std::size_t l = 0; l < g.len; ++l) {
                out[at(l)] = log_space ? x[at(l)] - mx - log_z : std::exp(x[at(l)] - mx) / z;
            }
        }
    }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto g = axis_geom(x, axis, "softmax");
    std::vector<double> out(x.numel());
    softmax_kernel(g, x.data(), out, false);
    auto y = out;
    return make_result(x.shape(), std::move(out), "softmax", {x},
                       [g, y = std::move(y)](std::span<const double> go, const std::vector<bool>&,
                                             std::vector<std::vector<double>>& gi) {
                           for (std::size_t o = 0; o < g.outer; ++o)
                               for (std::size_t i = 0; i < g.inner; ++i) {
                                   auto at = [&](std::size_t l) { return (o * g.len + l) * g.inner + i; };
                                   double dot = 0.0;
                                   for (std::size_t l = 0; l < g.len; ++l) dot += go[at(l)] * y[at(l)];
                                   for (std::size_t l = 0; l < g.len; ++l) gi[0][at(l)] = y[at(l)] * (go[at(l)] - dot);
                               }
                       });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto g = axis_geom(x, axis, "log_softmax");
    std::vector<double> out(x.numel());
    softmax_kernel(g, x.data(), out, true);
    auto y = out;
    return make_result(x.shape(), std::move(out), "log_softmax", {x},
                       [g, y = std::move(y)](std::span<const double> go, const std::vector<bool>&,
                                             std::vector<std::vector<double>>& gi) {
                           for (std::size_t o = 0; o < g.outer; ++o)
                               for (std::size_t i = 0; i < g.inner; ++i) {
                                   auto at = [&](std::size_t l) { return (o * g.len + l) * g.inner + i; };
                                   double s = 0.0;
                                   for (std::size_t l = 0; l < g.len; ++l) s += go[at(l)];
                                   for (std::size_t l = 0; l < g.len; ++l)
                                       gi[0][at(l)] = go[at(l)] - std::exp(y[at(l)]) * s;
                               }
                       });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "cross_entropy");
    const auto n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range");
    }
    const auto lp = log_softmax(logits, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s -= lp.data()[i * k + static_cast<std::size_t>(labels[i])];
    return make_result({}, {s / static_cast<double>(n)}, "nll", {lp},
                       [n, k, labels](std::span<const double> go, const std::vector<bool>&,
                                      std::vector<std::vector<double>>& gi) {
                           const double v = -go[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) gi[0][i * k + static_cast<std::size_t>(labels[i])] = v;
                       });
}

}  // namespace rnascl
