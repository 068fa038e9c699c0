#include "rnascl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rnascl/error.hpp"
#include "rnascl/gumbel.hpp"
#include "rnascl/ops.hpp"

namespace rnascl::distill {

using detail::make_result;

Tensor attention_maps(const Tensor& a) {
    if (a.rank() != 4) throw ShapeError("attention_maps expects N×C×H×W, got " + shape_str(a.shape()));
    const auto n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
    std::vector<double> out(n * plane, 0.0);
    const auto ad = a.data();
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t p = 0; p < plane; ++p) {
                const double v = ad[(ni * c + ci) * plane + p];
                out[ni * plane + p] += v * v;
            }
    return make_result({n, a.dim(2), a.dim(3)}, std::move(out), "attention_map", {a},
                       [a, n, c, plane](std::span<const double> g, const std::vector<bool>&,
                                        std::vector<std::vector<double>>& gi) {
                           const auto ad = a.data();
                           for (std::size_t ni = 0; ni < n; ++ni)
                               for (std::size_t ci = 0; ci < c; ++ci)
                                   for (std::size_t p = 0; p < plane; ++p) {
                                       const auto idx = (ni * c + ci) * plane + p;
                                       gi[0][idx] = 2.0 * ad[idx] * g[ni * plane + p];
                                   }
                       });
}

Tensor attention_map(const Tensor& activation) {
    if (activation.rank() != 3) {
        throw ShapeError("attention_map expects C×H×W, got " + shape_str(activation.shape()));
    }
    const auto& s = activation.shape();
    const auto batched = attention_maps(reshape(activation, {1, s[0], s[1], s[2]}));
    return reshape(batched, {s[1], s[2]});
}

Tensor resize_map(const Tensor& map, std::size_t th, std::size_t tw) {
    if (th == 0 || tw == 0) throw ShapeError("resize_map: target extents must be >= 1");
    if (map.rank() == 2) {
        const auto r = resize_map(reshape(map, {1, map.dim(0), map.dim(1)}), th, tw);
        return reshape(r, {th, tw});
    }
    if (map.rank() != 3) throw ShapeError("resize_map expects H×W or N×H×W, got " + shape_str(map.shape()));
    const auto n = map.dim(0), h = map.dim(1), w = map.dim(2);
    if (h == th && w == tw) return reshape(map, map.shape());

    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto taps = [](std::size_t src, std::size_t dst) {
        std::vector<Tap> t(dst);
        for (std::size_t i = 0; i < dst; ++i) {
            const double pos = dst == 1 ? 0.0
                                        : static_cast<double>(i) * static_cast<double>(src - 1) /
                                              static_cast<double>(dst - 1);
            const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), src - 1);
            t[i] = {lo, std::min(lo + 1, src - 1), pos - static_cast<double>(lo)};
        }
        return t;
    };
    const auto ty = taps(h, th);
    const auto tx = taps(w, tw);
    std::vector<double> out(n * th * tw);
    const auto md = map.data();
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x) {
                const auto& a = ty[y];
                const auto& b = tx[x];
                const double* m = md.data() + ni * h * w;
                out[(ni * th + y) * tw + x] = (1 - a.frac) * (1 - b.frac) * m[a.lo * w + b.lo] +
                                              (1 - a.frac) * b.frac * m[a.lo * w + b.hi] +
                                              a.frac * (1 - b.frac) * m[a.hi * w + b.lo] +
                                              a.frac * b.frac * m[a.hi * w + b.hi];
            }
    return make_result({n, th, tw}, std::move(out), "resize_map", {map},
                       [=](std::span<const double> g, const std::vector<bool>&, std::vector<std::vector<double>>& gi) {
                           for (std::size_t ni = 0; ni < n; ++ni)
                               for (std::size_t y = 0; y < th; ++y)
                                   for (std::size_t x = 0; x < tw; ++x) {
                                       const auto& a = ty[y];
                                       const auto& b = tx[x];
                                       const double gv = g[(ni * th + y) * tw + x];
                                       double* m = gi[0].data() + ni * h * w;
                                       m[a.lo * w + b.lo] += (1 - a.frac) * (1 - b.frac) * gv;
                                       m[a.lo * w + b.hi] += (1 - a.frac) * b.frac * gv;
                                       m[a.hi * w + b.lo] += a.frac * (1 - b.frac) * gv;
                                       m[a.hi * w + b.hi] += a.frac * b.frac * gv;
                                   }
                       });
}

Tensor normalize_rows(const Tensor& rows) {
    if (rows.rank() != 2) throw ShapeError("normalize_rows expects N×D, got " + shape_str(rows.shape()));
    const auto n = rows.dim(0), d = rows.dim(1);
    std::vector<double> out(rows.numel());
    std::vector<double> norms(n);
    const auto rd = rows.data();
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t k = 0; k < d; ++k) ss += rd[i * d + k] * rd[i * d + k];
        norms[i] = std::sqrt(ss + kNormEpsilon);
        for (std::size_t k = 0; k < d; ++k) out[i * d + k] = rd[i * d + k] / norms[i];
    }
    return make_result(rows.shape(), std::move(out), "normalize_rows", {rows},
                       [rows, n, d, norms = std::move(norms)](std::span<const double> g, const std::vector<bool>&,
                                                               std::vector<std::vector<double>>& gi) {
                           const auto rd = rows.data();
                           for (std::size_t i = 0; i < n; ++i) {
                               // d(x/r)/dx = (I - x xᵀ / r²) / r
                               double dot = 0.0;
                               for (std::size_t k = 0; k < d; ++k) dot += g[i * d + k] * rd[i * d + k];
                               const double r = norms[i];
                               for (std::size_t k = 0; k < d; ++k) {
                                   gi[0][i * d + k] = (g[i * d + k] - rd[i * d + k] * dot / (r * r)) / r;
                               }
                           }
                       });
}

Tensor row_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError("row_distance: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto n = a.dim(0), d = a.dim(1);
    std::vector<double> out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = ad[i * d + k] - bd[i * d + k];
            ss += diff * diff;
        }
        out[i] = std::sqrt(ss);
    }
    auto dist = out;
    return make_result({n}, std::move(out), "row_distance", {a, b},
                       [a, b, n, d, dist = std::move(dist)](std::span<const double> g, const std::vector<bool>& needs,
                                                            std::vector<std::vector<double>>& gi) {
                           const auto ad = a.data();
                           const auto bd = b.data();
                           for (std::size_t i = 0; i < n; ++i) {
                               if (dist[i] == 0.0) continue;
                               const double f = g[i] / dist[i];
                               for (std::size_t k = 0; k < d; ++k) {
                                   const double v = f * (ad[i * d + k] - bd[i * d + k]);
                                   if (needs[0]) gi[0][i * d + k] = v;
                                   if (needs[1]) gi[1][i * d + k] = -v;
                               }
                           }
                       });
}

std::pair<std::size_t, std::size_t> common_extent(const std::vector<Tensor>& student,
                                                  const std::vector<Tensor>& teacher) {
    std::size_t h = SIZE_MAX, w = SIZE_MAX;
    for (const auto* list : {&student, &teacher}) {
        for (const auto& a : *list) {
            if (a.rank() != 4) throw ShapeError("captured activation must be N×C×H×W, got " + shape_str(a.shape()));
            h = std::min(h, a.dim(2));
            w = std::min(w, a.dim(3));
        }
    }
    if (h == SIZE_MAX) throw ShapeError("no activations captured");
    return {std::max(h, kMinCommonExtent), std::max(w, kMinCommonExtent)};
}

std::vector<Tensor> prepare_maps(const std::vector<Tensor>& activations, std::size_t h, std::size_t w) {
    std::vector<Tensor> rows;
    rows.reserve(activations.size());
    for (const auto& a : activations) {
        const auto m = resize_map(attention_maps(a), h, w);
        rows.push_back(normalize_rows(reshape(m, {m.dim(0), h * w})));
    }
    return rows;
}

namespace {

std::vector<Tensor> detached(const std::vector<Tensor>& ts) {
    std::vector<Tensor> out;
    out.reserve(ts.size());
    for (const auto& t : ts) out.push_back(t.detach());
    return out;
}

void check_batches(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher) {
    if (student.empty() || teacher.empty()) throw ShapeError("attention loss needs student and teacher activations");
    const auto n = student.front().dim(0);
    for (const auto* list : {&student, &teacher})
        for (const auto& a : *list)
            if (a.rank() != 4 || a.dim(0) != n) throw ShapeError("activation batch sizes differ");
}

}  // namespace

Tensor attention_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, const Tensor& weights) {
    check_batches(student, teacher);
    const auto ns = student.size(), nt = teacher.size();
    if (weights.shape() != Shape{ns, nt}) {
        throw ShapeError("connection weights " + shape_str(weights.shape()) + ", expected " + shape_str({ns, nt}));
    }
    const auto [h, w] = common_extent(student, teacher);
    const auto s_rows = prepare_maps(student, h, w);
    const auto t_rows = prepare_maps(detached(teacher), h, w);
    std::vector<Tensor> dists;
    dists.reserve(ns * nt);
    for (std::size_t i = 0; i < ns; ++i)
        for (std::size_t j = 0; j < nt; ++j) dists.push_back(mean(row_distance(s_rows[i], t_rows[j])));
    const auto d = reshape(stack(dists), {ns, nt});
    return scale(sum(mul(weights, d)), 1.0 / static_cast<double>(ns * nt));
}

Tensor attention_loss_tutors(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                             const std::vector<std::size_t>& tutors) {
    check_batches(student, teacher);
    const auto ns = student.size(), nt = teacher.size();
    if (tutors.size() != ns) throw ShapeError("one tutor per student layer required");
    for (auto t : tutors)
        if (t >= nt) throw ShapeError("tutor index " + std::to_string(t) + " out of range");
    const auto [h, w] = common_extent(student, teacher);
    const auto s_rows = prepare_maps(student, h, w);
    const auto t_rows = prepare_maps(detached(teacher), h, w);
    std::vector<Tensor> dists;
    for (std::size_t i = 0; i < ns; ++i) dists.push_back(mean(row_distance(s_rows[i], t_rows[tutors[i]])));
    return scale(sum(stack(dists)), 1.0 / static_cast<double>(ns * nt));
}

Tensor kl_term(const Tensor& p, const Tensor& q) {
    if (p.rank() != 2 || p.shape() != q.shape()) {
        throw ShapeError("kl_term: shapes " + shape_str(p.shape()) + " and " + shape_str(q.shape()));
    }
    const auto n = p.dim(0), k = p.dim(1);
    const auto pd = p.data();
    const auto qd = q.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n * k; ++i) {
        if (pd[i] > 0.0) total += pd[i] * (std::log(std::max(pd[i], kProbFloor)) - std::log(std::max(qd[i], kProbFloor)));
    }
    const auto q_const = q.detach();
    return make_result({}, {total / static_cast<double>(n)}, "kl", {p},
                       [p, q_const, n](std::span<const double> g, const std::vector<bool>&,
                                       std::vector<std::vector<double>>& gi) {
                           const auto pd = p.data();
                           const auto qd = q_const.data();
                           const double f = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < pd.size(); ++i) {
                               gi[0][i] = f * (std::log(std::max(pd[i], kProbFloor)) -
                                               std::log(std::max(qd[i], kProbFloor)) + 1.0);
                           }
                       });
}

ConnectionMatrix ConnectionMatrix::zeros(std::size_t n_student, std::size_t n_teacher) {
    return {Tensor::zeros({n_student, n_teacher}, true)};
}

Tensor connection_weights(const ConnectionMatrix& g, double tau, const std::vector<double>& noise) {
    return gumbel_softmax(g.logits, tau, noise);
}

Tensor attention_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                      const ConnectionMatrix& g, double tau, const std::vector<double>& noise) {
    return attention_loss(student, teacher, connection_weights(g, tau, noise));
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax of empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

std::vector<std::size_t> derive_tutors(const ConnectionMatrix& g) {
    const auto ns = g.student_layers(), nt = g.teacher_layers();
    std::vector<std::size_t> tutors(ns);
    for (std::size_t i = 0; i < ns; ++i) tutors[i] = argmax(g.logits.data().subspan(i * nt, nt));
    return tutors;
}

std::vector<std::size_t> connection_histogram(const std::vector<std::size_t>& tutors, std::size_t teacher_layers) {
    std::vector<std::size_t> counts(teacher_layers, 0);
    for (auto t : tutors) {
        if (t >= teacher_layers) throw ShapeError("tutor index " + std::to_string(t) + " out of range");
        ++counts[t];
    }
    return counts;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("write_pgm expects an H×W map, got " + shape_str(map.shape()));
    const auto h = map.dim(0), w = map.dim(1);
    const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
    const double lo = *lo_it, range = *hi_it - *lo_it;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : map.data()) {
        const double scaled = range > 0.0 ? (v - lo) / range : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled * 255.0))));
    }
}

void write_histogram_csv(const std::filesystem::path& path, const std::vector<std::size_t>& counts) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "teacher_layer,count\n";
    for (std::size_t j = 0; j < counts.size(); ++j) out << j << ',' << counts[j] << '\n';
}

}  // namespace rnascl::distill
