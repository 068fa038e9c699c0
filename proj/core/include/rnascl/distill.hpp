#ifndef RNASCL_DISTILL_HPP
#define RNASCL_DISTILL_HPP

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "rnascl/tensor.hpp"

namespace rnascl::distill {

/// Added under the square root when normalizing maps, so all-zero maps
/// (dead relu layers) normalize to zero instead of dividing by zero.
inline constexpr double kNormEpsilon = 1e-12;
/// Probabilities are floored at this value inside the KL logarithms.
inline constexpr double kProbFloor = 1e-12;
/// Smallest common attention-map extent.
inline constexpr std::size_t kMinCommonExtent = 4;

/// Channel-wise sum of squares: C×H×W -> H×W.
Tensor attention_map(const Tensor& activation);
/// Batched form: N×C×H×W -> N×H×W.
Tensor attention_maps(const Tensor& activations);

/// Bilinear resize with aligned corners. Accepts H×W or N×H×W maps.
Tensor resize_map(const Tensor& map, std::size_t target_h, std::size_t target_w);

/// Each row of N×D divided by sqrt(sum of squares + kNormEpsilon).
Tensor normalize_rows(const Tensor& rows);

/// Per-row Euclidean distance between two N×D tensors, -> N. The gradient
/// at zero distance is taken as zero.
Tensor row_distance(const Tensor& a, const Tensor& b);

/// Common (height, width) for a student/teacher pair of activation lists:
/// the smallest captured extent, floored at kMinCommonExtent.
std::pair<std::size_t, std::size_t> common_extent(const std::vector<Tensor>& student,
                                                  const std::vector<Tensor>& teacher);

/// Activations turned into ℓ2-normalized attention rows (N × h·w) at a common size.
std::vector<Tensor> prepare_maps(const std::vector<Tensor>& activations, std::size_t h, std::size_t w);

/// Cross-layer attention loss
///   1/(n_s·n_t) · sum_ij w_ij · mean_batch ‖ŝ_i − t̂_j‖₂
/// with `weights` an n_s×n_t matrix (rows typically Gumbel-softmax outputs).
/// Teacher activations never receive gradient.
Tensor attention_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                      const Tensor& weights);

/// Same loss with hard one-hot rows: student layer i compares only against
/// teacher layer tutors[i]. The 1/(n_s·n_t) factor is kept.
Tensor attention_loss_tutors(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                             const std::vector<std::size_t>& tutors);

/// sum_i p_i log(p_i / q_i), averaged over the batch (rows of N×K). Student
/// distribution first; q is treated as a constant.
Tensor kl_term(const Tensor& p, const Tensor& q);

/// Student→teacher link logits, one row per student layer.
struct ConnectionMatrix {
    Tensor logits;  // n_s × n_t, trainable

    static ConnectionMatrix zeros(std::size_t n_student, std::size_t n_teacher);
    [[nodiscard]] std::size_t student_layers() const { return logits.dim(0); }
    [[nodiscard]] std::size_t teacher_layers() const { return logits.dim(1); }
};

/// Row-wise Gumbel-softmax weights of the connection matrix.
Tensor connection_weights(const ConnectionMatrix& g, double tau, const std::vector<double>& noise);

/// Attention loss with rows drawn from Gumbel-softmax over g's logits.
Tensor attention_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
                      const ConnectionMatrix& g, double tau, const std::vector<double>& noise);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Per student row, the argmax teacher layer.
std::vector<std::size_t> derive_tutors(const ConnectionMatrix& g);

/// Number of student layers assigned to each teacher layer.
std::vector<std::size_t> connection_histogram(const std::vector<std::size_t>& tutors, std::size_t teacher_layers);

/// 8-bit binary PGM of an H×W map, min-max scaled (constant maps become 0).
void write_pgm(const std::filesystem::path& path, const Tensor& map);
/// CSV with header teacher_layer,count.
void write_histogram_csv(const std::filesystem::path& path, const std::vector<std::size_t>& counts);

}  // namespace rnascl::distill

#endif  // RNASCL_DISTILL_HPP
