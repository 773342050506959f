#pragma once

// Dense inner loops shared by the network, sampler and matcher.
//
// Every kernel exists twice: `kernels::serial` holds the plain reference loops
// the tests compare against, and `kernels` holds the blocked, OpenMP-parallel
// versions used in production. All matrices are row-major. The parallel
// versions partition work by output element, so each output is accumulated in
// a fixed order and results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace partseg::kernels {

/// out[n×m] = a[n×p] · w[m×p]ᵀ (+ bias[m] when non-empty).
void linear_forward(std::span<const double> a, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, std::size_t n,
                    std::size_t p, std::size_t m);

/// d_a[n×p] = d_out[n×m] · w[m×p]. Overwrites d_a.
void linear_backward_input(std::span<const double> d_out, std::span<const double> w,
                           std::span<double> d_a, std::size_t n, std::size_t m, std::size_t p);

/// d_w[m×p] += d_out[n×m]ᵀ · a[n×p]; d_bias[m] += column sums of d_out (skipped when empty).
void linear_backward_weights(std::span<const double> d_out, std::span<const double> a,
                             std::span<double> d_w, std::span<double> d_bias, std::size_t n,
                             std::size_t m, std::size_t p);

/// Column-wise max over rows of a[n×m]; argmax keeps the lowest row on ties.
void column_max(std::span<const double> a, std::size_t n, std::size_t m, std::span<double> out,
                std::span<std::size_t> argmax);

/// dist[i] = min(dist[i], |xyz_i − q|²) for interleaved xyz; returns the index of the
/// largest updated distance (lowest index on ties).
std::size_t fps_update(std::span<const double> xyz, std::span<const double, 3> q,
                       std::span<double> dist);

/// scores[t×k] with scores[i][j] = relaxed IoU between row i of gt[t×n] and column j of
/// pred[n×c], for the first k ≤ c columns. Both-zero pairs score 0.
void relaxed_iou_matrix(std::span<const double> gt, std::size_t t, std::span<const double> pred,
                        std::size_t n, std::size_t c, std::size_t k, std::span<double> scores);

namespace serial {

void linear_forward(std::span<const double> a, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, std::size_t n,
                    std::size_t p, std::size_t m);
void linear_backward_input(std::span<const double> d_out, std::span<const double> w,
                           std::span<double> d_a, std::size_t n, std::size_t m, std::size_t p);
void linear_backward_weights(std::span<const double> d_out, std::span<const double> a,
                             std::span<double> d_w, std::span<double> d_bias, std::size_t n,
                             std::size_t m, std::size_t p);
void column_max(std::span<const double> a, std::size_t n, std::size_t m, std::span<double> out,
                std::span<std::size_t> argmax);
std::size_t fps_update(std::span<const double> xyz, std::span<const double, 3> q,
                       std::span<double> dist);
void relaxed_iou_matrix(std::span<const double> gt, std::size_t t, std::span<const double> pred,
                        std::size_t n, std::size_t c, std::size_t k, std::span<double> scores);

}  // namespace serial

/// Caps the worker count from PARTSEG_THREADS when set; returns the effective count.
int configure_threads_from_env();

}  // namespace partseg::kernels
