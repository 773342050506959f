#include "partseg/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace partseg::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 16;

constexpr std::size_t kRowBlock = 64;

#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__) && defined(__linux__)
#define PARTSEG_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define PARTSEG_CLONES
#endif

inline void axpy(double alpha, const double* x, double* y, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) y[i] += alpha * x[i];
}

inline double relaxed_iou_from_sums(double inter, double sum_p, double sum_q) {
    const double uni = sum_p + sum_q - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

PARTSEG_CLONES
void linear_forward(std::span<const double> a, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, std::size_t n,
                    std::size_t p, std::size_t m) {
    // Transposed weights turn the inner loop into a contiguous axpy.
    std::vector<double> wt(p * m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < p; ++k) wt[k * m + j] = w[j * p + k];

    const double* ap = a.data();
    const double* wtp = wt.data();
    double* op = out.data();
    const bool has_bias = !bias.empty();
    const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * m * p > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* row = op + static_cast<std::size_t>(i) * m;
        if (has_bias)
            std::copy(bias.begin(), bias.end(), row);
        else
            std::fill(row, row + m, 0.0);
        const double* arow = ap + static_cast<std::size_t>(i) * p;
        for (std::size_t k = 0; k < p; ++k) {
            const double v = arow[k];
            if (v != 0.0) axpy(v, wtp + k * m, row, m);
        }
    }
}

PARTSEG_CLONES
void linear_backward_input(std::span<const double> d_out, std::span<const double> w,
                           std::span<double> d_a, std::size_t n, std::size_t m, std::size_t p) {
    const double* dop = d_out.data();
    const double* wp = w.data();
    double* dap = d_a.data();
    const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * m * p > kParallelWork)
    for (long i = 0; i < rows; ++i) {
        double* row = dap + static_cast<std::size_t>(i) * p;
        std::fill(row, row + p, 0.0);
        const double* drow = dop + static_cast<std::size_t>(i) * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double g = drow[j];
            if (g != 0.0) axpy(g, wp + j * p, row, p);
        }
    }
}

PARTSEG_CLONES
void linear_backward_weights(std::span<const double> d_out, std::span<const double> a,
                             std::span<double> d_w, std::span<double> d_bias, std::size_t n,
                             std::size_t m, std::size_t p) {
    const double* dop = d_out.data();
    const double* ap = a.data();
    double* dwp = d_w.data();
    // Each thread owns a contiguous range of d_w rows and walks the input in row
    // blocks so the block of `a` stays cache resident across those rows.
#pragma omp parallel if (n * m * p > kParallelWork)
    {
        std::size_t j_begin = 0, j_end = m;
#ifdef _OPENMP
        const auto threads = static_cast<std::size_t>(omp_get_num_threads());
        const auto tid = static_cast<std::size_t>(omp_get_thread_num());
        j_begin = m * tid / threads;
        j_end = m * (tid + 1) / threads;
#endif
        for (std::size_t i0 = 0; i0 < n; i0 += kRowBlock) {
            const std::size_t i1 = std::min(n, i0 + kRowBlock);
            for (std::size_t j = j_begin; j < j_end; ++j) {
                double* wrow = dwp + j * p;
                for (std::size_t i = i0; i < i1; ++i) {
                    const double g = dop[i * m + j];
                    if (g != 0.0) axpy(g, ap + i * p, wrow, p);
                }
            }
        }
    }
    if (!d_bias.empty()) {
        for (std::size_t i0 = 0; i0 < n; i0 += kRowBlock) {
            const std::size_t i1 = std::min(n, i0 + kRowBlock);
            for (std::size_t i = i0; i < i1; ++i) axpy(1.0, dop + i * m, d_bias.data(), m);
        }
    }
}

void column_max(std::span<const double> a, std::size_t n, std::size_t m, std::span<double> out,
                std::span<std::size_t> argmax) {
    std::copy(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(m), out.begin());
    std::fill(argmax.begin(), argmax.begin() + static_cast<std::ptrdiff_t>(m), 0);
    for (std::size_t i = 1; i < n; ++i) {
        const double* row = a.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            if (row[j] > out[j]) {
                out[j] = row[j];
                argmax[j] = i;
            }
        }
    }
}

std::size_t fps_update(std::span<const double> xyz, std::span<const double, 3> q,
                       std::span<double> dist) {
    const std::size_t n = dist.size();
    const double qx = q[0], qy = q[1], qz = q[2];
    const double* pts = xyz.data();
    double* d = dist.data();
    const long count = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n > 4 * kRowBlock * kRowBlock)
    for (long ii = 0; ii < count; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double dx = pts[3 * i] - qx;
        const double dy = pts[3 * i + 1] - qy;
        const double dz = pts[3 * i + 2] - qz;
        const double dd = dx * dx + dy * dy + dz * dz;
        if (dd < d[i]) d[i] = dd;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (d[i] > d[best]) best = i;
    return best;
}

void relaxed_iou_matrix(std::span<const double> gt, std::size_t t, std::span<const double> pred,
                        std::size_t n, std::size_t c, std::size_t k, std::span<double> scores) {
    std::vector<double> pred_sum(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, pred.data() + i * c, pred_sum.data(), k);

    const long rows = static_cast<long>(t);
#pragma omp parallel for schedule(static) if (t * n * k > kParallelWork)
    for (long rr = 0; rr < rows; ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        const double* g = gt.data() + r * n;
        double* inter = scores.data() + r * k;
        std::fill(inter, inter + k, 0.0);
        double gt_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (g[i] == 0.0) continue;
            gt_sum += g[i];
            axpy(g[i], pred.data() + i * c, inter, k);
        }
        for (std::size_t j = 0; j < k; ++j)
            inter[j] = relaxed_iou_from_sums(inter[j], gt_sum, pred_sum[j]);
    }
}

int configure_threads_from_env() {
#ifdef _OPENMP
    if (const char* env = std::getenv("PARTSEG_THREADS"); env != nullptr && *env != '\0') {
        const int requested = std::atoi(env);
        if (requested > 0) omp_set_num_threads(std::min(requested, omp_get_num_procs()));
    }
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

void linear_forward(std::span<const double> a, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out, std::size_t n,
                    std::size_t p, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = bias.empty() ? 0.0 : bias[j];
            for (std::size_t k = 0; k < p; ++k) s += a[i * p + k] * w[j * p + k];
            out[i * m + j] = s;
        }
    }
}

void linear_backward_input(std::span<const double> d_out, std::span<const double> w,
                           std::span<double> d_a, std::size_t n, std::size_t m, std::size_t p) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < p; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += d_out[i * m + j] * w[j * p + k];
            d_a[i * p + k] = s;
        }
    }
}

void linear_backward_weights(std::span<const double> d_out, std::span<const double> a,
                             std::span<double> d_w, std::span<double> d_bias, std::size_t n,
                             std::size_t m, std::size_t p) {
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = 0; k < p; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += d_out[i * m + j] * a[i * p + k];
            d_w[j * p + k] += s;
        }
        if (!d_bias.empty()) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += d_out[i * m + j];
            d_bias[j] += s;
        }
    }
}

void column_max(std::span<const double> a, std::size_t n, std::size_t m, std::span<double> out,
                std::span<std::size_t> argmax) {
    for (std::size_t j = 0; j < m; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (a[i * m + j] > a[best * m + j]) best = i;
        out[j] = a[best * m + j];
        argmax[j] = best;
    }
}

std::size_t fps_update(std::span<const double> xyz, std::span<const double, 3> q,
                       std::span<double> dist) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        double dd = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double diff = xyz[3 * i + c] - q[c];
            dd += diff * diff;
        }
        dist[i] = std::min(dist[i], dd);
        if (dist[i] > dist[best]) best = i;
    }
    return best;
}

void relaxed_iou_matrix(std::span<const double> gt, std::size_t t, std::span<const double> pred,
                        std::size_t n, std::size_t c, std::size_t k, std::span<double> scores) {
    for (std::size_t r = 0; r < t; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
            double inter = 0.0, sum_g = 0.0, sum_p = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double g = gt[r * n + i];
                const double p = pred[i * c + j];
                inter += g * p;
                sum_g += g;
                sum_p += p;
            }
            scores[r * k + j] = relaxed_iou_from_sums(inter, sum_g, sum_p);
        }
    }
}

}  // namespace serial

}  // namespace partseg::kernels
