#include "partseg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "partseg/error.hpp"
#include "partseg/kernels.hpp"

namespace partseg {

AssignmentProblem::AssignmentProblem(std::size_t rows, std::size_t cols, std::vector<double> scores)
    : rows_(rows), cols_(cols), scores_(std::move(scores)) {
    if (rows_ == 0 || cols_ == 0) throw InvalidArgument("assignment problem needs rows, cols >= 1");
    if (scores_.size() != rows_ * cols_) throw InvalidArgument("score matrix size mismatch");
}

AssignmentProblem::AssignmentProblem(const std::vector<std::vector<double>>& scores)
    : rows_(scores.size()), cols_(scores.empty() ? 0 : scores.front().size()) {
    if (rows_ == 0 || cols_ == 0) throw InvalidArgument("assignment problem needs rows, cols >= 1");
    for (const auto& row : scores) {
        if (row.size() != cols_) throw InvalidArgument("ragged score matrix");
        scores_.insert(scores_.end(), row.begin(), row.end());
    }
}

namespace {

double tolerance(const AssignmentProblem& p) {
    double scale = 1.0;
    for (double s : p.scores()) scale = std::max(scale, std::abs(s));
    return 1e-9 * scale;
}

void check_finite(const AssignmentProblem& p) {
    for (double s : p.scores())
        if (!std::isfinite(s)) throw InvalidData("assignment score is not finite");
}

double total_of(const AssignmentProblem& p, const std::vector<std::size_t>& mapping) {
    double total = 0.0;
    for (std::size_t r = 0; r < mapping.size(); ++r) total += p.at(r, mapping[r]);
    return total;
}

// Square min-cost assignment with potentials; a[i][j] − u[i] − v[j] ≥ 0 at the end,
// with equality on the returned matching.
struct SquareSolution {
    std::vector<std::size_t> row_to_col;
    std::vector<double> u, v;
};

SquareSolution solve_square(const std::vector<double>& cost, std::size_t n) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    SquareSolution s;
    s.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) s.row_to_col[p[j] - 1] = j - 1;
    s.u.assign(u.begin() + 1, u.end());
    s.v.assign(v.begin() + 1, v.end());
    return s;
}

// Re-routes a perfect matching on the tight-edge graph so that the first `rows`
// rows take the lexicographically smallest columns still admitting a perfect matching.
class LexMinimizer {
public:
    LexMinimizer(std::vector<std::vector<char>> tight, std::vector<std::size_t> row_to_col)
        : tight_(std::move(tight)), row_to_col_(std::move(row_to_col)), n_(row_to_col_.size()),
          col_to_row_(n_), fixed_(n_, 0) {
        for (std::size_t r = 0; r < n_; ++r) col_to_row_[row_to_col_[r]] = r;
    }

    std::vector<std::size_t> run(std::size_t rows) {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < n_; ++j) {
                if (!tight_[i][j]) continue;
                if (row_to_col_[i] == j || try_take(i, j)) break;
            }
            fixed_[i] = 1;
        }
        return {row_to_col_.begin(), row_to_col_.begin() + static_cast<std::ptrdiff_t>(rows)};
    }

private:
    // Gives column j to row i, re-seating the displaced row along an alternating path
    // that ends at the column i vacated.
    bool try_take(std::size_t i, std::size_t j) {
        const std::size_t displaced = col_to_row_[j];
        if (fixed_[displaced]) return false;
        const std::size_t freed = row_to_col_[i];
        std::vector<char> visited(n_, 0);
        std::vector<std::size_t> trail;
        visited[j] = 1;
        fixed_[i] = 1;  // i is not available for re-seating while searching
        const bool ok = reseat(displaced, freed, visited, trail);
        fixed_[i] = 0;
        if (!ok) return false;
        // trail holds (row, col) pairs along the path, applied in order.
        for (std::size_t k = 0; k < trail.size(); k += 2) {
            row_to_col_[trail[k]] = trail[k + 1];
            col_to_row_[trail[k + 1]] = trail[k];
        }
        row_to_col_[i] = j;
        col_to_row_[j] = i;
        return true;
    }

    bool reseat(std::size_t row, std::size_t target, std::vector<char>& visited,
                std::vector<std::size_t>& trail) {
        for (std::size_t c = 0; c < n_; ++c) {
            if (!tight_[row][c] || visited[c]) continue;
            visited[c] = 1;
            if (c == target) {
                trail.push_back(row);
                trail.push_back(c);
                return true;
            }
            const std::size_t next = col_to_row_[c];
            if (fixed_[next]) continue;
            if (reseat(next, target, visited, trail)) {
                trail.push_back(row);
                trail.push_back(c);
                return true;
            }
        }
        return false;
    }

    std::vector<std::vector<char>> tight_;
    std::vector<std::size_t> row_to_col_;
    std::size_t n_;
    std::vector<std::size_t> col_to_row_;
    std::vector<char> fixed_;
};

}  // namespace

Assignment hungarian(const AssignmentProblem& problem) {
    check_finite(problem);
    const std::size_t t = problem.rows();
    const std::size_t n = problem.cols();
    if (t > n)
        throw CapacityError("hungarian: " + std::to_string(t) + " rows exceed " +
                            std::to_string(n) + " columns");

    // Maximization as minimization of (max − score); padding rows cost nothing.
    const double max_score = *std::max_element(problem.scores().begin(), problem.scores().end());
    std::vector<double> cost(n * n, 0.0);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c < n; ++c) cost[r * n + c] = max_score - problem.at(r, c);

    const SquareSolution sol = solve_square(cost, n);
    const double eps = tolerance(problem) * static_cast<double>(n);
    std::vector<std::vector<char>> tight(n, std::vector<char>(n, 0));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            tight[r][c] = cost[r * n + c] - sol.u[r] - sol.v[c] <= eps ? 1 : 0;

    Assignment a;
    a.mapping = LexMinimizer(std::move(tight), sol.row_to_col).run(t);
    a.total_score = total_of(problem, a.mapping);
    return a;
}

Assignment brute_force_match(const AssignmentProblem& problem) {
    check_finite(problem);
    const std::size_t t = problem.rows();
    const std::size_t k = problem.cols();
    if (t > 8 || k > 8) throw InvalidArgument("brute_force_match supports at most 8x8 problems");
    if (t > k) throw CapacityError("brute_force_match: more rows than columns");

    // All injective maps in lexicographic order.
    std::vector<std::vector<std::size_t>> maps;
    std::vector<std::size_t> current;
    std::vector<char> used(k, 0);
    auto recurse = [&](auto&& self) -> void {
        if (current.size() == t) {
            maps.push_back(current);
            return;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (used[c]) continue;
            used[c] = 1;
            current.push_back(c);
            self(self);
            current.pop_back();
            used[c] = 0;
        }
    };
    recurse(recurse);

    double best = -std::numeric_limits<double>::infinity();
    for (const auto& m : maps) best = std::max(best, total_of(problem, m));
    const double eps = tolerance(problem);
    for (const auto& m : maps) {
        const double total = total_of(problem, m);
        if (total >= best - eps) return {m, total};
    }
    throw InvalidData("brute_force_match: no assignment found");
}

InstanceMatch match_instances(std::span<const double> probs, std::size_t n, std::size_t k,
                              std::span<const double> gt, std::size_t t, OverflowPolicy policy) {
    if (t == 0) throw InvalidArgument("match_instances needs at least one ground-truth mask");
    if (k == 0) throw CapacityError("match_instances: no mask slots");
    if (probs.size() != n * (k + 1) || gt.size() != t * n)
        throw InvalidArgument("match_instances: mask dimensions do not agree");

    InstanceMatch out;
    out.gt_rows.resize(t);
    std::iota(out.gt_rows.begin(), out.gt_rows.end(), std::size_t{0});
    std::vector<double> kept_gt;
    std::span<const double> gt_used = gt;
    if (t > k) {
        if (policy == OverflowPolicy::Fail)
            throw CapacityError(std::to_string(t) + " ground-truth instances exceed " +
                                std::to_string(k) + " mask slots");
        std::vector<double> sizes(t, 0.0);
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t i = 0; i < n; ++i) sizes[r] += gt[r * n + i];
        std::stable_sort(out.gt_rows.begin(), out.gt_rows.end(),
                         [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
        out.gt_rows.resize(k);
        std::sort(out.gt_rows.begin(), out.gt_rows.end());
        for (std::size_t r : out.gt_rows)
            kept_gt.insert(kept_gt.end(), gt.begin() + static_cast<std::ptrdiff_t>(r * n),
                           gt.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
        gt_used = kept_gt;
    }
    const std::size_t rows = out.gt_rows.size();
    std::vector<double> scores(rows * k);
    kernels::relaxed_iou_matrix(gt_used, rows, probs, n, k + 1, k, scores);
    AssignmentProblem problem(rows, k, scores);
    out.assignment = hungarian(problem);
    out.iou.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) out.iou[r] = problem.at(r, out.assignment.mapping[r]);
    return out;
}

}  // namespace partseg
