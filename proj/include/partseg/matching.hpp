#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace partseg {

/// Score matrix to maximize: rows are ground-truth masks, columns predicted masks.
class AssignmentProblem {
public:
    AssignmentProblem(std::size_t rows, std::size_t cols, std::vector<double> scores);
    AssignmentProblem(const std::vector<std::vector<double>>& scores);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double at(std::size_t r, std::size_t c) const { return scores_[r * cols_ + c]; }
    std::span<const double> scores() const noexcept { return scores_; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> scores_;
};

struct Assignment {
    std::vector<std::size_t> mapping;  // row → column, injective
    double total_score = 0.0;

    bool operator==(const Assignment&) const = default;
};

/// Optimal injective row→column map (rows ≤ cols), O(n³). Among optimal maps
/// (within a 1e-9 relative tolerance) returns the lexicographically smallest.
/// Throws InvalidData on non-finite scores, CapacityError when rows > cols.
Assignment hungarian(const AssignmentProblem& problem);

/// Exhaustive search with the same tie rule, for rows, cols ≤ 8.
Assignment brute_force_match(const AssignmentProblem& problem);

enum class OverflowPolicy {
    Fail,          // more ground-truth instances than mask slots is a CapacityError
    KeepLargest,   // keep the mask-count largest instances (ties by index)
};

struct InstanceMatch {
    std::vector<std::size_t> gt_rows;  // ground-truth instances that were matched
    Assignment assignment;             // assignment.mapping[r] is the mask for gt_rows[r]
    std::vector<double> iou;           // relaxed IoU of each matched pair
};

/// Matches binary ground-truth masks gt[t×n] against the first k columns of the
/// per-point mask probabilities probs[n×(k+1)] by relaxed IoU. The last ("other")
/// column never takes part.
InstanceMatch match_instances(std::span<const double> probs, std::size_t n, std::size_t k,
                              std::span<const double> gt, std::size_t t,
                              OverflowPolicy policy = OverflowPolicy::Fail);

}  // namespace partseg
