#pragma once

// Multi-annotator agreement over full-path leaf labels.

#include <cstdint>
#include <string>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/template.hpp"

namespace partseg {

struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::uint64_t>> counts;  // [reference label][compared label]
    std::vector<std::vector<double>> row_normalized;
};

enum class ConfusionMode {
    Reference,  // rows are the first annotation's labels
    Symmetric,  // counts of both orderings summed
};

/// Points unlabeled in either annotation are excluded. Labels are the full-path labels of
/// the template leaves in preorder, followed by any internal node that holds points.
ConfusionMatrix confusion_matrix(const Annotation& a, const Annotation& b, const Template& t,
                                 ConfusionMode mode = ConfusionMode::Reference);

/// Mean diagonal of the row-normalized matrix over rows with support.
double consistency_score(const ConfusionMatrix& m);

struct ConfusedPair {
    std::string reference;
    std::string compared;
    double rate = 0.0;
    std::uint64_t count = 0;
};

/// Off-diagonal cells by descending rate (ties by row, then column); candidates for a
/// human to merge or drop during template refinement.
std::vector<ConfusedPair> ranked_confusions(const ConfusionMatrix& m, std::size_t limit);

}  // namespace partseg
