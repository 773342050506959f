#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/template.hpp"

namespace partseg {

/// ⟨p,q⟩ / (‖p‖₁ + ‖q‖₁ − ⟨p,q⟩) over masks in [0,1]; 0 when both masks are zero.
double relaxed_iou(std::span<const double> p, std::span<const double> q);

struct ReportCell {
    double score = 0.0;
    std::uint64_t support = 0;

    bool operator==(const ReportCell&) const = default;
};

/// Scores are fractions in [0,1]; printing converts to percent.
struct EvalReport {
    std::string metric;    // "part_category_miou", "shape_miou", "hierarchical_miou", ...
    std::string category;  // object category
    std::map<std::pair<int, int>, ReportCell> per_part_category;  // (level, label) → cell
    std::map<std::pair<int, int>, std::string> part_names;        // (level, label) → path
    std::map<std::pair<int, std::string>, ReportCell> per_shape;  // (level, shape) → cell
    std::map<int, ReportCell> per_level;                          // level → average
    ReportCell average;  // mean over defined levels (or over categories when combined)

    bool operator==(const EvalReport&) const = default;
};

/// Merges single-level reports of one category; `average` becomes the mean of the levels.
EvalReport combine_levels(const std::vector<EvalReport>& reports);

/// Cross-category average: per level and overall, the mean of the category averages.
EvalReport combine_categories(const std::vector<EvalReport>& reports);

std::string report_to_json(const EvalReport& report);
EvalReport parse_report(std::string_view document);

/// Paper-style table: rows 1/2/3 and Avg, one column per report plus a leading Avg
/// column; levels a category does not define print as "-".
std::string format_table(const std::vector<EvalReport>& per_category);

// Semantic segmentation ------------------------------------------------------

struct SemanticCase {
    std::string shape_id;
    std::vector<int> ground_truth;  // level label ids, 0 = unlabeled
    std::vector<int> prediction;
};

enum class IouPooling {
    Pooled,      // Σ intersections / Σ unions across shapes
    PerShape,    // mean of per-shape IoUs over shapes where the category occurs
};

EvalReport semantic_part_category_miou(std::span<const SemanticCase> cases, const Template& t,
                                       int level, IouPooling pooling = IouPooling::Pooled);

EvalReport semantic_shape_miou(std::span<const SemanticCase> cases, const Template& t,
                               int level);

// Hierarchical segmentation --------------------------------------------------

struct PathCase {
    std::string shape_id;
    std::vector<std::vector<NodeId>> ground_truth;  // per point; empty = unlabeled
    std::vector<std::vector<NodeId>> prediction;
};

/// Pooled IoU per template node ("other" leaves excluded), averaged over nodes.
EvalReport hierarchical_miou(std::span<const PathCase> cases, const Template& t);

// Instance segmentation ------------------------------------------------------

struct GtInstance {
    int semantic = 0;
    std::vector<std::size_t> points;
};

struct InstanceCase {
    std::string shape_id;
    std::size_t point_count = 0;
    std::vector<GtInstance> ground_truth;
    InstancePredictionSet prediction;
};

/// Ground-truth instances of a flattened level, ordered by instance id.
std::vector<GtInstance> gt_instances(const LevelLabels& labels);

struct ApResult {
    double ap = 0.0;
    std::uint64_t gt_count = 0;
    std::uint64_t prediction_count = 0;
};

/// Per-category AP over all cases; categories without ground truth are omitted.
std::map<int, ApResult> instance_ap(std::span<const InstanceCase> cases,
                                    double iou_threshold = 0.5);

EvalReport instance_part_category_map(std::span<const InstanceCase> cases, const Template& t,
                                      int level, double iou_threshold = 0.5);

EvalReport instance_shape_map(std::span<const InstanceCase> cases, const Template& t, int level,
                              double iou_threshold = 0.5);

}  // namespace partseg
