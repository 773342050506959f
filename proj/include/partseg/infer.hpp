#pragma once

// Hierarchical semantic segmentation: bottom-up gathering of leaf scores, top-down
// decoding of T-way node scores, and ensemble voting over root-to-leaf paths.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/geometry.hpp"
#include "partseg/nnet.hpp"
#include "partseg/template.hpp"

namespace partseg {

/// Per-point scores over a set of template nodes; row-major points × labels.
struct NodeScores {
    std::vector<NodeId> labels;
    std::size_t points = 0;
    std::vector<double> data;

    NodeScores() = default;
    NodeScores(std::vector<NodeId> labels, std::size_t points);

    std::size_t columns() const { return labels.size(); }
    double& at(std::size_t point, std::size_t column) { return data[point * labels.size() + column]; }
    double at(std::size_t point, std::size_t column) const {
        return data[point * labels.size() + column];
    }
    /// Column of a node, or labels.size() when absent.
    std::size_t column_of(NodeId node) const;
};

/// Row-wise softmax of network logits over the given labels.
NodeScores softmax_scores(const DenseArray& logits, std::vector<NodeId> labels);

/// Root-to-node chain per point.
struct PathPrediction {
    std::string shape_id;
    std::vector<std::vector<NodeId>> paths;

    bool operator==(const PathPrediction&) const = default;
};

/// True when `path` starts at the root and each step goes to a child.
bool is_valid_chain(const std::vector<NodeId>& path, const Template& t);

/// Scores over every node of `augmented` (preorder) with each parent the sum of its
/// children. The input labels must be exactly the leaves of `augmented`.
NodeScores bottom_up_gather(const NodeScores& leaf_scores, const Template& augmented);

/// Mean over points with a non-empty path of −Σ log s(node) along the path, root excluded.
double multi_label_loss(const NodeScores& node_scores,
                        const std::vector<std::vector<NodeId>>& gt_paths);

/// Logit targets for multi-label training: each path's non-root nodes as columns of `labels`.
std::vector<std::vector<std::size_t>> path_targets(const std::vector<std::vector<NodeId>>& paths,
                                                   const std::vector<NodeId>& labels);

/// Greedy descent from the root to the best-scoring child (lowest id on ties) until a leaf.
PathPrediction top_down_decode(const NodeScores& node_scores, const Template& t);

/// Per point, the root-to-leaf path of `t` with the highest weighted mean log score over
/// the levels whose cut meets the path; ties go to the lexicographically smaller path.
/// Missing weights default to 1. Throws UndefinedScore when no path meets any level.
PathPrediction ensemble_path_vote(const std::map<int, NodeScores>& level_scores,
                                  const Template& t,
                                  const std::map<int, double>& level_weights = {});

// Strategy pipelines -----------------------------------------------------------

enum class HierStrategy { BottomUp, TopDown, Ensemble };

std::string_view to_string(HierStrategy s);
/// Accepts "bottom-up", "top-down", "ensemble"; throws InvalidArgument otherwise.
HierStrategy parse_strategy(std::string_view name);

/// Trained networks of one strategy: key 0 for the single-network strategies, the level
/// index for each ensemble member.
struct HierarchicalModel {
    HierStrategy strategy = HierStrategy::BottomUp;
    std::map<int, NetworkParams> nets;
    std::map<int, double> level_weights;  // ensemble only; missing levels weigh 1
};

struct AnnotatedCloud {
    PointCloud cloud;  // normalized
    Annotation annotation;
};

/// Semantic training set for one strategy member: targets are logit columns of `labels`.
std::vector<TrainingSample> hierarchical_samples(HierStrategy strategy, int level,
                                                 const Template& t,
                                                 const std::vector<AnnotatedCloud>& data);
/// Output labels of a strategy member (level is ignored except for the ensemble).
std::vector<NodeId> hierarchical_labels(HierStrategy strategy, int level, const Template& t);

HierarchicalModel train_hierarchical(HierStrategy strategy, const Template& t,
                                     const std::vector<AnnotatedCloud>& train_set,
                                     const std::vector<AnnotatedCloud>& validation_set,
                                     const TrainConfig& config);

/// Decoded root-to-node paths over augment_other(t).
PathPrediction predict_paths(const HierarchicalModel& model, const Template& t,
                             const PointCloud& cloud);

std::string path_prediction_to_json(const PathPrediction& p);
PathPrediction parse_path_prediction(std::string_view document);

}  // namespace partseg
