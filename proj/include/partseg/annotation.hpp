#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "partseg/template.hpp"

namespace partseg {

/// One part instance. Only childless nodes carry points.
struct InstanceNode {
    NodeId node = 0;
    std::vector<InstanceNode> children;
    std::vector<std::size_t> point_indices;

    bool operator==(const InstanceNode&) const = default;
};

struct Annotation {
    std::string shape_id;
    std::string category;
    InstanceNode root;
    std::size_t point_count = 0;

    bool operator==(const Annotation&) const = default;
};

/// Per-point labels at one level cut. Label and instance id 0 mean "unlabeled".
struct LevelLabels {
    int level = 0;
    std::vector<int> semantic;
    std::vector<int> instance;
    std::map<int, NodeId> instance_semantics;

    int instance_count() const { return static_cast<int>(instance_semantics.size()); }
};

struct Violation {
    std::string path;  // e.g. "chair[0]/chair_base[0]/regular_leg_base[0]/leg[2]"
    std::string message;
};

std::vector<Violation> validate_annotation(const Annotation& a, const Template& t);

/// Template node of the childless instance holding each point; nullopt when unlabeled.
/// Throws InvalidData when a point index is out of range.
std::vector<std::optional<NodeId>> point_nodes(const Annotation& a);

/// Semantic label id of a level-cut node (1-based position in the sorted cut).
int level_label_id(const Template& t, int level, NodeId node);
NodeId level_label_node(const Template& t, int level, int label_id);

LevelLabels flatten(const Annotation& a, const Template& t, int level);

/// Root-to-node template chain for each point (empty when unlabeled). `t` must be
/// augmented: a point held by an internal template node gets that node's "other" leaf
/// appended, so every non-empty path ends at a leaf.
std::vector<std::vector<NodeId>> point_paths(const Annotation& a, const Template& augmented);

/// Copy with every point under an instance of an excluded template node left unlabeled.
Annotation without_nodes(const Annotation& a, const std::set<NodeId>& excluded);

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// 64-bit FNV-1a over the bytes of `data`.
std::uint64_t fnv1a64(std::string_view data);

/// Deterministic split: ids ordered by FNV-1a(decimal seed + id) (ties by id), then cut
/// into sizes given by largest-remainder rounding of the ratios.
DatasetSplit split_dataset(const std::vector<std::string>& shape_ids,
                           const std::array<double, 3>& ratios, std::uint64_t seed);

std::string annotation_to_json(const Annotation& a);
Annotation parse_annotation(std::string_view document);
Annotation read_annotation(const std::filesystem::path& path);
void write_annotation(const Annotation& a, const std::filesystem::path& path);

// Prediction files.

/// Binarized instance mask emitted by a predictor.
struct PredictedMask {
    std::vector<std::size_t> points;
    double confidence = 0.0;
    int semantic = 0;

    bool operator==(const PredictedMask&) const = default;
};

struct InstancePredictionSet {
    std::vector<PredictedMask> masks;

    bool operator==(const InstancePredictionSet&) const = default;
};

/// One integer label per line.
void write_semantic_prediction(const std::vector<int>& labels, const std::filesystem::path& path);
std::vector<int> read_semantic_prediction(const std::filesystem::path& path);

/// `{"masks": [{"points": [...], "confidence": c, "semantic": s}, ...]}`
std::string instance_predictions_to_json(const InstancePredictionSet& p);
InstancePredictionSet parse_instance_predictions(std::string_view document);
void write_instance_predictions(const InstancePredictionSet& p, const std::filesystem::path& path);
InstancePredictionSet read_instance_predictions(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace partseg
