#pragma once

// PointNet-style per-point network with hand-written reverse-mode gradients.
//
//   x (3) → relu(64) → relu(128) ─┬─ per-point feature h ─┐
//                                 └─ max over points → g ─┴→ relu(128) → semantic logits (S)
//                                                                      → mask logits (K+1), softmax
//   g → sigmoid → confidences (K)
//
// The decoder's input is the concatenation [h, g]; its weight is stored as two blocks
// (point part and global part) so the global half is applied once per shape.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/geometry.hpp"
#include "partseg/matching.hpp"

namespace partseg {

/// Row-major array of doubles.
struct DenseArray {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    DenseArray() = default;
    explicit DenseArray(std::vector<std::size_t> dims, double fill = 0.0);

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    std::size_t size() const { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const DenseArray&) const = default;
};

struct NetworkConfig {
    std::size_t encoder1 = 64;
    std::size_t encoder2 = 128;
    std::size_t decoder = 128;
    std::size_t semantic_labels = 1;
    std::size_t k_masks = 24;  // 0 disables the mask and confidence heads

    bool has_instance_heads() const { return k_masks > 0; }
    bool operator==(const NetworkConfig&) const = default;
};

/// Tensor slots in checkpoint order.
enum class Layer : std::size_t {
    Enc1W, Enc1B, Enc2W, Enc2B, DecPointW, DecGlobalW, DecB, SemW, SemB, MaskW, MaskB, ConfW, ConfB,
};

struct NetworkParams {
    NetworkConfig config;
    std::vector<DenseArray> tensors;

    DenseArray& operator[](Layer l) { return tensors[static_cast<std::size_t>(l)]; }
    const DenseArray& operator[](Layer l) const { return tensors[static_cast<std::size_t>(l)]; }

    std::size_t parameter_count() const;
    bool operator==(const NetworkParams&) const = default;
};

/// He-uniform weights, zero biases, deterministic per seed.
NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

struct NetworkOutput {
    DenseArray semantic_logits;     // N×S
    DenseArray mask_probabilities;  // N×(K+1), last column is the "other" mask
    std::vector<double> confidences;
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    std::size_t points = 0;
    std::vector<double> input;  // N×3
    DenseArray enc1, enc2;      // post-ReLU
    std::vector<double> global;
    std::vector<std::size_t> global_argmax;
    DenseArray dec;  // post-ReLU
    std::vector<double> confidence_logits;
    NetworkOutput output;
};

/// Throws ConfigError when the parameters do not match their own config.
NetworkOutput forward(const NetworkParams& params, const PointCloud& cloud);
ForwardCache forward_cached(const NetworkParams& params, const PointCloud& cloud);

// Loss ------------------------------------------------------------------------

struct LossWeights {
    double ins = 1.0;
    double other = 1.0;
    double conf = 1.0;
    double l21 = 0.1;
    bool regress_unmatched_confidence = true;  // unmatched masks regress toward 0
};

struct LossBreakdown {
    double total = 0.0;
    double l_sem = 0.0;
    double l_ins = 0.0;
    double l_other = 0.0;
    double l_conf = 0.0;
    double l_l21 = 0.0;
    InstanceMatch matching;
};

/// Binary ground-truth masks (T×N, instance order) and the "other" mask from a level view.
std::vector<double> instance_masks(const LevelLabels& gt);
std::vector<double> other_mask(const LevelLabels& gt);

struct OutputGradient {
    DenseArray semantic_logits;
    DenseArray mask_logits;
    std::vector<double> confidence_logits;
};

/// Full five-term loss. With `frozen`, its assignment and its IoU targets are reused
/// instead of re-matching (the loss is then smooth in the network outputs).
LossBreakdown compute_loss(const NetworkOutput& output, const LevelLabels& gt,
                           const LossWeights& weights,
                           const InstanceMatch* frozen = nullptr,
                           OutputGradient* grad = nullptr,
                           OverflowPolicy overflow = OverflowPolicy::Fail);

/// Mean −Σ log softmax over each labeled point's target logits; `targets[n]` lists
/// logit indices (empty = skip the point). Single-element lists give cross-entropy.
double multi_label_logit_loss(const DenseArray& logits,
                              const std::vector<std::vector<std::size_t>>& targets,
                              DenseArray* grad = nullptr);

/// Cross-entropy targets from level labels: label id l ↦ logit l−1.
std::vector<std::vector<std::size_t>> semantic_targets(const LevelLabels& gt);

/// Parameter gradients, same layout as NetworkParams::tensors.
std::vector<DenseArray> backward(const NetworkParams& params, const ForwardCache& cache,
                                 const OutputGradient& grad);

/// Gradient of the total five-term loss for one shape, with the matching found at the
/// current parameters held fixed.
std::vector<DenseArray> loss_gradient(const NetworkParams& params, const PointCloud& cloud,
                                      const LevelLabels& gt, const LossWeights& weights,
                                      LossBreakdown* breakdown = nullptr);

// Training --------------------------------------------------------------------

enum class Objective {
    Instance,    // semantic cross-entropy + matched-mask terms
    Semantic,    // cross-entropy only
    MultiLabel,  // −Σ log s over each point's target set
};

struct TrainConfig {
    std::uint64_t seed = 1;
    std::size_t epochs = 100;
    std::size_t batch = 8;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossWeights weights;
    std::size_t k_masks = 24;
    std::size_t points = 1024;
    int level = 0;              // 0 = finest level of the template
    std::size_t patience = 0;   // 0 disables early stopping
    bool normalize = true;      // center and scale clouds before the network
    NetworkConfig network;      // widths; label/mask counts are filled in by the caller
    OverflowPolicy overflow = OverflowPolicy::Fail;
};

/// Reads `key=value` lines (`#` comments). Unknown keys and malformed values throw
/// ConfigError naming the line.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig read_train_config(const std::filesystem::path& path);
/// Every key with its resolved value, sorted by key.
std::string resolved_config(const TrainConfig& config);

struct TrainingSample {
    PointCloud cloud;  // already normalized if desired
    LevelLabels labels;
    std::vector<std::vector<std::size_t>> targets;  // per-point logit targets
};

struct OptimizerState {
    std::vector<DenseArray> m, v;
    std::uint64_t step = 0;

    bool operator==(const OptimizerState&) const = default;
};

struct EpochLog {
    std::size_t epoch = 0;
    double total = 0.0, l_sem = 0.0, l_ins = 0.0, l_other = 0.0, l_conf = 0.0, l_l21 = 0.0;
    std::optional<double> validation_loss;
    std::map<std::string, double> validation_metrics;
};

struct TrainState {
    NetworkParams params;
    OptimizerState optimizer;
    std::size_t epochs_done = 0;
};

using ValidationHook = std::function<std::map<std::string, double>(const NetworkParams&)>;

/// Mini-batch Adam; bit-deterministic for a given seed. Resumes from `resume` when given.
/// With patience > 0 and validation data, stops after that many epochs without a
/// validation-loss improvement and returns the best parameters seen.
TrainState train(const std::vector<TrainingSample>& train_set,
                 const std::vector<TrainingSample>& validation_set, const TrainConfig& config,
                 Objective objective, std::vector<EpochLog>* log = nullptr,
                 const ValidationHook& hook = {}, std::optional<TrainState> resume = std::nullopt);

/// Mean loss of the objective over samples (no gradient).
LossBreakdown evaluate_loss(const NetworkParams& params, const std::vector<TrainingSample>& samples,
                            const TrainConfig& config, Objective objective);

// Prediction --------------------------------------------------------------------

/// Argmax over K+1 channels per point; masks with fewer than min_points points are dropped.
InstancePredictionSet predict_instances(const NetworkParams& params, const PointCloud& cloud,
                                        std::size_t min_points = 1);
InstancePredictionSet binarize(const NetworkOutput& output, std::size_t min_points = 1);

/// Label ids (1-based) from the semantic head.
std::vector<int> predict_semantic(const NetworkParams& params, const PointCloud& cloud);

/// Row-wise softmax of logits.
DenseArray softmax_rows(const DenseArray& logits);

// Checkpoints: "PSKW", u32 version, u32 tensor count, u32 has-optimizer-state, then per
// tensor u32 rank, u32 dims, f64 LE payload. Optimizer state appends m and v tensors and a
// final [step, epochs_done] tensor.

void save_checkpoint(const TrainState& state, const std::filesystem::path& path,
                     bool include_optimizer = true);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace partseg
