#include "partseg/nnet.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "partseg/error.hpp"
#include "partseg/kernels.hpp"

namespace partseg {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

DenseArray::DenseArray(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(n, fill);
}

namespace {

constexpr std::size_t kInputDim = 3;

std::vector<std::vector<std::size_t>> layer_shapes(const NetworkConfig& c) {
    std::vector<std::vector<std::size_t>> s{
        {c.encoder1, kInputDim}, {c.encoder1},
        {c.encoder2, c.encoder1}, {c.encoder2},
        {c.decoder, c.encoder2}, {c.decoder, c.encoder2}, {c.decoder},
        {c.semantic_labels, c.decoder}, {c.semantic_labels},
    };
    if (c.has_instance_heads()) {
        s.push_back({c.k_masks + 1, c.decoder});
        s.push_back({c.k_masks + 1});
        s.push_back({c.k_masks, c.encoder2});
        s.push_back({c.k_masks});
    }
    return s;
}

void check_params(const NetworkParams& p) {
    const auto shapes = layer_shapes(p.config);
    if (p.tensors.size() != shapes.size())
        throw ConfigError("network has " + std::to_string(p.tensors.size()) + " tensors, config expects " +
                          std::to_string(shapes.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i)
        if (p.tensors[i].shape != shapes[i])
            throw ConfigError("tensor " + std::to_string(i) + " does not match the configured dimensions");
}

void relu(DenseArray& a) {
    for (auto& v : a.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const DenseArray& activated, DenseArray& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (activated.data[i] <= 0.0) grad.data[i] = 0.0;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// dIoU/dp for relaxed IoU against a fixed mask q (entries in [0,1]).
void add_relaxed_iou_grad(const DenseArray& probs, std::size_t col, const std::vector<double>& q,
                          std::size_t q_offset, double scale, DenseArray& grad, double* iou_out) {
    const std::size_t n = probs.rows();
    double inter = 0.0, sum_p = 0.0, sum_q = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = probs(i, col), g = q[q_offset + i];
        inter += p * g;
        sum_p += p;
        sum_q += g;
    }
    const double uni = sum_p + sum_q - inter;
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    if (iou_out) *iou_out = iou;
    if (uni <= 0.0 || scale == 0.0) return;
    const double inv_u2 = 1.0 / (uni * uni);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = q[q_offset + i];
        grad(i, col) += scale * (g * uni - inter * (1.0 - g)) * inv_u2;
    }
}

class ParamRng {
public:
    explicit ParamRng(std::uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * (static_cast<double>(engine_() >> 11) * 0x1.0p-53);
    }
    std::size_t below(std::size_t n) {
        return static_cast<std::size_t>(static_cast<double>(engine_() >> 11) * 0x1.0p-53 *
                                        static_cast<double>(n));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace

std::size_t NetworkParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
    if (config.encoder1 == 0 || config.encoder2 == 0 || config.decoder == 0 || config.semantic_labels == 0)
        throw ConfigError("network widths and label count must be positive");
    NetworkParams p;
    p.config = config;
    ParamRng rng(seed);
    for (const auto& shape : layer_shapes(config)) {
        DenseArray t(shape);
        if (shape.size() == 2) {
            std::size_t fan_in = shape[1];
            if (p.tensors.size() == static_cast<std::size_t>(Layer::DecPointW) ||
                p.tensors.size() == static_cast<std::size_t>(Layer::DecGlobalW))
                fan_in *= 2;
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.data) v = rng.uniform(-limit, limit);
        }
        p.tensors.push_back(std::move(t));
    }
    return p;
}

DenseArray softmax_rows(const DenseArray& logits) {
    DenseArray out(logits.shape);
    const std::size_t n = logits.rows(), c = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data.data() + i * c;
        double* o = out.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
    }
    return out;
}

ForwardCache forward_cached(const NetworkParams& params, const PointCloud& cloud) {
    check_params(params);
    const auto& c = params.config;
    const std::size_t n = cloud.size();
    if (n == 0) throw InvalidArgument("forward: empty point cloud");

    ForwardCache f;
    f.points = n;
    f.input.assign(cloud.xyz().begin(), cloud.xyz().end());

    f.enc1 = DenseArray({n, c.encoder1});
    kernels::linear_forward(f.input, params[Layer::Enc1W].data, params[Layer::Enc1B].data,
                            f.enc1.data, n, kInputDim, c.encoder1);
    relu(f.enc1);

    f.enc2 = DenseArray({n, c.encoder2});
    kernels::linear_forward(f.enc1.data, params[Layer::Enc2W].data, params[Layer::Enc2B].data,
                            f.enc2.data, n, c.encoder1, c.encoder2);
    relu(f.enc2);

    f.global.assign(c.encoder2, 0.0);
    f.global_argmax.assign(c.encoder2, 0);
    kernels::column_max(f.enc2.data, n, c.encoder2, f.global, f.global_argmax);

    // Global half of the decoder folds into a per-shape bias.
    std::vector<double> dec_bias(c.decoder);
    kernels::linear_forward(f.global, params[Layer::DecGlobalW].data, params[Layer::DecB].data,
                            dec_bias, 1, c.encoder2, c.decoder);
    f.dec = DenseArray({n, c.decoder});
    kernels::linear_forward(f.enc2.data, params[Layer::DecPointW].data, dec_bias, f.dec.data, n,
                            c.encoder2, c.decoder);
    relu(f.dec);

    auto& out = f.output;
    out.semantic_logits = DenseArray({n, c.semantic_labels});
    kernels::linear_forward(f.dec.data, params[Layer::SemW].data, params[Layer::SemB].data,
                            out.semantic_logits.data, n, c.decoder, c.semantic_labels);

    if (c.has_instance_heads()) {
        const std::size_t channels = c.k_masks + 1;
        DenseArray mask_logits({n, channels});
        kernels::linear_forward(f.dec.data, params[Layer::MaskW].data, params[Layer::MaskB].data,
                                mask_logits.data, n, c.decoder, channels);
        out.mask_probabilities = softmax_rows(mask_logits);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < channels; ++j) sum += out.mask_probabilities(i, j);
            if (!(std::abs(sum - 1.0) <= 1e-6))
                throw InvalidData("mask probabilities of point " + std::to_string(i) +
                                  " sum to " + std::to_string(sum));
        }

        f.confidence_logits.assign(c.k_masks, 0.0);
        kernels::linear_forward(f.global, params[Layer::ConfW].data, params[Layer::ConfB].data,
                                f.confidence_logits, 1, c.encoder2, c.k_masks);
        out.confidences.resize(c.k_masks);
        for (std::size_t k = 0; k < c.k_masks; ++k) out.confidences[k] = sigmoid(f.confidence_logits[k]);
    }
    return f;
}

NetworkOutput forward(const NetworkParams& params, const PointCloud& cloud) {
    return std::move(forward_cached(params, cloud).output);
}

std::vector<double> instance_masks(const LevelLabels& gt) {
    const std::size_t n = gt.instance.size();
    std::map<int, std::size_t> row;
    for (const auto& [inst, node] : gt.instance_semantics) row.emplace(inst, row.size());
    std::vector<double> masks(row.size() * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (gt.instance[i] == 0) continue;
        auto it = row.find(gt.instance[i]);
        if (it == row.end())
            throw InvalidData("instance id " + std::to_string(gt.instance[i]) + " has no semantics");
        masks[it->second * n + i] = 1.0;
    }
    return masks;
}

std::vector<double> other_mask(const LevelLabels& gt) {
    std::vector<double> m(gt.semantic.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = gt.semantic[i] == 0 ? 1.0 : 0.0;
    return m;
}

std::vector<std::vector<std::size_t>> semantic_targets(const LevelLabels& gt) {
    std::vector<std::vector<std::size_t>> t(gt.semantic.size());
    for (std::size_t i = 0; i < t.size(); ++i)
        if (gt.semantic[i] > 0) t[i] = {static_cast<std::size_t>(gt.semantic[i] - 1)};
    return t;
}

double multi_label_logit_loss(const DenseArray& logits,
                              const std::vector<std::vector<std::size_t>>& targets,
                              DenseArray* grad) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (targets.size() != n) throw InvalidArgument("target count does not match point count");
    if (grad) *grad = DenseArray({n, c});
    std::size_t labeled = 0;
    for (const auto& t : targets) labeled += t.empty() ? 0 : 1;
    if (labeled == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(labeled);
    double loss = 0.0;
    std::vector<double> prob(c);
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i].empty()) continue;
        const double* row = logits.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += (prob[j] = std::exp(row[j] - mx));
        const double log_z = mx + std::log(sum);
        for (std::size_t y : targets[i]) {
            if (y >= c) throw InvalidData("target logit " + std::to_string(y) + " out of range");
            loss -= row[y] - log_z;
        }
        if (grad) {
            const double m = static_cast<double>(targets[i].size());
            for (std::size_t j = 0; j < c; ++j) (*grad)(i, j) = m * prob[j] / sum * inv;
            for (std::size_t y : targets[i]) (*grad)(i, y) -= inv;
        }
    }
    return loss * inv;
}

LossBreakdown compute_loss(const NetworkOutput& output, const LevelLabels& gt,
                           const LossWeights& weights, const InstanceMatch* frozen,
                           OutputGradient* grad, OverflowPolicy overflow) {
    const std::size_t n = output.semantic_logits.rows();
    const std::size_t s = output.semantic_logits.cols();
    if (gt.semantic.size() != n || gt.instance.size() != n)
        throw InvalidArgument("ground truth covers " + std::to_string(gt.semantic.size()) +
                              " points, output has " + std::to_string(n));
    for (int l : gt.semantic)
        if (l < 0 || static_cast<std::size_t>(l) > s)
            throw ConfigError("ground-truth label " + std::to_string(l) + " exceeds the " +
                              std::to_string(s) + " semantic outputs");

    LossBreakdown b;
    b.l_sem = multi_label_logit_loss(output.semantic_logits, semantic_targets(gt),
                                     grad ? &grad->semantic_logits : nullptr);

    const auto& probs = output.mask_probabilities;
    const bool has_masks = probs.size() > 0;
    if (grad) grad->mask_logits = DenseArray(has_masks ? probs.shape : std::vector<std::size_t>{0});
    if (grad) grad->confidence_logits.assign(output.confidences.size(), 0.0);

    if (has_masks) {
        const std::size_t k = probs.cols() - 1;
        const std::size_t t = static_cast<std::size_t>(gt.instance_count());
        const auto masks = instance_masks(gt);
        if (frozen)
            b.matching = *frozen;
        else if (t > 0)
            b.matching = match_instances(probs.data, n, k, masks, t, overflow);

        DenseArray d_probs(probs.shape);
        const auto& rows = b.matching.gt_rows;
        const double t_used = static_cast<double>(rows.size());
        std::vector<double> d_conf(k, 0.0);
        std::vector<char> matched(k, 0);
        double conf_matched = 0.0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t j = b.matching.assignment.mapping[r];
            matched[j] = 1;
            double iou = 0.0;
            add_relaxed_iou_grad(probs, j, masks, rows[r] * n, grad ? -weights.ins / t_used : 0.0,
                                 d_probs, &iou);
            b.l_ins -= iou / t_used;
            const double target = b.matching.iou.size() > r ? b.matching.iou[r] : iou;
            const double diff = output.confidences[j] - target;
            conf_matched += diff * diff / t_used;
            d_conf[j] += weights.conf * 2.0 * diff / t_used;
        }
        double conf_unmatched = 0.0;
        const std::size_t unmatched = k - rows.size();
        if (weights.regress_unmatched_confidence && unmatched > 0) {
            const double inv = 1.0 / static_cast<double>(unmatched);
            for (std::size_t j = 0; j < k; ++j) {
                if (matched[j]) continue;
                conf_unmatched += output.confidences[j] * output.confidences[j] * inv;
                d_conf[j] += weights.conf * 2.0 * output.confidences[j] * inv;
            }
        }
        b.l_conf = conf_matched + conf_unmatched;

        const auto other = other_mask(gt);
        if (std::any_of(other.begin(), other.end(), [](double v) { return v > 0.0; })) {
            double iou = 0.0;
            add_relaxed_iou_grad(probs, k, other, 0, grad ? -weights.other : 0.0, d_probs, &iou);
            b.l_other = -iou;
        }

        const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
        for (std::size_t j = 0; j <= k; ++j) {
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) sq += probs(i, j) * probs(i, j);
            const double norm = std::sqrt(sq);
            b.l_l21 += norm * inv_sqrt_n;
            if (grad && norm > 0.0) {
                const double scale = weights.l21 * inv_sqrt_n / norm;
                for (std::size_t i = 0; i < n; ++i) d_probs(i, j) += scale * probs(i, j);
            }
        }

        if (grad) {
            // Through the per-point softmax: dz = p ⊙ (dp − ⟨p, dp⟩).
            const std::size_t channels = k + 1;
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < channels; ++j) dot += probs(i, j) * d_probs(i, j);
                for (std::size_t j = 0; j < channels; ++j)
                    grad->mask_logits(i, j) = probs(i, j) * (d_probs(i, j) - dot);
            }
            for (std::size_t j = 0; j < k; ++j) {
                const double c = output.confidences[j];
                grad->confidence_logits[j] = d_conf[j] * c * (1.0 - c);
            }
        }
    }

    b.total = b.l_sem + weights.ins * b.l_ins + weights.other * b.l_other +
              weights.conf * b.l_conf + weights.l21 * b.l_l21;
    return b;
}

std::vector<DenseArray> backward(const NetworkParams& params, const ForwardCache& f,
                                 const OutputGradient& og) {
    check_params(params);
    const auto& c = params.config;
    const std::size_t n = f.points;
    std::vector<DenseArray> g;
    for (const auto& t : params.tensors) g.emplace_back(t.shape);
    auto grad = [&](Layer l) -> DenseArray& { return g[static_cast<std::size_t>(l)]; };

    // Heads.
    DenseArray d_dec({n, c.decoder});
    kernels::linear_backward_input(og.semantic_logits.data, params[Layer::SemW].data, d_dec.data, n,
                                   c.semantic_labels, c.decoder);
    kernels::linear_backward_weights(og.semantic_logits.data, f.dec.data, grad(Layer::SemW).data,
                                     grad(Layer::SemB).data, n, c.semantic_labels, c.decoder);
    std::vector<double> d_global(c.encoder2, 0.0);
    if (c.has_instance_heads()) {
        const std::size_t channels = c.k_masks + 1;
        DenseArray d_dec_mask({n, c.decoder});
        kernels::linear_backward_input(og.mask_logits.data, params[Layer::MaskW].data,
                                       d_dec_mask.data, n, channels, c.decoder);
        for (std::size_t i = 0; i < d_dec.size(); ++i) d_dec.data[i] += d_dec_mask.data[i];
        kernels::linear_backward_weights(og.mask_logits.data, f.dec.data, grad(Layer::MaskW).data,
                                         grad(Layer::MaskB).data, n, channels, c.decoder);

        kernels::linear_backward_weights(og.confidence_logits, f.global, grad(Layer::ConfW).data,
                                         grad(Layer::ConfB).data, 1, c.k_masks, c.encoder2);
        kernels::linear_backward_input(og.confidence_logits, params[Layer::ConfW].data, d_global, 1,
                                       c.k_masks, c.encoder2);
    }

    // Decoder over [h, g].
    relu_backward(f.dec, d_dec);
    DenseArray d_enc2({n, c.encoder2});
    kernels::linear_backward_input(d_dec.data, params[Layer::DecPointW].data, d_enc2.data, n,
                                   c.decoder, c.encoder2);
    kernels::linear_backward_weights(d_dec.data, f.enc2.data, grad(Layer::DecPointW).data,
                                     grad(Layer::DecB).data, n, c.decoder, c.encoder2);
    std::vector<double> d_dec_sum(c.decoder, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c.decoder; ++j) d_dec_sum[j] += d_dec(i, j);
    kernels::linear_backward_weights(d_dec_sum, f.global, grad(Layer::DecGlobalW).data, {}, 1,
                                     c.decoder, c.encoder2);
    std::vector<double> d_global_dec(c.encoder2, 0.0);
    kernels::linear_backward_input(d_dec_sum, params[Layer::DecGlobalW].data, d_global_dec, 1,
                                   c.decoder, c.encoder2);
    for (std::size_t j = 0; j < c.encoder2; ++j) d_global[j] += d_global_dec[j];

    // Max-pool routes to the winning point of each channel.
    for (std::size_t j = 0; j < c.encoder2; ++j) d_enc2(f.global_argmax[j], j) += d_global[j];

    relu_backward(f.enc2, d_enc2);
    DenseArray d_enc1({n, c.encoder1});
    kernels::linear_backward_input(d_enc2.data, params[Layer::Enc2W].data, d_enc1.data, n,
                                   c.encoder2, c.encoder1);
    kernels::linear_backward_weights(d_enc2.data, f.enc1.data, grad(Layer::Enc2W).data,
                                     grad(Layer::Enc2B).data, n, c.encoder2, c.encoder1);

    relu_backward(f.enc1, d_enc1);
    kernels::linear_backward_weights(d_enc1.data, f.input, grad(Layer::Enc1W).data,
                                     grad(Layer::Enc1B).data, n, c.encoder1, kInputDim);
    return g;
}

std::vector<DenseArray> loss_gradient(const NetworkParams& params, const PointCloud& cloud,
                                      const LevelLabels& gt, const LossWeights& weights,
                                      LossBreakdown* breakdown) {
    const ForwardCache f = forward_cached(params, cloud);
    OutputGradient og;
    LossBreakdown b = compute_loss(f.output, gt, weights, nullptr, &og);
    if (breakdown) *breakdown = std::move(b);
    return backward(params, f, og);
}

// Training -------------------------------------------------------------------

namespace {

LossBreakdown sample_loss(const NetworkParams& params, const TrainingSample& sample,
                          const TrainConfig& config, Objective objective,
                          std::vector<DenseArray>* grads) {
    const ForwardCache f = forward_cached(params, sample.cloud);
    OutputGradient og;
    LossBreakdown b;
    if (objective == Objective::Instance) {
        b = compute_loss(f.output, sample.labels, config.weights, nullptr, grads ? &og : nullptr,
                         config.overflow);
    } else {
        const auto targets = sample.targets.empty() ? semantic_targets(sample.labels) : sample.targets;
        b.l_sem = multi_label_logit_loss(f.output.semantic_logits, targets,
                                         grads ? &og.semantic_logits : nullptr);
        b.total = b.l_sem;
        if (grads && params.config.has_instance_heads()) {
            og.mask_logits = DenseArray(f.output.mask_probabilities.shape);
            og.confidence_logits.assign(params.config.k_masks, 0.0);
        }
    }
    if (grads) *grads = backward(params, f, og);
    return b;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b, double w) {
    into.total += w * b.total;
    into.l_sem += w * b.l_sem;
    into.l_ins += w * b.l_ins;
    into.l_other += w * b.l_other;
    into.l_conf += w * b.l_conf;
    into.l_l21 += w * b.l_l21;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    ParamRng rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
    return order;
}

}  // namespace

LossBreakdown evaluate_loss(const NetworkParams& params, const std::vector<TrainingSample>& samples,
                            const TrainConfig& config, Objective objective) {
    std::vector<LossBreakdown> parts(samples.size());
    const long count = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < count; ++i)
        parts[static_cast<std::size_t>(i)] =
            sample_loss(params, samples[static_cast<std::size_t>(i)], config, objective, nullptr);
    LossBreakdown mean;
    for (const auto& p : parts) accumulate(mean, p, 1.0 / static_cast<double>(samples.size()));
    return mean;
}

TrainState train(const std::vector<TrainingSample>& train_set,
                 const std::vector<TrainingSample>& validation_set, const TrainConfig& config,
                 Objective objective, std::vector<EpochLog>* log, const ValidationHook& hook,
                 std::optional<TrainState> resume) {
    if (train_set.empty()) throw InvalidArgument("train: empty dataset");
    if (config.batch == 0) throw ConfigError("batch must be positive");
    if (!(config.lr > 0.0)) throw ConfigError("lr must be positive");

    TrainState state;
    if (resume) {
        state = std::move(*resume);
        if (!(state.params.config == config.network))
            throw ConfigError("checkpoint network does not match the training configuration");
    } else {
        state.params = init_params(config.network, config.seed);
    }
    if (state.optimizer.m.empty()) {
        for (const auto& t : state.params.tensors) {
            state.optimizer.m.emplace_back(t.shape);
            state.optimizer.v.emplace_back(t.shape);
        }
    }

    std::optional<double> best_loss;
    std::size_t since_best = 0;
    NetworkParams best_params;

    for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(train_set.size(), config.seed, epoch);
        LossBreakdown epoch_loss;
        for (std::size_t start = 0; start < order.size(); start += config.batch) {
            const std::size_t stop = std::min(order.size(), start + config.batch);
            const std::size_t size = stop - start;
            std::vector<std::vector<DenseArray>> grads(size);
            std::vector<LossBreakdown> losses(size);
            const long batch_count = static_cast<long>(size);
#pragma omp parallel for schedule(dynamic)
            for (long b = 0; b < batch_count; ++b) {
                const auto bi = static_cast<std::size_t>(b);
                losses[bi] = sample_loss(state.params, train_set[order[start + bi]], config,
                                         objective, &grads[bi]);
            }
            // Ordered reduction keeps the sum independent of the thread count.
            const double inv = 1.0 / static_cast<double>(size);
            auto& opt = state.optimizer;
            ++opt.step;
            const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(opt.step));
            const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(opt.step));
            for (std::size_t ti = 0; ti < state.params.tensors.size(); ++ti) {
                auto& p = state.params.tensors[ti].data;
                auto& m = opt.m[ti].data;
                auto& v = opt.v[ti].data;
                for (std::size_t e = 0; e < p.size(); ++e) {
                    double g = 0.0;
                    for (std::size_t b = 0; b < size; ++b) g += grads[b][ti].data[e];
                    g *= inv;
                    m[e] = config.beta1 * m[e] + (1.0 - config.beta1) * g;
                    v[e] = config.beta2 * v[e] + (1.0 - config.beta2) * g * g;
                    p[e] -= config.lr * (m[e] / bias1) / (std::sqrt(v[e] / bias2) + config.epsilon);
                }
            }
            for (const auto& l : losses)
                accumulate(epoch_loss, l, 1.0 / static_cast<double>(order.size()));
        }
        state.epochs_done = epoch + 1;

        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.total = epoch_loss.total;
        entry.l_sem = epoch_loss.l_sem;
        entry.l_ins = epoch_loss.l_ins;
        entry.l_other = epoch_loss.l_other;
        entry.l_conf = epoch_loss.l_conf;
        entry.l_l21 = epoch_loss.l_l21;
        if (!validation_set.empty())
            entry.validation_loss = evaluate_loss(state.params, validation_set, config, objective).total;
        if (hook) entry.validation_metrics = hook(state.params);
        if (log) log->push_back(entry);

        if (config.patience > 0 && entry.validation_loss) {
            if (!best_loss || *entry.validation_loss < *best_loss) {
                best_loss = entry.validation_loss;
                best_params = state.params;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                break;
            }
        }
    }
    if (best_loss) state.params = std::move(best_params);
    return state;
}

// Config -----------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& value, std::size_t line, const std::string& key) {
    std::istringstream ss(value);
    T out{};
    std::string rest;
    if (!(ss >> out) || (ss >> rest))
        throw ConfigError("config line " + std::to_string(line) + ": bad value '" + value +
                          "' for " + key);
    return out;
}

bool parse_flag(const std::string& value, std::size_t line, const std::string& key) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config line " + std::to_string(line) + ": bad value '" + value + "' for " + key +
                      " (expected true or false)");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    std::set<std::string> seen;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line) + ": expected key=value");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + key + "'");
        if (key == "seed") c.seed = parse_number<std::uint64_t>(value, line, key);
        else if (key == "epochs") c.epochs = parse_number<std::size_t>(value, line, key);
        else if (key == "batch") c.batch = parse_number<std::size_t>(value, line, key);
        else if (key == "lr") c.lr = parse_number<double>(value, line, key);
        else if (key == "lambda_ins") c.weights.ins = parse_number<double>(value, line, key);
        else if (key == "lambda_other") c.weights.other = parse_number<double>(value, line, key);
        else if (key == "lambda_conf") c.weights.conf = parse_number<double>(value, line, key);
        else if (key == "lambda_l21") c.weights.l21 = parse_number<double>(value, line, key);
        else if (key == "k_masks") c.k_masks = parse_number<std::size_t>(value, line, key);
        else if (key == "points") c.points = parse_number<std::size_t>(value, line, key);
        else if (key == "level") c.level = parse_number<int>(value, line, key);
        else if (key == "patience") c.patience = parse_number<std::size_t>(value, line, key);
        else if (key == "normalize") c.normalize = parse_flag(value, line, key);
        else if (key == "conf_unmatched") c.weights.regress_unmatched_confidence = parse_flag(value, line, key);
        else if (key == "overflow") {
            if (value == "fail") c.overflow = OverflowPolicy::Fail;
            else if (value == "keep_largest") c.overflow = OverflowPolicy::KeepLargest;
            else
                throw ConfigError("config line " + std::to_string(line) + ": bad value '" + value +
                                  "' for overflow (expected fail or keep_largest)");
        } else
            throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
    if (c.batch == 0) throw ConfigError("batch must be positive");
    if (c.points == 0) throw ConfigError("points must be positive");
    if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
    return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

std::string resolved_config(const TrainConfig& c) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    kv["seed"] = std::to_string(c.seed);
    kv["epochs"] = std::to_string(c.epochs);
    kv["batch"] = std::to_string(c.batch);
    kv["lr"] = num(c.lr);
    kv["lambda_ins"] = num(c.weights.ins);
    kv["lambda_other"] = num(c.weights.other);
    kv["lambda_conf"] = num(c.weights.conf);
    kv["lambda_l21"] = num(c.weights.l21);
    kv["k_masks"] = std::to_string(c.k_masks);
    kv["points"] = std::to_string(c.points);
    kv["level"] = std::to_string(c.level);
    kv["patience"] = std::to_string(c.patience);
    kv["normalize"] = c.normalize ? "true" : "false";
    kv["conf_unmatched"] = c.weights.regress_unmatched_confidence ? "true" : "false";
    kv["overflow"] = c.overflow == OverflowPolicy::Fail ? "fail" : "keep_largest";
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

// Prediction -------------------------------------------------------------------

InstancePredictionSet binarize(const NetworkOutput& output, std::size_t min_points) {
    InstancePredictionSet set;
    const auto& probs = output.mask_probabilities;
    if (probs.size() == 0) return set;
    const std::size_t n = probs.rows(), channels = probs.cols(), k = channels - 1;
    std::vector<std::vector<std::size_t>> members(channels);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < channels; ++j)
            if (probs(i, j) > probs(i, best)) best = j;
        members[best].push_back(i);
    }
    const DenseArray sem = softmax_rows(output.semantic_logits);
    const std::size_t s = sem.cols();
    for (std::size_t j = 0; j < k; ++j) {
        if (members[j].size() < min_points || members[j].empty()) continue;
        std::vector<double> score(s, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t l = 0; l < s; ++l) score[l] += probs(i, j) * sem(i, l);
        const auto label = std::max_element(score.begin(), score.end()) - score.begin();
        set.masks.push_back({members[j], output.confidences[j], static_cast<int>(label) + 1});
    }
    return set;
}

InstancePredictionSet predict_instances(const NetworkParams& params, const PointCloud& cloud,
                                        std::size_t min_points) {
    return binarize(forward(params, cloud), min_points);
}

std::vector<int> predict_semantic(const NetworkParams& params, const PointCloud& cloud) {
    const NetworkOutput out = forward(params, cloud);
    const auto& logits = out.semantic_logits;
    std::vector<int> labels(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        labels[i] = static_cast<int>(best) + 1;
    }
    return labels;
}

// Checkpoints ----------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'S', 'K', 'W'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

void put_tensor(std::ostream& out, const DenseArray& t) {
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

struct Reader {
    std::ifstream in;
    std::string name;
    std::size_t offset = 0;

    std::uint32_t u32() {
        std::uint32_t v = 0;
        if (!in.read(reinterpret_cast<char*>(&v), 4)) throw FormatError(name, offset, "truncated header");
        offset += 4;
        return v;
    }
    DenseArray tensor() {
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 4) throw FormatError(name, offset, "bad tensor rank");
        std::vector<std::size_t> dims;
        for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(u32());
        DenseArray t(dims);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double))))
            throw FormatError(name, offset, "truncated tensor payload");
        offset += t.data.size() * sizeof(double);
        return t;
    }
};

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path,
                     bool include_optimizer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const bool with_opt = include_optimizer && !state.optimizer.m.empty();
    out.write(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(state.params.tensors.size()));
    put_u32(out, with_opt ? 1 : 0);
    for (const auto& t : state.params.tensors) put_tensor(out, t);
    if (with_opt) {
        for (const auto& t : state.optimizer.m) put_tensor(out, t);
        for (const auto& t : state.optimizer.v) put_tensor(out, t);
        DenseArray meta({2});
        meta.data = {static_cast<double>(state.optimizer.step), static_cast<double>(state.epochs_done)};
        put_tensor(out, meta);
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    Reader r{std::ifstream(path, std::ios::binary), path.string(), 0};
    if (!r.in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    char magic[4];
    if (!r.in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(r.name, 0, "missing PSKW magic");
    r.offset = 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(r.name, 4, "unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    const std::uint32_t with_opt = r.u32();
    if (count != 9 && count != 13) throw FormatError(r.name, 8, "unexpected tensor count");

    TrainState s;
    for (std::uint32_t i = 0; i < count; ++i) s.params.tensors.push_back(r.tensor());
    auto& c = s.params.config;
    const auto& t = s.params.tensors;
    c.encoder1 = t[0].shape[0];
    c.encoder2 = t[2].shape[0];
    c.decoder = t[4].shape[0];
    c.semantic_labels = t[7].shape[0];
    c.k_masks = count == 13 ? t[11].shape[0] : 0;
    check_params(s.params);
    if (with_opt) {
        for (std::uint32_t i = 0; i < count; ++i) s.optimizer.m.push_back(r.tensor());
        for (std::uint32_t i = 0; i < count; ++i) s.optimizer.v.push_back(r.tensor());
        const DenseArray meta = r.tensor();
        if (meta.size() != 2) throw FormatError(r.name, r.offset, "bad optimizer metadata");
        s.optimizer.step = static_cast<std::uint64_t>(meta.data[0]);
        s.epochs_done = static_cast<std::size_t>(meta.data[1]);
    }
    return s;
}

}  // namespace partseg
