#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/nnet.hpp"

namespace fixtures {

inline partseg::PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, const std::string& id = "r") {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> xyz(3 * n);
    for (auto& v : xyz) v = u(rng);
    return partseg::PointCloud(id, std::move(xyz));
}

/// Random level labels with `t` non-empty instances over `s` labels and a few unlabeled points.
inline partseg::LevelLabels random_labels(std::mt19937_64& rng, std::size_t n, std::size_t s,
                                          std::size_t t, std::size_t unlabeled = 3) {
    partseg::LevelLabels l;
    l.level = 3;
    l.semantic.assign(n, 0);
    l.instance.assign(n, 0);
    std::vector<int> inst_label(t);
    for (std::size_t i = 0; i < t; ++i) {
        inst_label[i] = 1 + static_cast<int>(rng() % s);
        l.instance_semantics[static_cast<int>(i) + 1] = static_cast<partseg::NodeId>(inst_label[i]);
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (p < unlabeled) continue;
        // First t labeled points seed every instance, the rest are random.
        const std::size_t inst = p - unlabeled < t ? p - unlabeled : rng() % t;
        l.instance[p] = static_cast<int>(inst) + 1;
        l.semantic[p] = inst_label[inst];
    }
    return l;
}

inline partseg::NetworkConfig small_config(std::size_t s = 3, std::size_t k = 4) {
    partseg::NetworkConfig c;
    c.encoder1 = 6;
    c.encoder2 = 8;
    c.decoder = 7;
    c.semantic_labels = s;
    c.k_masks = k;
    return c;
}

/// Initialized weights with small nonzero biases, keeping pre-activations off the ReLU kink.
inline partseg::NetworkParams random_params(std::mt19937_64& rng, const partseg::NetworkConfig& c) {
    using partseg::Layer;
    auto params = partseg::init_params(c, rng());
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (Layer l : {Layer::Enc1B, Layer::Enc2B, Layer::DecB, Layer::SemB, Layer::MaskB, Layer::ConfB})
        for (auto& b : params[l].data) b = u(rng);
    return params;
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst_relative = 0.0;
};

/// Central differences of the total loss with the matching and confidence targets frozen.
inline GradCheck check_gradient(const partseg::NetworkParams& params, const partseg::PointCloud& cloud,
                                const partseg::LevelLabels& gt, const partseg::LossWeights& w,
                                double h = 1e-5) {
    using namespace partseg;
    LossBreakdown base;
    const auto analytic = loss_gradient(params, cloud, gt, w, &base);
    GradCheck out;
    NetworkParams probe = params;
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
        for (std::size_t e = 0; e < params.tensors[ti].size(); ++e) {
            const double orig = params.tensors[ti].data[e];
            probe.tensors[ti].data[e] = orig + h;
            const double up = compute_loss(forward(probe, cloud), gt, w, &base.matching).total;
            probe.tensors[ti].data[e] = orig - h;
            const double down = compute_loss(forward(probe, cloud), gt, w, &base.matching).total;
            probe.tensors[ti].data[e] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[ti].data[e];
            const double diff = std::abs(a - numeric);
            ++out.checked;
            if (std::abs(a) < 1e-6) {
                if (diff >= 1e-7) ++out.failures;
            } else {
                const double rel = diff / std::max(std::abs(a), std::abs(numeric));
                out.worst_relative = std::max(out.worst_relative, rel);
                if (rel >= 1e-4) ++out.failures;
            }
        }
    }
    return out;
}

/// A reference annotation and a copy in which exactly a quarter of every leaf label's
/// points carry the next label (cyclically). Points are dropped from both so that each
/// label's count is a multiple of four.
inline std::pair<partseg::Annotation, partseg::Annotation> quarter_relabeled(const partseg::Annotation& a) {
    using partseg::InstanceNode;
    using partseg::NodeId;
    std::map<NodeId, std::vector<std::size_t>> by_label;
    std::function<void(const InstanceNode&)> collect = [&](const InstanceNode& n) {
        if (n.children.empty())
            for (std::size_t p : n.point_indices) by_label[n.node].push_back(p);
        for (const auto& c : n.children) collect(c);
    };
    collect(a.root);

    std::vector<NodeId> labels;
    std::map<std::size_t, NodeId> target;  // point -> new label
    std::vector<bool> drop(a.point_count, false);
    for (auto& [label, points] : by_label) {
        std::sort(points.begin(), points.end());
        while (points.size() % 4 != 0) {
            drop[points.back()] = true;
            points.pop_back();
        }
        if (!points.empty()) labels.push_back(label);
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& points = by_label[labels[i]];
        for (std::size_t j = 0; j < points.size() / 4; ++j) target[points[j]] = labels[(i + 1) % labels.size()];
    }

    partseg::Annotation reference = a, relabeled = a;
    std::function<void(InstanceNode&, bool)> rewrite = [&](InstanceNode& n, bool move) {
        std::vector<std::size_t> kept;
        for (std::size_t p : n.point_indices)
            if (!drop[p] && !(move && target.count(p))) kept.push_back(p);
        n.point_indices = std::move(kept);
        for (auto& c : n.children) rewrite(c, move);
    };
    rewrite(reference.root, false);
    rewrite(relabeled.root, true);
    // Moved points go to the first leaf instance of their new label.
    std::map<NodeId, InstanceNode*> first_leaf;
    std::function<void(InstanceNode&)> index = [&](InstanceNode& n) {
        if (n.children.empty() && !first_leaf.count(n.node)) first_leaf[n.node] = &n;
        for (auto& c : n.children) index(c);
    };
    index(relabeled.root);
    for (const auto& [p, label] : target) first_leaf.at(label)->point_indices.push_back(p);
    for (auto& [label, leaf] : first_leaf) std::sort(leaf->point_indices.begin(), leaf->point_indices.end());
    return {reference, relabeled};
}

}  // namespace fixtures
