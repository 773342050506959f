#pragma once

// Slow reference evaluators built from plain set arithmetic.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "partseg/metrics.hpp"

namespace oracle {

using PointSet = std::set<std::pair<std::string, std::size_t>>;

inline double set_iou(const PointSet& a, const PointSet& b) {
    PointSet inter, uni;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(inter, inter.end()));
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(uni, uni.end()));
    return uni.empty() ? -1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Pooled part-category mIoU over labels 1..labels.
inline double part_category_miou(const std::vector<partseg::SemanticCase>& cases, int labels) {
    std::vector<double> ious;
    for (int c = 1; c <= labels; ++c) {
        PointSet gt, pred;
        for (const auto& s : cases)
            for (std::size_t i = 0; i < s.ground_truth.size(); ++i) {
                if (s.ground_truth[i] == 0) continue;
                if (s.ground_truth[i] == c) gt.insert({s.shape_id, i});
                if (s.prediction[i] == c) pred.insert({s.shape_id, i});
            }
        const double iou = set_iou(gt, pred);
        if (iou >= 0.0) ious.push_back(iou);
    }
    return mean(ious);
}

inline double shape_miou(const std::vector<partseg::SemanticCase>& cases, int labels) {
    std::vector<double> shapes;
    for (const auto& s : cases) {
        std::vector<double> ious;
        for (int c = 1; c <= labels; ++c) {
            PointSet gt, pred;
            for (std::size_t i = 0; i < s.ground_truth.size(); ++i) {
                if (s.ground_truth[i] == 0) continue;
                if (s.ground_truth[i] == c) gt.insert({s.shape_id, i});
                if (s.prediction[i] == c) pred.insert({s.shape_id, i});
            }
            const double iou = set_iou(gt, pred);
            if (iou >= 0.0) ious.push_back(iou);
        }
        if (!ious.empty()) shapes.push_back(mean(ious));
    }
    return mean(shapes);
}

/// AP for one category: rank, then for every cut-off k rebuild the matching of the first k
/// predictions from scratch and record (recall, precision); area under the upper envelope.
inline double average_precision(const std::vector<partseg::InstanceCase>& cases, int category,
                                 double threshold = 0.5) {
    struct Pred {
        double conf;
        std::string shape;
        std::size_t index;
        std::set<std::size_t> points;
    };
    std::vector<Pred> preds;
    std::size_t gt_total = 0;
    for (const auto& c : cases) {
        for (const auto& g : c.ground_truth) gt_total += g.semantic == category ? 1 : 0;
        for (std::size_t m = 0; m < c.prediction.masks.size(); ++m) {
            const auto& mask = c.prediction.masks[m];
            if (mask.semantic == category)
                preds.push_back({mask.confidence, c.shape_id, m, {mask.points.begin(), mask.points.end()}});
        }
    }
    if (gt_total == 0) return 0.0;
    std::sort(preds.begin(), preds.end(), [](const Pred& a, const Pred& b) {
        return std::make_tuple(-a.conf, a.shape, a.index) < std::make_tuple(-b.conf, b.shape, b.index);
    });
    auto iou = [](const std::set<std::size_t>& a, const std::vector<std::size_t>& bv) {
        const std::set<std::size_t> b(bv.begin(), bv.end());
        std::size_t inter = 0;
        for (auto x : a) inter += b.count(x);
        const std::size_t uni = a.size() + b.size() - inter;
        return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    };
    std::vector<double> recall, precision;
    for (std::size_t k = 1; k <= preds.size(); ++k) {
        std::map<std::string, std::set<std::size_t>> used;
        std::size_t tp = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const auto& p = preds[i];
            const partseg::InstanceCase* shape = nullptr;
            for (const auto& c : cases)
                if (c.shape_id == p.shape) shape = &c;
            double best = threshold;
            long best_g = -1;
            for (std::size_t g = 0; g < shape->ground_truth.size(); ++g) {
                if (shape->ground_truth[g].semantic != category || used[p.shape].count(g)) continue;
                const double v = iou(p.points, shape->ground_truth[g].points);
                if (v > best) {
                    best = v;
                    best_g = static_cast<long>(g);
                }
            }
            if (best_g >= 0) {
                used[p.shape].insert(static_cast<std::size_t>(best_g));
                ++tp;
            }
        }
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_total));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k));
    }
    double area = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        double envelope = 0.0;
        for (std::size_t j = i; j < recall.size(); ++j) envelope = std::max(envelope, precision[j]);
        area += (recall[i] - prev) * envelope;
        prev = recall[i];
    }
    return area;
}

inline double part_category_map(const std::vector<partseg::InstanceCase>& cases) {
    std::set<int> cats;
    for (const auto& c : cases)
        for (const auto& g : c.ground_truth) cats.insert(g.semantic);
    std::vector<double> aps;
    for (int cat : cats) aps.push_back(average_precision(cases, cat));
    return mean(aps);
}

inline double shape_map(const std::vector<partseg::InstanceCase>& cases) {
    std::vector<double> shapes;
    for (const auto& c : cases) {
        std::set<int> cats;
        for (const auto& g : c.ground_truth) cats.insert(g.semantic);
        for (const auto& m : c.prediction.masks) cats.insert(m.semantic);
        if (cats.empty()) continue;
        std::vector<double> aps;
        for (int cat : cats) aps.push_back(average_precision({c}, cat));
        shapes.push_back(mean(aps));
    }
    return mean(shapes);
}

}  // namespace oracle
