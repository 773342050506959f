#include "partseg/infer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "partseg/error.hpp"

namespace partseg {

using nlohmann::json;

NodeScores::NodeScores(std::vector<NodeId> l, std::size_t n)
    : labels(std::move(l)), points(n), data(labels.size() * n, 0.0) {}

std::size_t NodeScores::column_of(NodeId node) const {
    const auto it = std::find(labels.begin(), labels.end(), node);
    return static_cast<std::size_t>(it - labels.begin());
}

NodeScores softmax_scores(const DenseArray& logits, std::vector<NodeId> labels) {
    if (logits.cols() != labels.size())
        throw InvalidArgument("logit width " + std::to_string(logits.cols()) + " does not match " +
                              std::to_string(labels.size()) + " labels");
    const DenseArray p = softmax_rows(logits);
    NodeScores s(std::move(labels), logits.rows());
    s.data = p.data;
    return s;
}

bool is_valid_chain(const std::vector<NodeId>& path, const Template& t) {
    if (path.empty() || path.front() != t.root()) return false;
    for (std::size_t i = 1; i < path.size(); ++i) {
        if (!t.contains(path[i])) return false;
        const auto& kids = t.node(path[i - 1]).children;
        if (std::find(kids.begin(), kids.end(), path[i]) == kids.end()) return false;
    }
    return true;
}

NodeScores bottom_up_gather(const NodeScores& leaf_scores, const Template& augmented) {
    const auto leaves = augmented.leaves();
    if (std::set<NodeId>(leaves.begin(), leaves.end()) !=
            std::set<NodeId>(leaf_scores.labels.begin(), leaf_scores.labels.end()) ||
        leaves.size() != leaf_scores.labels.size())
        throw InvalidArgument("leaf scores do not cover exactly the template leaves");

    const auto order = augmented.preorder();
    NodeScores out(order, leaf_scores.points);
    std::map<NodeId, std::size_t> column;
    for (std::size_t c = 0; c < order.size(); ++c) column[order[c]] = c;
    std::vector<std::size_t> source(order.size(), 0);
    for (std::size_t c = 0; c < leaf_scores.labels.size(); ++c)
        source[column[leaf_scores.labels[c]]] = c;

    for (std::size_t i = 0; i < out.points; ++i) {
        // Reverse preorder visits children before their parent.
        for (std::size_t c = order.size(); c-- > 0;) {
            const auto& node = augmented.node(order[c]);
            double v = 0.0;
            if (node.kind == NodeKind::Leaf)
                v = leaf_scores.at(i, source[c]);
            else
                for (NodeId child : node.children) v += out.at(i, column[child]);
            out.at(i, c) = v;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> path_targets(const std::vector<std::vector<NodeId>>& paths,
                                                   const std::vector<NodeId>& labels) {
    std::map<NodeId, std::size_t> column;
    for (std::size_t c = 0; c < labels.size(); ++c) column[labels[c]] = c;
    std::vector<std::vector<std::size_t>> out(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) {
        for (std::size_t d = 1; d < paths[i].size(); ++d) {
            const auto it = column.find(paths[i][d]);
            if (it == column.end())
                throw InvalidArgument("path node " + std::to_string(paths[i][d]) +
                                      " has no score column");
            out[i].push_back(it->second);
        }
    }
    return out;
}

double multi_label_loss(const NodeScores& node_scores,
                        const std::vector<std::vector<NodeId>>& gt_paths) {
    if (gt_paths.size() != node_scores.points)
        throw InvalidArgument("path count does not match point count");
    const auto targets = path_targets(gt_paths, node_scores.labels);
    double total = 0.0;
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].empty()) continue;
        ++labeled;
        for (std::size_t c : targets[i]) total -= std::log(node_scores.at(i, c));
    }
    return labeled == 0 ? 0.0 : total / static_cast<double>(labeled);
}

PathPrediction top_down_decode(const NodeScores& node_scores, const Template& t) {
    std::map<NodeId, std::size_t> column;
    for (std::size_t c = 0; c < node_scores.labels.size(); ++c) column[node_scores.labels[c]] = c;
    for (const auto& [id, node] : t.nodes())
        if (id != t.root() && column.count(id) == 0)
            throw InvalidArgument("node " + std::to_string(id) + " has no score column");

    PathPrediction out;
    out.paths.resize(node_scores.points);
    for (std::size_t i = 0; i < node_scores.points; ++i) {
        NodeId cur = t.root();
        auto& path = out.paths[i];
        path.push_back(cur);
        while (!t.is_leaf(cur)) {
            const auto& kids = t.node(cur).children;
            NodeId best = kids.front();
            double best_score = node_scores.at(i, column[best]);
            for (NodeId k : kids) {
                const double s = node_scores.at(i, column[k]);
                if (s > best_score || (s == best_score && k < best)) {
                    best = k;
                    best_score = s;
                }
            }
            cur = best;
            path.push_back(cur);
        }
    }
    return out;
}

PathPrediction ensemble_path_vote(const std::map<int, NodeScores>& level_scores,
                                  const Template& t, const std::map<int, double>& level_weights) {
    if (level_scores.empty()) throw InvalidArgument("ensemble needs at least one level");
    const std::size_t n = level_scores.begin()->second.points;

    struct Term {
        const NodeScores* scores;
        std::size_t column;
        double weight;
    };
    struct Candidate {
        std::vector<NodeId> path;
        std::vector<Term> terms;
        double weight_sum = 0.0;
    };
    std::vector<Candidate> candidates;
    for (const auto& path : t.root_to_leaf_paths()) {
        Candidate c{path, {}, 0.0};
        for (const auto& [level, scores] : level_scores) {
            if (scores.points != n) throw InvalidArgument("levels disagree on the point count");
            const auto wit = level_weights.find(level);
            const double w = wit == level_weights.end() ? 1.0 : wit->second;
            if (!(w > 0.0)) continue;
            for (NodeId node : path) {
                const std::size_t col = scores.column_of(node);
                if (col < scores.columns()) {
                    c.terms.push_back({&scores, col, w});
                    c.weight_sum += w;
                    break;
                }
            }
        }
        if (!c.terms.empty()) candidates.push_back(std::move(c));
    }
    if (candidates.empty()) throw UndefinedScore("no root-to-leaf path meets any scored level");

    PathPrediction out;
    out.paths.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Candidate* best = nullptr;
        double best_score = 0.0;
        for (const auto& c : candidates) {
            double s = 0.0;
            for (const auto& term : c.terms) s += term.weight * std::log(term.scores->at(i, term.column));
            s /= c.weight_sum;
            if (std::isnan(s)) s = -std::numeric_limits<double>::infinity();
            if (!best || s > best_score || (s == best_score && c.path < best->path)) {
                best = &c;
                best_score = s;
            }
        }
        out.paths[i] = best->path;
    }
    return out;
}

std::string_view to_string(HierStrategy s) {
    switch (s) {
        case HierStrategy::BottomUp: return "bottom-up";
        case HierStrategy::TopDown: return "top-down";
        case HierStrategy::Ensemble: return "ensemble";
    }
    return "?";
}

HierStrategy parse_strategy(std::string_view name) {
    for (auto s : {HierStrategy::BottomUp, HierStrategy::TopDown, HierStrategy::Ensemble})
        if (to_string(s) == name) return s;
    throw InvalidArgument("unknown strategy '" + std::string(name) +
                          "' (expected bottom-up, top-down or ensemble)");
}

std::vector<NodeId> hierarchical_labels(HierStrategy strategy, int level, const Template& t) {
    const Template aug = augment_other(t);
    switch (strategy) {
        case HierStrategy::BottomUp: return aug.leaves();
        case HierStrategy::TopDown: {
            std::vector<NodeId> labels;
            for (NodeId id : aug.preorder())
                if (id != aug.root()) labels.push_back(id);
            return labels;
        }
        case HierStrategy::Ensemble: return t.level_cut(level);
    }
    return {};
}

std::vector<TrainingSample> hierarchical_samples(HierStrategy strategy, int level,
                                                 const Template& t,
                                                 const std::vector<AnnotatedCloud>& data) {
    const Template aug = augment_other(t);
    const auto labels = hierarchical_labels(strategy, level, t);
    std::vector<TrainingSample> out;
    out.reserve(data.size());
    for (const auto& d : data) {
        TrainingSample s;
        s.cloud = d.cloud;
        s.labels = flatten(d.annotation, t, strategy == HierStrategy::Ensemble ? level : t.finest_level());
        if (strategy == HierStrategy::Ensemble) {
            s.targets.resize(s.labels.semantic.size());
            for (std::size_t i = 0; i < s.targets.size(); ++i)
                if (s.labels.semantic[i] > 0)
                    s.targets[i] = {static_cast<std::size_t>(s.labels.semantic[i] - 1)};
        } else {
            auto paths = point_paths(d.annotation, aug);
            if (strategy == HierStrategy::BottomUp)
                for (auto& p : paths)
                    if (!p.empty()) p = {p.front(), p.back()};
            s.targets = path_targets(paths, labels);
        }
        out.push_back(std::move(s));
    }
    return out;
}

HierarchicalModel train_hierarchical(HierStrategy strategy, const Template& t,
                                     const std::vector<AnnotatedCloud>& train_set,
                                     const std::vector<AnnotatedCloud>& validation_set,
                                     const TrainConfig& config) {
    HierarchicalModel model;
    model.strategy = strategy;
    std::vector<int> members{0};
    if (strategy == HierStrategy::Ensemble) {
        members.clear();
        for (const auto& [level, cut] : t.level_cuts()) members.push_back(level);
    }
    for (int member : members) {
        TrainConfig c = config;
        c.network.semantic_labels = hierarchical_labels(strategy, member, t).size();
        c.network.k_masks = 0;
        c.seed = config.seed + static_cast<std::uint64_t>(member);
        const auto objective = strategy == HierStrategy::TopDown ? Objective::MultiLabel : Objective::Semantic;
        model.nets[member] = train(hierarchical_samples(strategy, member, t, train_set),
                                   hierarchical_samples(strategy, member, t, validation_set), c,
                                   objective)
                                 .params;
    }
    return model;
}

PathPrediction predict_paths(const HierarchicalModel& model, const Template& t,
                             const PointCloud& cloud) {
    const Template aug = augment_other(t);
    PathPrediction out;
    switch (model.strategy) {
        case HierStrategy::BottomUp: {
            const auto scores = softmax_scores(forward(model.nets.at(0), cloud).semantic_logits,
                                               hierarchical_labels(model.strategy, 0, t));
            out = top_down_decode(bottom_up_gather(scores, aug), aug);
            break;
        }
        case HierStrategy::TopDown: {
            const auto scores = softmax_scores(forward(model.nets.at(0), cloud).semantic_logits,
                                               hierarchical_labels(model.strategy, 0, t));
            out = top_down_decode(scores, aug);
            break;
        }
        case HierStrategy::Ensemble: {
            std::map<int, NodeScores> levels;
            for (const auto& [level, net] : model.nets)
                levels[level] = softmax_scores(forward(net, cloud).semantic_logits,
                                               hierarchical_labels(model.strategy, level, t));
            out = ensemble_path_vote(levels, t, model.level_weights);
            break;
        }
    }
    out.shape_id = cloud.shape_id();
    return out;
}

std::string path_prediction_to_json(const PathPrediction& p) {
    json j;
    j["shape_id"] = p.shape_id;
    j["paths"] = p.paths;
    return j.dump() + "\n";
}

PathPrediction parse_path_prediction(std::string_view document) {
    try {
        const json j = json::parse(document);
        PathPrediction p;
        p.shape_id = j.at("shape_id").get<std::string>();
        p.paths = j.at("paths").get<std::vector<std::vector<NodeId>>>();
        return p;
    } catch (const json::parse_error& e) {
        throw FormatError("path prediction", e.byte, e.what());
    } catch (const json::exception& e) {
        throw InvalidData(std::string("path prediction: ") + e.what());
    }
}

}  // namespace partseg
