#include "partseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include <json.hpp>

#include "partseg/error.hpp"

namespace partseg {

using nlohmann::json;

double relaxed_iou(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw InvalidArgument("relaxed_iou: mask lengths differ (" + std::to_string(p.size()) +
                              " vs " + std::to_string(q.size()) + ")");
    double inter = 0.0, sum_p = 0.0, sum_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * q[i];
        sum_p += p[i];
        sum_q += q[i];
    }
    const double uni = sum_p + sum_q - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

ReportCell mean_of(const std::vector<double>& values) {
    ReportCell c;
    c.support = values.size();
    if (values.empty()) return c;
    double s = 0.0;
    for (double v : values) s += v;
    c.score = s / static_cast<double>(values.size());
    return c;
}

void finish_level_from_parts(EvalReport& r, int level) {
    std::vector<double> scores;
    for (const auto& [key, cell] : r.per_part_category)
        if (key.first == level) scores.push_back(cell.score);
    r.per_level[level] = mean_of(scores);
    r.average = r.per_level[level];
}

void finish_level_from_shapes(EvalReport& r, int level) {
    std::vector<double> scores;
    for (const auto& [key, cell] : r.per_shape)
        if (key.first == level) scores.push_back(cell.score);
    r.per_level[level] = mean_of(scores);
    r.average = r.per_level[level];
}

void check_unique_shapes(const std::vector<std::string>& ids) {
    std::set<std::string> seen;
    for (const auto& id : ids)
        if (!seen.insert(id).second) throw InvalidArgument("shape '" + id + "' appears twice");
}

void check_semantic_cases(std::span<const SemanticCase> cases, std::size_t labels) {
    std::vector<std::string> ids;
    for (const auto& c : cases) {
        ids.push_back(c.shape_id);
        if (c.ground_truth.size() != c.prediction.size())
            throw InvalidData("shape '" + c.shape_id + "': prediction has " +
                              std::to_string(c.prediction.size()) + " labels for " +
                              std::to_string(c.ground_truth.size()) + " points");
        for (const auto* v : {&c.ground_truth, &c.prediction})
            for (int l : *v)
                if (l < 0 || static_cast<std::size_t>(l) > labels)
                    throw InvalidData("shape '" + c.shape_id + "': label " + std::to_string(l) +
                                      " outside 0.." + std::to_string(labels));
    }
    check_unique_shapes(ids);
}

EvalReport make_report(const char* metric, const Template& t) {
    EvalReport r;
    r.metric = metric;
    r.category = t.category();
    return r;
}

}  // namespace

EvalReport semantic_part_category_miou(std::span<const SemanticCase> cases, const Template& t,
                                       int level, IouPooling pooling) {
    const auto& cut = t.level_cut(level);
    const std::size_t labels = cut.size();
    check_semantic_cases(cases, labels);

    std::vector<std::uint64_t> inter(labels + 1, 0), uni(labels + 1, 0);
    std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> per_shape;
    for (const auto& c : cases) {
        auto& counts = per_shape[c.shape_id];
        counts.assign(labels + 1, {0, 0});
        for (std::size_t i = 0; i < c.ground_truth.size(); ++i) {
            const int g = c.ground_truth[i];
            if (g == 0) continue;  // unlabeled ground truth is not evaluated
            const int p = c.prediction[i];
            if (g == p) {
                ++counts[static_cast<std::size_t>(g)].first;
                ++counts[static_cast<std::size_t>(g)].second;
            } else {
                ++counts[static_cast<std::size_t>(g)].second;
                if (p != 0) ++counts[static_cast<std::size_t>(p)].second;
            }
        }
        for (std::size_t l = 1; l <= labels; ++l) {
            inter[l] += counts[l].first;
            uni[l] += counts[l].second;
        }
    }

    EvalReport r = make_report(
        pooling == IouPooling::Pooled ? "part_category_miou" : "part_category_miou_per_shape", t);
    for (std::size_t l = 1; l <= labels; ++l) {
        const int label = static_cast<int>(l);
        r.part_names[{level, label}] = full_path_label(t, cut[l - 1]);
        if (uni[l] == 0) continue;
        ReportCell cell;
        if (pooling == IouPooling::Pooled) {
            cell.score = static_cast<double>(inter[l]) / static_cast<double>(uni[l]);
            cell.support = uni[l];
        } else {
            std::vector<double> ious;
            for (const auto& [id, counts] : per_shape)
                if (counts[l].second > 0)
                    ious.push_back(static_cast<double>(counts[l].first) /
                                   static_cast<double>(counts[l].second));
            cell = mean_of(ious);
        }
        r.per_part_category[{level, label}] = cell;
    }
    finish_level_from_parts(r, level);
    return r;
}

EvalReport semantic_shape_miou(std::span<const SemanticCase> cases, const Template& t,
                               int level) {
    const std::size_t labels = t.level_cut(level).size();
    check_semantic_cases(cases, labels);
    EvalReport r = make_report("shape_miou", t);
    for (const auto& c : cases) {
        std::vector<std::uint64_t> inter(labels + 1, 0), uni(labels + 1, 0);
        for (std::size_t i = 0; i < c.ground_truth.size(); ++i) {
            const int g = c.ground_truth[i];
            if (g == 0) continue;
            const int p = c.prediction[i];
            ++uni[static_cast<std::size_t>(g)];
            if (g == p)
                ++inter[static_cast<std::size_t>(g)];
            else if (p != 0)
                ++uni[static_cast<std::size_t>(p)];
        }
        // Categories present in ground truth or prediction are exactly those with a union.
        std::vector<double> ious;
        for (std::size_t l = 1; l <= labels; ++l)
            if (uni[l] > 0)
                ious.push_back(static_cast<double>(inter[l]) / static_cast<double>(uni[l]));
        if (ious.empty()) continue;
        r.per_shape[{level, c.shape_id}] = mean_of(ious);
    }
    finish_level_from_shapes(r, level);
    return r;
}

EvalReport hierarchical_miou(std::span<const PathCase> cases, const Template& t) {
    std::vector<NodeId> nodes;
    for (NodeId id : t.preorder())
        if (!t.is_other(id)) nodes.push_back(id);
    std::map<NodeId, std::size_t> slot;
    for (std::size_t i = 0; i < nodes.size(); ++i) slot[nodes[i]] = i;

    std::vector<std::string> ids;
    std::vector<std::uint64_t> inter(nodes.size(), 0), uni(nodes.size(), 0);
    std::vector<char> in_gt(nodes.size()), in_pred(nodes.size());
    for (const auto& c : cases) {
        ids.push_back(c.shape_id);
        if (c.prediction.size() != c.ground_truth.size())
            throw InvalidArgument("shape '" + c.shape_id + "': path predictions cover " +
                                  std::to_string(c.prediction.size()) + " of " +
                                  std::to_string(c.ground_truth.size()) + " points");
        for (std::size_t i = 0; i < c.ground_truth.size(); ++i) {
            if (c.ground_truth[i].empty()) continue;
            std::fill(in_gt.begin(), in_gt.end(), 0);
            std::fill(in_pred.begin(), in_pred.end(), 0);
            for (NodeId id : c.ground_truth[i]) {
                if (!t.contains(id))
                    throw InvalidArgument("ground-truth path uses unknown node " +
                                          std::to_string(id));
                if (auto it = slot.find(id); it != slot.end()) in_gt[it->second] = 1;
            }
            if (c.prediction[i].empty())
                throw InvalidArgument("shape '" + c.shape_id + "': point " + std::to_string(i) +
                                      " has no predicted path");
            for (NodeId id : c.prediction[i]) {
                if (!t.contains(id))
                    throw InvalidArgument("predicted path uses unknown node " +
                                          std::to_string(id));
                if (auto it = slot.find(id); it != slot.end()) in_pred[it->second] = 1;
            }
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (in_gt[k] || in_pred[k]) ++uni[k];
                if (in_gt[k] && in_pred[k]) ++inter[k];
            }
        }
    }
    check_unique_shapes(ids);

    EvalReport r = make_report("hierarchical_miou", t);
    constexpr int kTreeLevel = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const int label = static_cast<int>(nodes[k]);
        r.part_names[{kTreeLevel, label}] = full_path_label(t, nodes[k]);
        if (uni[k] == 0) continue;
        r.per_part_category[{kTreeLevel, label}] = {
            static_cast<double>(inter[k]) / static_cast<double>(uni[k]), uni[k]};
    }
    finish_level_from_parts(r, kTreeLevel);
    return r;
}

std::vector<GtInstance> gt_instances(const LevelLabels& labels) {
    std::map<int, GtInstance> by_id;
    for (const auto& [inst, node] : labels.instance_semantics) by_id[inst];
    for (std::size_t i = 0; i < labels.instance.size(); ++i) {
        const int inst = labels.instance[i];
        if (inst == 0) continue;
        auto& g = by_id[inst];
        g.semantic = labels.semantic[i];
        g.points.push_back(i);
    }
    std::vector<GtInstance> out;
    for (auto& [id, g] : by_id)
        if (!g.points.empty()) out.push_back(std::move(g));
    return out;
}

namespace {

struct PreparedShape {
    const InstanceCase* source = nullptr;
    std::vector<int> gt_owner;                 // per point, GT instance index or −1
    std::vector<std::vector<std::size_t>> pred_points;  // deduplicated
};

PreparedShape prepare(const InstanceCase& c) {
    PreparedShape s;
    s.source = &c;
    s.gt_owner.assign(c.point_count, -1);
    for (std::size_t g = 0; g < c.ground_truth.size(); ++g)
        for (std::size_t p : c.ground_truth[g].points) {
            if (p >= c.point_count)
                throw InvalidData("shape '" + c.shape_id + "': ground-truth point out of range");
            if (s.gt_owner[p] >= 0)
                throw InvalidData("shape '" + c.shape_id + "': ground-truth instances overlap");
            s.gt_owner[p] = static_cast<int>(g);
        }
    for (const auto& m : c.prediction.masks) {
        if (!(m.confidence >= 0.0 && m.confidence <= 1.0))
            throw InvalidData("shape '" + c.shape_id + "': confidence " +
                              std::to_string(m.confidence) + " outside [0,1]");
        std::vector<std::size_t> pts = m.points;
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        if (!pts.empty() && pts.back() >= c.point_count)
            throw InvalidData("shape '" + c.shape_id + "': predicted point out of range");
        s.pred_points.push_back(std::move(pts));
    }
    return s;
}

double mask_iou(const PreparedShape& s, std::size_t pred, std::size_t gt) {
    const auto& pts = s.pred_points[pred];
    std::uint64_t inter = 0;
    for (std::size_t p : pts)
        if (s.gt_owner[p] == static_cast<int>(gt)) ++inter;
    const std::uint64_t uni = pts.size() + s.source->ground_truth[gt].points.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct Ranked {
    double confidence;
    std::size_t shape;  // index into shapes sorted by id
    std::size_t mask;
};

/// Greedy matching in ranked order, then the area under the monotone precision envelope.
double average_precision(const std::vector<PreparedShape>& shapes, std::vector<Ranked> preds,
                         int category, std::uint64_t gt_count, double threshold) {
    if (gt_count == 0) return 0.0;
    std::sort(preds.begin(), preds.end(), [](const Ranked& a, const Ranked& b) {
        return std::tie(b.confidence, a.shape, a.mask) < std::tie(a.confidence, b.shape, b.mask);
    });
    std::map<std::size_t, std::vector<char>> used;
    std::vector<double> precision, recall;
    std::uint64_t tp = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& s = shapes[preds[i].shape];
        auto& taken = used[preds[i].shape];
        taken.resize(s.source->ground_truth.size(), 0);
        double best = threshold;
        int best_gt = -1;
        for (std::size_t g = 0; g < s.source->ground_truth.size(); ++g) {
            if (taken[g] || s.source->ground_truth[g].semantic != category) continue;
            const double iou = mask_iou(s, preds[i].mask, g);
            if (iou > best) {
                best = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            taken[static_cast<std::size_t>(best_gt)] = 1;
            ++tp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
    }
    for (std::size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

std::vector<PreparedShape> prepare_all(std::span<const InstanceCase> cases) {
    std::vector<const InstanceCase*> sorted;
    for (const auto& c : cases) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(),
              [](const InstanceCase* a, const InstanceCase* b) { return a->shape_id < b->shape_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i]->shape_id == sorted[i - 1]->shape_id)
            throw InvalidArgument("shape '" + sorted[i]->shape_id + "' appears twice");
    std::vector<PreparedShape> shapes;
    for (const auto* c : sorted) shapes.push_back(prepare(*c));
    return shapes;
}

std::map<int, ApResult> ap_by_category(const std::vector<PreparedShape>& shapes,
                                       double threshold, bool include_prediction_only) {
    std::map<int, ApResult> result;
    std::map<int, std::vector<Ranked>> ranked;
    for (std::size_t s = 0; s < shapes.size(); ++s) {
        for (const auto& g : shapes[s].source->ground_truth) ++result[g.semantic].gt_count;
        const auto& masks = shapes[s].source->prediction.masks;
        for (std::size_t m = 0; m < masks.size(); ++m)
            ranked[masks[m].semantic].push_back({masks[m].confidence, s, m});
    }
    for (auto& [cat, preds] : ranked) {
        if (!include_prediction_only && !result.count(cat)) continue;
        result[cat].prediction_count = preds.size();
    }
    for (auto& [cat, res] : result)
        res.ap = average_precision(shapes, ranked[cat], cat, res.gt_count, threshold);
    return result;
}

}  // namespace

std::map<int, ApResult> instance_ap(std::span<const InstanceCase> cases, double iou_threshold) {
    return ap_by_category(prepare_all(cases), iou_threshold, false);
}

EvalReport instance_part_category_map(std::span<const InstanceCase> cases, const Template& t,
                                      int level, double iou_threshold) {
    const auto& cut = t.level_cut(level);
    const auto aps = instance_ap(cases, iou_threshold);
    EvalReport r = make_report("part_category_map", t);
    for (std::size_t l = 1; l <= cut.size(); ++l)
        r.part_names[{level, static_cast<int>(l)}] = full_path_label(t, cut[l - 1]);
    for (const auto& [cat, res] : aps) {
        if (cat < 1 || static_cast<std::size_t>(cat) > cut.size())
            throw InvalidData("instance label " + std::to_string(cat) + " outside level " +
                              std::to_string(level));
        r.per_part_category[{level, cat}] = {res.ap, res.gt_count};
    }
    finish_level_from_parts(r, level);
    return r;
}

EvalReport instance_shape_map(std::span<const InstanceCase> cases, const Template& t, int level,
                              double iou_threshold) {
    t.level_cut(level);
    const auto shapes = prepare_all(cases);
    EvalReport r = make_report("shape_map", t);
    for (const auto& s : shapes) {
        // Categories present in either ground truth or prediction of this shape.
        const auto aps = ap_by_category({s}, iou_threshold, true);
        std::vector<double> values;
        for (const auto& [cat, res] : aps) values.push_back(res.ap);
        if (values.empty()) continue;
        r.per_shape[{level, s.source->shape_id}] = mean_of(values);
    }
    finish_level_from_shapes(r, level);
    return r;
}

EvalReport combine_levels(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw InvalidArgument("combine_levels: no reports");
    EvalReport out;
    out.metric = reports.front().metric;
    out.category = reports.front().category;
    std::vector<double> level_scores;
    for (const auto& r : reports) {
        if (r.category != out.category || r.metric != out.metric)
            throw InvalidArgument("combine_levels: reports disagree on metric or category");
        out.per_part_category.insert(r.per_part_category.begin(), r.per_part_category.end());
        out.part_names.insert(r.part_names.begin(), r.part_names.end());
        out.per_shape.insert(r.per_shape.begin(), r.per_shape.end());
        for (const auto& [level, cell] : r.per_level) {
            if (!out.per_level.emplace(level, cell).second)
                throw InvalidArgument("combine_levels: level " + std::to_string(level) +
                                      " appears twice");
        }
    }
    for (const auto& [level, cell] : out.per_level) level_scores.push_back(cell.score);
    out.average = mean_of(level_scores);
    return out;
}

EvalReport combine_categories(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw InvalidArgument("combine_categories: no reports");
    EvalReport out;
    out.metric = reports.front().metric;
    out.category = "all";
    std::map<int, std::vector<double>> per_level;
    std::vector<double> averages;
    for (const auto& r : reports) {
        for (const auto& [level, cell] : r.per_level) per_level[level].push_back(cell.score);
        averages.push_back(r.average.score);
    }
    for (const auto& [level, scores] : per_level) out.per_level[level] = mean_of(scores);
    out.average = mean_of(averages);
    return out;
}

std::string report_to_json(const EvalReport& r) {
    json j;
    j["metric"] = r.metric;
    j["category"] = r.category;
    j["per_part_category"] = json::array();
    for (const auto& [key, cell] : r.per_part_category)
        j["per_part_category"].push_back({{"level", key.first},
                                          {"label", key.second},
                                          {"score", cell.score},
                                          {"support", cell.support}});
    j["part_names"] = json::array();
    for (const auto& [key, name] : r.part_names)
        j["part_names"].push_back({{"level", key.first}, {"label", key.second}, {"name", name}});
    j["per_shape"] = json::array();
    for (const auto& [key, cell] : r.per_shape)
        j["per_shape"].push_back({{"level", key.first},
                                  {"shape_id", key.second},
                                  {"score", cell.score},
                                  {"support", cell.support}});
    j["per_level"] = json::array();
    for (const auto& [level, cell] : r.per_level)
        j["per_level"].push_back({{"level", level}, {"score", cell.score}, {"support", cell.support}});
    j["average"] = {{"score", r.average.score}, {"support", r.average.support}};
    return j.dump(2) + "\n";
}

EvalReport parse_report(std::string_view document) {
    try {
        const json j = json::parse(document);
        EvalReport r;
        r.metric = j.at("metric").get<std::string>();
        r.category = j.at("category").get<std::string>();
        for (const auto& c : j.at("per_part_category")) {
            const std::pair<int, int> key{c.at("level").get<int>(), c.at("label").get<int>()};
            r.per_part_category[key] = {c.at("score").get<double>(),
                                        c.at("support").get<std::uint64_t>()};
        }
        for (const auto& c : j.at("part_names"))
            r.part_names[{c.at("level").get<int>(), c.at("label").get<int>()}] =
                c.at("name").get<std::string>();
        for (const auto& c : j.at("per_shape"))
            r.per_shape[{c.at("level").get<int>(), c.at("shape_id").get<std::string>()}] = {
                c.at("score").get<double>(), c.at("support").get<std::uint64_t>()};
        for (const auto& c : j.at("per_level"))
            r.per_level[c.at("level").get<int>()] = {c.at("score").get<double>(),
                                                     c.at("support").get<std::uint64_t>()};
        r.average = {j.at("average").at("score").get<double>(),
                     j.at("average").at("support").get<std::uint64_t>()};
        return r;
    } catch (const json::exception& e) {
        throw InvalidData(std::string("eval report: ") + e.what());
    }
}

std::string format_table(const std::vector<EvalReport>& per_category) {
    auto cell = [](const ReportCell* c) {
        if (c == nullptr) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", 100.0 * c->score);
        return std::string(buf);
    };
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    std::vector<std::string> header{"", "Avg"};
    for (const auto& r : per_category) header.push_back(r.category);
    std::vector<std::vector<std::string>> rows{header};

    std::set<int> levels;
    for (const auto& r : per_category)
        for (const auto& [level, c] : r.per_level) {
            levels.insert(level);
            if (level >= 1 && level <= 3) levels.insert({1, 2, 3});
        }
    for (int level : levels) {
        std::vector<std::string> row{level == 0 ? "Tree" : std::to_string(level)};
        std::vector<double> present;
        std::vector<std::string> cells;
        for (const auto& r : per_category) {
            auto it = r.per_level.find(level);
            const ReportCell* c = it == r.per_level.end() ? nullptr : &it->second;
            if (c) present.push_back(c->score);
            cells.push_back(cell(c));
        }
        const ReportCell avg = mean_of(present);
        row.push_back(present.empty() ? "-" : cell(&avg));
        row.insert(row.end(), cells.begin(), cells.end());
        rows.push_back(std::move(row));
    }
    std::vector<std::string> avg_row{"Avg"};
    std::vector<double> all;
    for (const auto& r : per_category) all.push_back(r.average.score);
    const ReportCell overall = mean_of(all);
    avg_row.push_back(cell(&overall));
    for (const auto& r : per_category) avg_row.push_back(cell(&r.average));
    rows.push_back(std::move(avg_row));

    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : rows)
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    std::string out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::string line;
        for (std::size_t i = 0; i < rows[r].size(); ++i)
            line += pad(rows[r][i], widths[i] + 2);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

}  // namespace partseg
