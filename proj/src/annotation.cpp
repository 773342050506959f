#include "partseg/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "partseg/error.hpp"

namespace partseg {

using nlohmann::json;

namespace {

struct Validator {
    const Annotation& a;
    const Template& t;
    std::vector<Violation> out;
    std::vector<std::string> leaf_paths;
    std::vector<int> owner;  // leaf index per point, −1 when free

    void add(const std::string& path, std::string message) {
        out.push_back({path, std::move(message)});
    }

    std::string label_of(NodeId id) const {
        return t.contains(id) ? t.node(id).label : "#" + std::to_string(id);
    }

    void visit(const InstanceNode& n, const std::string& path) {
        if (!t.contains(n.node)) {
            add(path, "template node " + std::to_string(n.node) + " does not exist");
            return;
        }
        if (!n.children.empty() && !n.point_indices.empty())
            add(path, "points attached to an instance that has children");

        const auto& tn = t.node(n.node);
        std::map<NodeId, int> ordinal;
        std::set<NodeId> subtypes;
        for (const auto& c : n.children) {
            const std::string child_path =
                path + "/" + label_of(c.node) + "[" + std::to_string(ordinal[c.node]++) + "]";
            if (t.contains(c.node)) {
                const auto parent = t.parent(c.node);
                if (!parent || *parent != n.node) {
                    add(child_path, "'" + label_of(c.node) + "' is not a template child of '" +
                                        tn.label + "'");
                    continue;
                }
                subtypes.insert(c.node);
            }
            visit(c, child_path);
        }
        if (tn.kind == NodeKind::Or && subtypes.size() > 1)
            add(path, "Or-node instance mixes " + std::to_string(subtypes.size()) + " subtypes");

        if (n.children.empty()) {
            const int leaf = static_cast<int>(leaf_paths.size());
            leaf_paths.push_back(path);
            std::map<int, std::pair<std::size_t, std::size_t>> clashes;  // leaf → (first, count)
            std::size_t out_of_range = 0;
            for (std::size_t p : n.point_indices) {
                if (p >= a.point_count) {
                    ++out_of_range;
                    continue;
                }
                if (owner[p] < 0) {
                    owner[p] = leaf;
                    continue;
                }
                auto [it, fresh] = clashes.try_emplace(owner[p], p, 0);
                ++it->second.second;
            }
            if (out_of_range > 0)
                add(path, std::to_string(out_of_range) + " point indices >= point_count " +
                              std::to_string(a.point_count));
            for (const auto& [other, info] : clashes) {
                const std::string with =
                    other == leaf ? std::string("itself (duplicate index)") : leaf_paths[other];
                add(path, std::to_string(info.second) + " point(s) shared with " + with +
                              ", first index " + std::to_string(info.first));
            }
        }
    }
};

void collect_points(const InstanceNode& n, std::vector<std::size_t>& out) {
    out.insert(out.end(), n.point_indices.begin(), n.point_indices.end());
    for (const auto& c : n.children) collect_points(c, out);
}

void assign_point_nodes(const InstanceNode& n, std::vector<std::optional<NodeId>>& out) {
    if (n.children.empty()) {
        for (std::size_t p : n.point_indices) {
            if (p >= out.size())
                throw InvalidData("point index " + std::to_string(p) + " >= point_count " +
                                  std::to_string(out.size()));
            out[p] = n.node;
        }
    }
    for (const auto& c : n.children) assign_point_nodes(c, out);
}

json instance_to_json(const InstanceNode& n) {
    json j;
    j["node"] = n.node;
    j["children"] = json::array();
    for (const auto& c : n.children) j["children"].push_back(instance_to_json(c));
    j["point_indices"] = n.point_indices;
    return j;
}

InstanceNode instance_from_json(const json& j) {
    InstanceNode n;
    n.node = j.at("node").get<NodeId>();
    if (j.contains("children"))
        for (const auto& c : j.at("children")) n.children.push_back(instance_from_json(c));
    if (j.contains("point_indices"))
        n.point_indices = j.at("point_indices").get<std::vector<std::size_t>>();
    return n;
}

json parse_json(std::string_view document, const char* what) {
    try {
        return json::parse(document);
    } catch (const json::parse_error& e) {
        throw FormatError(what, e.byte, e.what());
    }
}

}  // namespace

std::vector<Violation> validate_annotation(const Annotation& a, const Template& t) {
    Validator v{a, t, {}, {}, std::vector<int>(a.point_count, -1)};
    const std::string root_path = v.label_of(a.root.node) + "[0]";
    if (a.category != t.category())
        v.add(root_path, "category '" + a.category + "' does not match template '" +
                             t.category() + "'");
    if (a.point_count == 0) v.add(root_path, "point_count is zero");
    if (a.root.node != t.root())
        v.add(root_path, "root instance does not use the template root");
    v.visit(a.root, root_path);
    return std::move(v.out);
}

Annotation without_nodes(const Annotation& a, const std::set<NodeId>& excluded) {
    Annotation out = a;
    std::function<void(InstanceNode&, bool)> strip = [&](InstanceNode& n, bool drop) {
        drop = drop || excluded.count(n.node) > 0;
        if (drop) n.point_indices.clear();
        for (auto& c : n.children) strip(c, drop);
    };
    strip(out.root, false);
    return out;
}

std::vector<std::optional<NodeId>> point_nodes(const Annotation& a) {
    std::vector<std::optional<NodeId>> out(a.point_count);
    assign_point_nodes(a.root, out);
    return out;
}

int level_label_id(const Template& t, int level, NodeId node) {
    const auto& cut = t.level_cut(level);
    auto it = std::lower_bound(cut.begin(), cut.end(), node);
    if (it == cut.end() || *it != node)
        throw NotFound("node " + std::to_string(node) + " is not in level " +
                       std::to_string(level));
    return static_cast<int>(it - cut.begin()) + 1;
}

NodeId level_label_node(const Template& t, int level, int label_id) {
    const auto& cut = t.level_cut(level);
    if (label_id < 1 || static_cast<std::size_t>(label_id) > cut.size())
        throw NotFound("label id " + std::to_string(label_id) + " is not defined at level " +
                       std::to_string(level));
    return cut[static_cast<std::size_t>(label_id) - 1];
}

LevelLabels flatten(const Annotation& a, const Template& t, int level) {
    const auto& cut = t.level_cut(level);
    LevelLabels out;
    out.level = level;
    out.semantic.assign(a.point_count, 0);
    out.instance.assign(a.point_count, 0);

    // Maximal subtrees rooted at cut nodes, in depth-first order.
    std::vector<std::pair<NodeId, std::vector<std::size_t>>> groups;
    std::vector<const InstanceNode*> stack{&a.root};
    while (!stack.empty()) {
        const InstanceNode* n = stack.back();
        stack.pop_back();
        if (std::binary_search(cut.begin(), cut.end(), n->node)) {
            std::vector<std::size_t> pts;
            collect_points(*n, pts);
            groups.emplace_back(n->node, std::move(pts));
            continue;
        }
        for (auto it = n->children.rbegin(); it != n->children.rend(); ++it) stack.push_back(&*it);
    }

    int next = 1;
    for (auto& [node, pts] : groups) {
        if (pts.empty()) continue;
        const int sem = level_label_id(t, level, node);
        const int inst = next++;
        out.instance_semantics[inst] = node;
        for (std::size_t p : pts) {
            if (p >= a.point_count)
                throw InvalidData("point index " + std::to_string(p) + " >= point_count");
            out.semantic[p] = sem;
            out.instance[p] = inst;
        }
    }
    return out;
}

std::vector<std::vector<NodeId>> point_paths(const Annotation& a, const Template& augmented) {
    const auto nodes = point_nodes(a);
    std::vector<std::vector<NodeId>> out(nodes.size());
    std::map<NodeId, std::vector<NodeId>> cache;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]) continue;
        auto it = cache.find(*nodes[i]);
        if (it == cache.end()) {
            auto path = augmented.ancestors_and_self(*nodes[i]);
            const auto& tn = augmented.node(*nodes[i]);
            if (tn.kind != NodeKind::Leaf) {
                auto other = std::find_if(tn.children.begin(), tn.children.end(),
                                          [&](NodeId c) { return augmented.is_other(c); });
                if (other == tn.children.end())
                    throw InvalidArgument("template is not augmented: node " +
                                          std::to_string(tn.id) + " has no 'other' leaf");
                path.push_back(*other);
            }
            it = cache.emplace(*nodes[i], std::move(path)).first;
        }
        out[i] = it->second;
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

DatasetSplit split_dataset(const std::vector<std::string>& shape_ids,
                           const std::array<double, 3>& ratios, std::uint64_t seed) {
    double total = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidArgument("split ratios must be >= 0");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
    std::set<std::string> unique(shape_ids.begin(), shape_ids.end());
    if (unique.size() != shape_ids.size()) throw InvalidArgument("duplicate shape ids in split");

    const std::string prefix = std::to_string(seed);
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    keyed.reserve(shape_ids.size());
    for (const auto& id : shape_ids) keyed.emplace_back(fnv1a64(prefix + id), id);
    std::sort(keyed.begin(), keyed.end());

    // Largest-remainder rounding; the guard keeps 0.7·10 from flooring to 6.
    const auto n = static_cast<double>(shape_ids.size());
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = ratios[i] * n;
        sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return frac[x] > frac[y]; });
    for (std::size_t k = 0; assigned < shape_ids.size(); k = (k + 1) % 3) {
        if (ratios[order[k]] > 0.0) {
            ++sizes[order[k]];
            ++assigned;
        }
    }

    DatasetSplit split;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        auto& dst = i == 0 ? split.train : (i == 1 ? split.val : split.test);
        for (std::size_t k = 0; k < sizes[i]; ++k) dst.push_back(keyed[pos++].second);
    }
    return split;
}

std::string annotation_to_json(const Annotation& a) {
    json j;
    j["shape_id"] = a.shape_id;
    j["category"] = a.category;
    j["point_count"] = a.point_count;
    j["root"] = instance_to_json(a.root);
    return j.dump() + "\n";
}

Annotation parse_annotation(std::string_view document) {
    const json j = parse_json(document, "annotation");
    try {
        Annotation a;
        a.shape_id = j.at("shape_id").get<std::string>();
        a.category = j.at("category").get<std::string>();
        a.point_count = j.at("point_count").get<std::size_t>();
        a.root = instance_from_json(j.at("root"));
        return a;
    } catch (const json::exception& e) {
        throw InvalidData(std::string("annotation document: ") + e.what());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Annotation read_annotation(const std::filesystem::path& path) {
    try {
        return parse_annotation(read_text_file(path));
    } catch (const InvalidData& e) {
        throw InvalidData(path.string() + ": " + e.what());
    }
}

void write_annotation(const Annotation& a, const std::filesystem::path& path) {
    write_text_file(path, annotation_to_json(a));
}

void write_semantic_prediction(const std::vector<int>& labels, const std::filesystem::path& path) {
    std::string text;
    for (int l : labels) {
        text += std::to_string(l);
        text += '\n';
    }
    write_text_file(path, text);
}

std::vector<int> read_semantic_prediction(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(line, &used);
        } catch (const std::exception&) {
            throw FormatError(path.string(), line_no, "expected an integer label");
        }
        if (used != line.size() || v < 0)
            throw FormatError(path.string(), line_no, "expected a non-negative integer label");
        labels.push_back(v);
    }
    return labels;
}

std::string instance_predictions_to_json(const InstancePredictionSet& p) {
    json j;
    j["masks"] = json::array();
    for (const auto& m : p.masks)
        j["masks"].push_back(
            {{"points", m.points}, {"confidence", m.confidence}, {"semantic", m.semantic}});
    return j.dump() + "\n";
}

InstancePredictionSet parse_instance_predictions(std::string_view document) {
    const json j = parse_json(document, "instance predictions");
    try {
        InstancePredictionSet p;
        for (const auto& jm : j.at("masks")) {
            PredictedMask m;
            m.points = jm.at("points").get<std::vector<std::size_t>>();
            m.confidence = jm.at("confidence").get<double>();
            m.semantic = jm.at("semantic").get<int>();
            p.masks.push_back(std::move(m));
        }
        return p;
    } catch (const json::exception& e) {
        throw InvalidData(std::string("instance predictions: ") + e.what());
    }
}

void write_instance_predictions(const InstancePredictionSet& p, const std::filesystem::path& path) {
    write_text_file(path, instance_predictions_to_json(p));
}

InstancePredictionSet read_instance_predictions(const std::filesystem::path& path) {
    try {
        return parse_instance_predictions(read_text_file(path));
    } catch (const InvalidData& e) {
        throw InvalidData(path.string() + ": " + e.what());
    }
}

}  // namespace partseg
