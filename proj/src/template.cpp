#include "partseg/template.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "partseg/error.hpp"

namespace partseg {

using nlohmann::json;

std::string_view to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::And: return "and";
        case NodeKind::Or: return "or";
        case NodeKind::Leaf: return "leaf";
    }
    return "leaf";
}

namespace {

NodeKind parse_kind(const std::string& s, NodeId id) {
    if (s == "and") return NodeKind::And;
    if (s == "or") return NodeKind::Or;
    if (s == "leaf") return NodeKind::Leaf;
    throw TemplateValidationError(id, "unknown kind '" + s + "'");
}

}  // namespace

Template::Template(std::string category, std::vector<TemplateNode> nodes, NodeId root,
                   std::map<int, std::vector<NodeId>> level_cuts)
    : category_(std::move(category)), root_(root) {
    for (auto& n : nodes) {
        const NodeId id = n.id;
        if (!nodes_.emplace(id, std::move(n)).second)
            throw TemplateValidationError(id, "duplicate node id");
    }
    if (!contains(root_)) throw TemplateValidationError(root_, "root node is not defined");

    for (const auto& [id, n] : nodes_) {
        if (std::find(n.children.begin(), n.children.end(), id) != n.children.end())
            throw TemplateValidationError(id, "cycle: node lists itself as a child");
        if (n.kind == NodeKind::Leaf && !n.children.empty())
            throw TemplateValidationError(id, "leaf node has children");
        if (n.kind != NodeKind::Leaf && n.children.empty())
            throw TemplateValidationError(id, "internal node has no children");
        std::set<std::string> sibling_labels;
        for (NodeId c : n.children) {
            if (!contains(c))
                throw TemplateValidationError(id, "child " + std::to_string(c) + " is not defined");
            if (c == root_) throw TemplateValidationError(c, "cycle: root appears as a child");
            if (!parent_.emplace(c, id).second)
                throw TemplateValidationError(c, "node has more than one parent");
            if (!sibling_labels.insert(nodes_.at(c).label).second)
                throw TemplateValidationError(c, "duplicate sibling label '" +
                                                     nodes_.at(c).label + "'");
        }
    }

    std::set<NodeId> reached;
    for (NodeId id : preorder()) reached.insert(id);
    for (const auto& [id, n] : nodes_) {
        if (reached.count(id)) continue;
        // Unreachable: either part of a parent cycle or a dangling subtree.
        std::set<NodeId> seen{id};
        NodeId cur = id;
        while (true) {
            auto it = parent_.find(cur);
            if (it == parent_.end()) throw TemplateValidationError(cur, "orphan node");
            cur = it->second;
            if (!seen.insert(cur).second) throw TemplateValidationError(cur, "cycle");
        }
    }

    if (!level_cuts.count(1)) throw TemplateValidationError(root_, "level 1 is not defined");
    for (auto& [level, cut] : level_cuts) {
        if (level < 1 || level > 3)
            throw TemplateValidationError(root_, "level " + std::to_string(level) +
                                                     " is outside 1..3");
        if (cut.empty())
            throw TemplateValidationError(root_, "level " + std::to_string(level) + " is empty");
        std::sort(cut.begin(), cut.end());
        if (std::adjacent_find(cut.begin(), cut.end()) != cut.end())
            throw TemplateValidationError(*std::adjacent_find(cut.begin(), cut.end()),
                                          "node listed twice in a level cut");
        const std::set<NodeId> members(cut.begin(), cut.end());
        for (NodeId id : cut) {
            if (!contains(id))
                throw TemplateValidationError(id, "level cut references an undefined node");
            for (auto it = parent_.find(id); it != parent_.end(); it = parent_.find(it->second))
                if (members.count(it->second))
                    throw TemplateValidationError(
                        id, "level " + std::to_string(level) +
                                " is not an antichain: ancestor " + std::to_string(it->second) +
                                " is also in the cut");
        }
    }
    levels_ = std::move(level_cuts);
}

const TemplateNode& Template::node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw NotFound("template node " + std::to_string(id) + " not found");
    return it->second;
}

std::optional<NodeId> Template::parent(NodeId id) const {
    node(id);
    auto it = parent_.find(id);
    if (it == parent_.end()) return std::nullopt;
    return it->second;
}

bool Template::is_other(NodeId id) const {
    const auto& n = node(id);
    return n.kind == NodeKind::Leaf && n.label == kOtherLabel && id != root_;
}

std::vector<NodeId> Template::preorder() const {
    std::vector<NodeId> order;
    std::vector<NodeId> stack{root_};
    std::set<NodeId> seen;
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        if (!seen.insert(id).second) continue;
        order.push_back(id);
        const auto& ch = nodes_.at(id).children;
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
    }
    return order;
}

std::vector<NodeId> Template::leaves() const {
    std::vector<NodeId> out;
    for (NodeId id : preorder())
        if (nodes_.at(id).kind == NodeKind::Leaf) out.push_back(id);
    return out;
}

std::vector<NodeId> Template::ancestors_and_self(NodeId id) const {
    node(id);
    std::vector<NodeId> chain{id};
    for (auto it = parent_.find(id); it != parent_.end(); it = parent_.find(it->second))
        chain.push_back(it->second);
    std::reverse(chain.begin(), chain.end());
    return chain;
}

bool Template::is_ancestor_or_self(NodeId ancestor, NodeId id) const {
    if (ancestor == id) return true;
    for (auto it = parent_.find(id); it != parent_.end(); it = parent_.find(it->second))
        if (it->second == ancestor) return true;
    return false;
}

std::vector<std::vector<NodeId>> Template::root_to_leaf_paths() const {
    std::vector<std::vector<NodeId>> out;
    for (NodeId leaf : leaves()) out.push_back(ancestors_and_self(leaf));
    return out;
}

const std::vector<NodeId>& Template::level_cut(int level) const {
    auto it = levels_.find(level);
    if (it == levels_.end())
        throw InvalidArgument("level " + std::to_string(level) + " is not defined for '" +
                              category_ + "'");
    return it->second;
}

std::vector<std::string> Template::warnings() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : nodes_)
        if (n.kind == NodeKind::Or && n.children.size() == 1)
            out.push_back("node " + std::to_string(id) + " ('" + n.label +
                          "') is an Or-node with a single subtype");
    return out;
}

Template parse_template(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw FormatError("template", e.byte, e.what());
    }
    try {
        std::vector<TemplateNode> nodes;
        for (const auto& jn : doc.at("nodes")) {
            TemplateNode n;
            n.id = jn.at("id").get<NodeId>();
            n.label = jn.at("label").get<std::string>();
            n.kind = parse_kind(jn.at("kind").get<std::string>(), n.id);
            if (jn.contains("children")) n.children = jn.at("children").get<std::vector<NodeId>>();
            nodes.push_back(std::move(n));
        }
        std::map<int, std::vector<NodeId>> levels;
        if (doc.contains("levels")) {
            for (const auto& [key, ids] : doc.at("levels").items()) {
                int level = 0;
                try {
                    level = std::stoi(key);
                } catch (const std::exception&) {
                    throw InvalidData("template level key '" + key + "' is not an integer");
                }
                levels[level] = ids.get<std::vector<NodeId>>();
            }
        }
        return Template(doc.at("category").get<std::string>(), std::move(nodes),
                        doc.at("root").get<NodeId>(), std::move(levels));
    } catch (const json::exception& e) {
        throw InvalidData(std::string("template document: ") + e.what());
    }
}

std::string template_to_json(const Template& t) {
    json doc;
    doc["category"] = t.category();
    doc["root"] = t.root();
    doc["nodes"] = json::array();
    for (const auto& [id, n] : t.nodes()) {
        doc["nodes"].push_back({{"id", id},
                                {"label", n.label},
                                {"kind", std::string(to_string(n.kind))},
                                {"children", n.children}});
    }
    doc["levels"] = json::object();
    for (const auto& [level, cut] : t.level_cuts()) doc["levels"][std::to_string(level)] = cut;
    return doc.dump(2) + "\n";
}

Template read_template(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open template '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_template(ss.str());
}

void write_template(const Template& t, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << template_to_json(t);
}

Template augment_other(const Template& t) {
    std::vector<TemplateNode> nodes;
    for (const auto& [id, n] : t.nodes()) nodes.push_back(n);
    NodeId next = t.max_id() + 1;
    std::vector<TemplateNode> added;
    for (NodeId id : t.preorder()) {
        const auto& n = t.node(id);
        if (n.kind == NodeKind::Leaf) continue;
        const bool has_other = std::any_of(n.children.begin(), n.children.end(),
                                           [&](NodeId c) { return t.node(c).label == kOtherLabel; });
        if (has_other) continue;
        auto it = std::find_if(nodes.begin(), nodes.end(),
                               [&](const TemplateNode& x) { return x.id == id; });
        it->children.push_back(next);
        added.push_back({next, std::string(kOtherLabel), NodeKind::Leaf, {}});
        ++next;
    }
    nodes.insert(nodes.end(), added.begin(), added.end());
    return Template(t.category(), std::move(nodes), t.root(), t.level_cuts());
}

std::string full_path_label(const Template& t, NodeId id) {
    std::string out;
    for (NodeId a : t.ancestors_and_self(id)) {
        if (!out.empty()) out += '/';
        out += t.node(a).label;
    }
    return out;
}

}  // namespace partseg
