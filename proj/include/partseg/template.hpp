#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace partseg {

using NodeId = std::uint32_t;

enum class NodeKind { And, Or, Leaf };

std::string_view to_string(NodeKind kind);

struct TemplateNode {
    NodeId id = 0;
    std::string label;
    NodeKind kind = NodeKind::Leaf;
    std::vector<NodeId> children;

    bool operator==(const TemplateNode&) const = default;
};

/// Label given to the leaves added by augment_other().
inline constexpr std::string_view kOtherLabel = "other";

/// And-Or part hierarchy of one object category with its named level cuts
/// (1 = coarse, 2 = middle, 3 = fine). Immutable once built; construction
/// validates the tree and the cuts and throws TemplateValidationError.
class Template {
public:
    Template(std::string category, std::vector<TemplateNode> nodes, NodeId root,
             std::map<int, std::vector<NodeId>> level_cuts);

    const std::string& category() const noexcept { return category_; }
    NodeId root() const noexcept { return root_; }
    const std::map<NodeId, TemplateNode>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    bool contains(NodeId id) const { return nodes_.count(id) != 0; }
    /// Throws NotFound.
    const TemplateNode& node(NodeId id) const;
    std::optional<NodeId> parent(NodeId id) const;
    bool is_leaf(NodeId id) const { return node(id).kind == NodeKind::Leaf; }
    bool is_other(NodeId id) const;
    NodeId max_id() const noexcept { return nodes_.rbegin()->first; }

    /// Root first, children in declaration order.
    std::vector<NodeId> preorder() const;
    std::vector<NodeId> leaves() const;
    /// Root-to-node chain, inclusive.
    std::vector<NodeId> ancestors_and_self(NodeId id) const;
    bool is_ancestor_or_self(NodeId ancestor, NodeId id) const;
    /// Every root-to-leaf chain in preorder of the leaves.
    std::vector<std::vector<NodeId>> root_to_leaf_paths() const;

    const std::map<int, std::vector<NodeId>>& level_cuts() const noexcept { return levels_; }
    bool has_level(int level) const { return levels_.count(level) != 0; }
    /// Cut nodes sorted by id; label id k (1-based) refers to element k−1.
    /// Throws InvalidArgument for an undefined level.
    const std::vector<NodeId>& level_cut(int level) const;
    int finest_level() const { return levels_.rbegin()->first; }

    /// Advisory findings that do not make the template invalid (single-child Or-nodes).
    std::vector<std::string> warnings() const;

    bool operator==(const Template&) const = default;

private:
    std::string category_;
    NodeId root_;
    std::map<NodeId, TemplateNode> nodes_;
    std::map<NodeId, NodeId> parent_;
    std::map<int, std::vector<NodeId>> levels_;
};

Template parse_template(std::string_view document);
std::string template_to_json(const Template& t);
Template read_template(const std::filesystem::path& path);
void write_template(const Template& t, const std::filesystem::path& path);

/// Adds a leaf labeled "other" under every internal node that lacks one.
Template augment_other(const Template& t);

/// "/"-joined labels from the root down to `id`. Throws NotFound.
std::string full_path_label(const Template& t, NodeId id);

}  // namespace partseg
