#include "partseg/consistency.hpp"

#include <algorithm>
#include <map>

#include "partseg/error.hpp"

namespace partseg {

ConfusionMatrix confusion_matrix(const Annotation& a, const Annotation& b, const Template& t,
                                 ConfusionMode mode) {
    if (a.shape_id != b.shape_id)
        throw IncompatibleAnnotations("annotations describe different shapes: '" + a.shape_id +
                                      "' vs '" + b.shape_id + "'");
    if (a.point_count != b.point_count)
        throw IncompatibleAnnotations("point counts differ for '" + a.shape_id + "': " +
                                      std::to_string(a.point_count) + " vs " +
                                      std::to_string(b.point_count));
    const auto na = point_nodes(a);
    const auto nb = point_nodes(b);

    std::vector<NodeId> order = t.leaves();
    auto include = [&](const std::optional<NodeId>& n) {
        if (n && !t.contains(*n))
            throw InvalidData("annotation uses unknown template node " + std::to_string(*n));
        if (n && std::find(order.begin(), order.end(), *n) == order.end()) order.push_back(*n);
    };
    for (std::size_t i = 0; i < na.size(); ++i) {
        include(na[i]);
        include(nb[i]);
    }
    std::map<NodeId, std::size_t> index;
    ConfusionMatrix m;
    for (NodeId id : order) {
        index[id] = m.labels.size();
        m.labels.push_back(full_path_label(t, id));
    }
    const std::size_t size = m.labels.size();
    m.counts.assign(size, std::vector<std::uint64_t>(size, 0));
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (!na[i] || !nb[i]) continue;
        const std::size_t r = index.at(*na[i]);
        const std::size_t c = index.at(*nb[i]);
        ++m.counts[r][c];
        if (mode == ConfusionMode::Symmetric) ++m.counts[c][r];
    }
    m.row_normalized.assign(size, std::vector<double>(size, 0.0));
    for (std::size_t r = 0; r < size; ++r) {
        std::uint64_t total = 0;
        for (auto v : m.counts[r]) total += v;
        if (total == 0) continue;
        for (std::size_t c = 0; c < size; ++c)
            m.row_normalized[r][c] =
                static_cast<double>(m.counts[r][c]) / static_cast<double>(total);
    }
    return m;
}

double consistency_score(const ConfusionMatrix& m) {
    double sum = 0.0;
    std::size_t rows = 0;
    for (std::size_t r = 0; r < m.counts.size(); ++r) {
        std::uint64_t total = 0;
        for (auto v : m.counts[r]) total += v;
        if (total == 0) continue;
        sum += m.row_normalized[r][r];
        ++rows;
    }
    if (rows == 0) throw UndefinedScore("consistency score undefined: no labeled rows");
    return sum / static_cast<double>(rows);
}

std::vector<ConfusedPair> ranked_confusions(const ConfusionMatrix& m, std::size_t limit) {
    std::vector<ConfusedPair> out;
    for (std::size_t r = 0; r < m.counts.size(); ++r)
        for (std::size_t c = 0; c < m.counts.size(); ++c)
            if (r != c && m.counts[r][c] > 0)
                out.push_back({m.labels[r], m.labels[c], m.row_normalized[r][c], m.counts[r][c]});
    std::stable_sort(out.begin(), out.end(),
                     [](const ConfusedPair& x, const ConfusedPair& y) { return x.rate > y.rate; });
    if (out.size() > limit) out.resize(limit);
    return out;
}

}  // namespace partseg
