#ifndef METADT_HIERARCHY_HPP
#define METADT_HIERARCHY_HPP

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "metadt/errors.hpp"
#include "metadt/matrix.hpp"

namespace metadt {

// Tree-like class taxonomy. Nodes are indexed 0..F-1; ids are the stable
// string identifiers from the hierarchy file. Immutable after load.
struct HierarchyGraph {
    std::vector<std::string> ids;
    std::vector<std::string> names;
    Matrix semantic;                                   // F x d_s
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
    std::size_t root = 0;
    std::vector<std::optional<std::size_t>> parent;
    std::vector<std::vector<std::size_t>> children;    // ordered lexicographically by name
    std::map<std::size_t, std::size_t> leaf_to_class;  // leaf node -> class index in [0, N)

    std::size_t node_count() const { return ids.size(); }
    std::size_t num_classes() const { return leaf_to_class.size(); }
    std::size_t semantic_dim() const { return semantic.cols(); }
    bool is_leaf(std::size_t i) const { return children[i].empty(); }

    std::size_t depth(std::size_t i) const {
        std::size_t d = 0;
        while (parent[i]) {
            i = *parent[i];
            ++d;
        }
        return d;
    }

    std::size_t index_of(const std::string& id) const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return i;
        throw IndexError("unknown node id '" + id + "'");
    }

    std::size_t class_leaf(std::size_t k) const {
        for (const auto& [leaf, cls] : leaf_to_class)
            if (cls == k) return leaf;
        throw IndexError("class index " + std::to_string(k) + " has no leaf");
    }
};

enum class AdjacencyNorm { symmetric, paper_literal };

struct AdjacencyOperator {
    Matrix a_hat;  // F x F
};

inline void validate_hierarchy(const HierarchyGraph& g) {
    std::size_t F = g.node_count();
    if (F == 0) throw ValidationError("empty", "hierarchy has no nodes");
    if (g.names.size() != F || g.parent.size() != F || g.children.size() != F ||
        g.semantic.rows() != F)
        throw ValidationError("inconsistent", "field lengths disagree with node count");
    if (!g.semantic.finite())
        throw ValidationError("non-finite-semantic", "semantic matrix has non-finite entries");

    if (g.edges.size() > F - 1) throw ValidationError("cycle", "more edges than a tree allows");
    if (g.parent[g.root]) throw ValidationError("multiple-roots", "declared root has a parent");

    std::size_t rootless = 0;
    for (std::size_t i = 0; i < F; ++i)
        if (!g.parent[i]) ++rootless;
    if (rootless != 1)
        throw ValidationError("multiple-roots",
                              std::to_string(rootless) + " nodes have no parent");

    // Reachability from the root via child lists.
    std::vector<bool> seen(F, false);
    std::vector<std::size_t> stack{g.root};
    seen[g.root] = true;
    std::size_t visited = 0;
    while (!stack.empty()) {
        std::size_t i = stack.back();
        stack.pop_back();
        ++visited;
        for (std::size_t c : g.children[i]) {
            if (seen[c]) throw ValidationError("cycle", "node '" + g.ids[c] + "' revisited");
            if (!g.parent[c] || *g.parent[c] != i)
                throw ValidationError("inconsistent",
                                      "child list and parent pointer disagree at '" + g.ids[c] +
                                          "'");
            seen[c] = true;
            stack.push_back(c);
        }
    }
    if (visited != F) {
        for (std::size_t i = 0; i < F; ++i)
            if (!seen[i])
                throw ValidationError("disconnected",
                                      "node '" + g.ids[i] + "' unreachable from root");
    }
    if (g.edges.size() != F - 1)
        throw ValidationError("disconnected", "edge count != F - 1");

    // Leaf/class bijection.
    std::vector<std::size_t> leaves;
    for (std::size_t i = 0; i < F; ++i)
        if (g.is_leaf(i)) leaves.push_back(i);
    if (g.leaf_to_class.size() != leaves.size())
        throw ValidationError("unmapped-leaf", "class map does not cover every leaf");
    std::vector<bool> cls_used(leaves.size(), false);
    for (const auto& [leaf, cls] : g.leaf_to_class) {
        if (leaf >= F || !g.is_leaf(leaf))
            throw ValidationError("bad-class-mapping",
                                  "mapped node is not a leaf: '" + g.ids[leaf] + "'");
        if (cls >= leaves.size() || cls_used[cls])
            throw ValidationError("duplicate-class-mapping",
                                  "class index " + std::to_string(cls) + " reused or out of range");
        cls_used[cls] = true;
    }
}

inline Matrix build_adjacency(const HierarchyGraph& g) {
    std::size_t F = g.node_count();
    Matrix a(F, F);
    for (const auto& [p, c] : g.edges) {
        a(p, c) = 1.0;
        a(c, p) = 1.0;
    }
    return a;
}

// D^{-1/2} A' D^{-1/2} (symmetric, the default) or D^{-1/2} A' D^{1/2}
// (the literal form printed alongside Eq. style GCNs in some sources),
// with A' = A + I when self_loops is on.
inline AdjacencyOperator normalize_adjacency(const Matrix& a, bool self_loops = true,
                                             AdjacencyNorm mode = AdjacencyNorm::symmetric) {
    if (a.rows() != a.cols()) throw ShapeError("normalize_adjacency: non-square " + a.shape_str());
    std::size_t F = a.rows();
    Matrix ap = a;
    if (self_loops)
        for (std::size_t i = 0; i < F; ++i) ap(i, i) += 1.0;
    std::vector<double> deg(F, 0.0);
    for (std::size_t i = 0; i < F; ++i)
        for (std::size_t j = 0; j < F; ++j) deg[i] += ap(i, j);
    for (std::size_t i = 0; i < F; ++i)
        if (deg[i] <= 0.0)
            throw DegenerateInputError("normalize_adjacency: isolated node " + std::to_string(i));
    Matrix out(F, F);
    for (std::size_t i = 0; i < F; ++i)
        for (std::size_t j = 0; j < F; ++j) {
            if (ap(i, j) == 0.0) continue;
            double di = 1.0 / std::sqrt(deg[i]);
            double dj = mode == AdjacencyNorm::symmetric ? 1.0 / std::sqrt(deg[j])
                                                         : std::sqrt(deg[j]);
            out(i, j) = di * ap(i, j) * dj;
        }
    return AdjacencyOperator{std::move(out)};
}

// Unique root-to-leaf node sequence for few-shot class k.
inline std::vector<std::size_t> traversal_path(const HierarchyGraph& g, std::size_t k) {
    if (k >= g.num_classes())
        throw IndexError("traversal_path: class " + std::to_string(k) + " not mapped");
    std::size_t leaf = g.class_leaf(k);
    std::vector<std::size_t> path{leaf};
    std::size_t cur = leaf;
    while (g.parent[cur]) {
        cur = *g.parent[cur];
        path.push_back(cur);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

// ---------------------------------------------------------------------------
// Semantic vectors from tokenized names + an embedding table.

using EmbeddingTable = std::unordered_map<std::string, std::vector<double>>;

inline EmbeddingTable load_embedding_table(const std::string& path, std::size_t d_s) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open embedding file: " + path);
    EmbeddingTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.size() != d_s)
            throw ParseError("embedding line " + std::to_string(lineno) + ": expected " +
                             std::to_string(d_s) + " values, got " + std::to_string(v.size()));
        table[token] = std::move(v);
    }
    return table;
}

// Row i = mean of the token embeddings of node i. Unknown tokens are skipped;
// an all-unknown name yields a zero row and a warning entry.
inline Matrix semantic_from_names(const std::vector<std::vector<std::string>>& token_lists,
                                  const EmbeddingTable& table, std::size_t d_s,
                                  std::vector<std::string>* warnings = nullptr) {
    Matrix h(token_lists.size(), d_s);
    for (std::size_t i = 0; i < token_lists.size(); ++i) {
        if (token_lists[i].empty())
            throw ValidationError("empty-tokens", "node " + std::to_string(i) + " has no tokens");
        std::size_t hits = 0;
        for (const auto& tok : token_lists[i]) {
            auto it = table.find(tok);
            if (it == table.end()) continue;
            for (std::size_t j = 0; j < d_s; ++j) h(i, j) += it->second[j];
            ++hits;
        }
        if (hits == 0) {
            if (warnings)
                warnings->push_back("node " + std::to_string(i) +
                                    ": no known tokens, semantic row left zero");
        } else {
            for (std::size_t j = 0; j < d_s; ++j) h(i, j) /= static_cast<double>(hits);
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// JSON ingestion / serialization.

inline HierarchyGraph parse_hierarchy(const nlohmann::json& doc,
                                      const EmbeddingTable* embeddings = nullptr) {
    HierarchyGraph g;
    if (!doc.contains("d_s") || !doc.contains("nodes") || !doc.contains("edges") ||
        !doc.contains("root") || !doc.contains("classes"))
        throw ParseError("hierarchy file missing one of: d_s, nodes, edges, root, classes");
    std::size_t d_s = doc.at("d_s").get<std::size_t>();

    std::unordered_map<std::string, std::size_t> by_id;
    std::vector<std::vector<std::string>> token_lists;
    std::vector<bool> has_tokens;
    std::vector<std::vector<double>> explicit_sem;
    for (const auto& nd : doc.at("nodes")) {
        std::string id = nd.at("id").get<std::string>();
        if (by_id.count(id)) throw ParseError("duplicate node id '" + id + "'");
        by_id[id] = g.ids.size();
        g.ids.push_back(id);
        g.names.push_back(nd.contains("name") ? nd.at("name").get<std::string>() : id);
        if (nd.contains("semantic") && nd.contains("tokens"))
            throw ParseError("node '" + id + "': semantic and tokens are mutually exclusive");
        if (nd.contains("semantic")) {
            auto v = nd.at("semantic").get<std::vector<double>>();
            if (v.size() != d_s)
                throw ValidationError("semantic-dim-mismatch",
                                      "node '" + id + "': semantic length " +
                                          std::to_string(v.size()) + " != d_s " +
                                          std::to_string(d_s));
            explicit_sem.push_back(std::move(v));
            has_tokens.push_back(false);
            token_lists.emplace_back();
        } else if (nd.contains("tokens")) {
            token_lists.push_back(nd.at("tokens").get<std::vector<std::string>>());
            has_tokens.push_back(true);
            explicit_sem.emplace_back();
        } else {
            throw ParseError("node '" + id + "': needs semantic or tokens");
        }
    }
    std::size_t F = g.ids.size();
    g.parent.assign(F, std::nullopt);
    g.children.assign(F, {});

    // Resolve semantics.
    g.semantic = Matrix(F, d_s);
    bool any_tokens = std::any_of(has_tokens.begin(), has_tokens.end(), [](bool b) { return b; });
    Matrix token_sem;
    if (any_tokens) {
        if (!embeddings)
            throw ParseError("hierarchy uses token-based semantics but no embedding table given");
        token_sem = semantic_from_names(token_lists, *embeddings, d_s);
    }
    for (std::size_t i = 0; i < F; ++i)
        for (std::size_t j = 0; j < d_s; ++j)
            g.semantic(i, j) = has_tokens[i] ? token_sem(i, j) : explicit_sem[i][j];

    auto lookup = [&](const std::string& id) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ParseError("edge references unknown id '" + id + "'");
        return it->second;
    };
    for (const auto& e : doc.at("edges")) {
        if (!e.is_array() || e.size() != 2) throw ParseError("edge is not a [parent, child] pair");
        std::size_t p = lookup(e.at(0).get<std::string>());
        std::size_t c = lookup(e.at(1).get<std::string>());
        if (g.parent[c])
            throw ValidationError("cycle", "node '" + g.ids[c] + "' has two parents");
        g.parent[c] = p;
        g.children[p].push_back(c);
        g.edges.emplace_back(p, c);
    }
    g.root = lookup(doc.at("root").get<std::string>());

    // Deterministic child order: lexicographic by node name.
    for (auto& kids : g.children)
        std::sort(kids.begin(), kids.end(),
                  [&](std::size_t a, std::size_t b) { return g.names[a] < g.names[b]; });

    for (const auto& [key, val] : doc.at("classes").items()) {
        std::size_t cls = 0;
        try {
            cls = std::stoul(key);
        } catch (...) {
            throw ParseError("class index '" + key + "' is not an integer");
        }
        std::size_t leaf = lookup(val.get<std::string>());
        for (const auto& [l, c] : g.leaf_to_class)
            if (l == leaf)
                throw ValidationError("duplicate-class-mapping",
                                      "leaf '" + g.ids[leaf] + "' mapped twice");
        g.leaf_to_class[leaf] = cls;
    }

    validate_hierarchy(g);
    return g;
}

inline nlohmann::json serialize_hierarchy(const HierarchyGraph& g) {
    nlohmann::json doc;
    doc["d_s"] = g.semantic_dim();
    doc["root"] = g.ids[g.root];
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        nlohmann::json nd;
        nd["id"] = g.ids[i];
        nd["name"] = g.names[i];
        nd["semantic"] = g.semantic.row_vec(i);
        nodes.push_back(std::move(nd));
    }
    doc["nodes"] = std::move(nodes);
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [p, c] : g.edges) edges.push_back({g.ids[p], g.ids[c]});
    doc["edges"] = std::move(edges);
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [leaf, cls] : g.leaf_to_class) classes[std::to_string(cls)] = g.ids[leaf];
    doc["classes"] = std::move(classes);
    return doc;
}

inline HierarchyGraph load_hierarchy(const std::string& path,
                                     const EmbeddingTable* embeddings = nullptr) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open hierarchy file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("hierarchy file " + path + ": " + e.what());
    }
    return parse_hierarchy(doc, embeddings);
}

inline void save_hierarchy(const HierarchyGraph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write hierarchy file: " + path);
    out << serialize_hierarchy(g).dump(2) << "\n";
}

// Subtree induced by the union of root paths of the given leaves, with
// leaf_to_class remapped so selected_leaves[k] carries class k. Used to carve
// a per-episode hierarchy out of a master taxonomy.
inline HierarchyGraph induce_subtree(const HierarchyGraph& g,
                                     const std::vector<std::size_t>& selected_leaves) {
    std::vector<bool> keep(g.node_count(), false);
    for (std::size_t leaf : selected_leaves) {
        if (leaf >= g.node_count() || !g.is_leaf(leaf))
            throw IndexError("induce_subtree: node " + std::to_string(leaf) + " is not a leaf");
        std::size_t cur = leaf;
        keep[cur] = true;
        while (g.parent[cur]) {
            cur = *g.parent[cur];
            keep[cur] = true;
        }
    }
    std::vector<std::size_t> old_to_new(g.node_count(), 0);
    HierarchyGraph s;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (!keep[i]) continue;
        old_to_new[i] = s.ids.size();
        s.ids.push_back(g.ids[i]);
        s.names.push_back(g.names[i]);
    }
    std::size_t F = s.ids.size();
    s.semantic = Matrix(F, g.semantic_dim());
    s.parent.assign(F, std::nullopt);
    s.children.assign(F, {});
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (!keep[i]) continue;
        std::size_t ni = old_to_new[i];
        for (std::size_t j = 0; j < g.semantic_dim(); ++j) s.semantic(ni, j) = g.semantic(i, j);
        if (g.parent[i] && keep[*g.parent[i]]) {
            std::size_t np = old_to_new[*g.parent[i]];
            s.parent[ni] = np;
            s.children[np].push_back(ni);
            s.edges.emplace_back(np, ni);
        }
    }
    s.root = old_to_new[g.root];
    for (auto& kids : s.children)
        std::sort(kids.begin(), kids.end(),
                  [&](std::size_t a, std::size_t b) { return s.names[a] < s.names[b]; });
    for (std::size_t k = 0; k < selected_leaves.size(); ++k)
        s.leaf_to_class[old_to_new[selected_leaves[k]]] = k;
    validate_hierarchy(s);
    return s;
}

}  // namespace metadt

#endif
