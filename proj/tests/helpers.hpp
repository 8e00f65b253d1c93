#ifndef METADT_TEST_HELPERS_HPP
#define METADT_TEST_HELPERS_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "metadt/dtinet.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/iddtree.hpp"
#include "metadt/rng.hpp"

namespace metadt::testing {

// The 7-node worked-example tree: leaves 0..3, internal 4 (parent of 0,1)
// and 5 (parent of 2,3), root 6. Node ids mirror the indices.
inline HierarchyGraph figure4_tree(std::size_t d_s = 4) {
    HierarchyGraph g;
    for (int i = 0; i < 7; ++i) {
        g.ids.push_back("n" + std::to_string(i));
        g.names.push_back("n" + std::to_string(i));
    }
    g.semantic = Matrix(7, d_s);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < d_s; ++j)
            g.semantic(i, j) = 0.1 * double(i + 1) + 0.01 * double(j);
    g.parent.assign(7, std::nullopt);
    g.children.assign(7, {});
    g.root = 6;
    auto link = [&](std::size_t p, std::size_t c) {
        g.parent[c] = p;
        g.children[p].push_back(c);
        g.edges.emplace_back(p, c);
    };
    link(6, 4);
    link(6, 5);
    link(4, 0);
    link(4, 1);
    link(5, 2);
    link(5, 3);
    g.leaf_to_class = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    validate_hierarchy(g);
    return g;
}

// 2-d prototype with the given cosine against x = [1, 0].
inline std::vector<double> proto_with_cosine(double c) {
    return {c, std::sqrt(1.0 - c * c)};
}

// Tree parameters planted so that, for x = [1, 0], the sibling softmax at a
// node with children (a, b) yields (p, 1-p): the cosine gap must equal
// log(p/(1-p)) / gamma.
inline TreeParams figure4_params(double gamma = 10.0) {
    auto gap = [gamma](double p) { return std::log(p / (1.0 - p)) / gamma; };
    Matrix w(7, 2);
    auto set_row = [&w](std::size_t r, const std::vector<double>& v) {
        w(r, 0) = v[0];
        w(r, 1) = v[1];
    };
    // Root 6 -> (4, 5): (0.3, 0.7).  Node 5 -> (2, 3): (0.4, 0.6).
    // Node 4 -> (0, 1): (0.5, 0.5).
    double d65 = gap(0.7);
    set_row(4, proto_with_cosine(-d65 / 2));
    set_row(5, proto_with_cosine(+d65 / 2));
    double d53 = gap(0.6);
    set_row(2, proto_with_cosine(-d53 / 2));
    set_row(3, proto_with_cosine(+d53 / 2));
    set_row(0, proto_with_cosine(0.1));
    set_row(1, proto_with_cosine(0.1));
    set_row(6, proto_with_cosine(0.5));  // unused (no decision above the root)
    return TreeParams{std::move(w), gamma};
}

// Random tree with depth <= max_depth below the root and at most max_leaves
// leaves; at least 2 leaves. Semantic rows are standard normal.
inline HierarchyGraph random_tree(Rng& rng, std::size_t max_depth = 3, std::size_t max_leaves = 20,
                                  std::size_t d_s = 4) {
    std::uniform_int_distribution<int> branch(1, 3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    struct Node {
        std::size_t depth;
        std::optional<std::size_t> parent;
    };
    std::vector<Node> nodes{{0, std::nullopt}};
    std::vector<std::size_t> frontier{0};
    std::size_t leaves_budget = max_leaves;
    while (!frontier.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t n : frontier) {
            if (nodes[n].depth == max_depth) continue;
            int kids = branch(rng);
            if (nodes[n].depth == 0 && kids < 2) kids = 2;
            for (int k = 0; k < kids && leaves_budget > 0; ++k) {
                nodes.push_back({nodes[n].depth + 1, n});
                next.push_back(nodes.size() - 1);
                --leaves_budget;
            }
        }
        frontier = next;
    }
    HierarchyGraph g;
    std::size_t F = nodes.size();
    for (std::size_t i = 0; i < F; ++i) {
        g.ids.push_back("t" + std::to_string(i));
        g.names.push_back("t" + std::to_string(i));
    }
    g.semantic = Matrix(F, d_s);
    for (std::size_t i = 0; i < g.semantic.size(); ++i) g.semantic[i] = gauss(rng);
    g.parent.assign(F, std::nullopt);
    g.children.assign(F, {});
    g.root = 0;
    for (std::size_t i = 1; i < F; ++i) {
        g.parent[i] = nodes[i].parent;
        g.children[*nodes[i].parent].push_back(i);
        g.edges.emplace_back(*nodes[i].parent, i);
    }
    std::size_t cls = 0;
    for (std::size_t i = 0; i < F; ++i)
        if (g.children[i].empty()) g.leaf_to_class[i] = cls++;
    validate_hierarchy(g);
    return g;
}

inline TreeParams random_params(const HierarchyGraph& g, std::size_t d_f, Rng& rng,
                                double gamma = 10.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix w(g.node_count(), d_f);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = gauss(rng);
    return TreeParams{std::move(w), gamma};
}

inline std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = gauss(rng);
    return v;
}

// Independent path-enumeration oracle for class probabilities: per-edge
// softmax factors from the raw exp-ratio formula, multiplied along each
// root-to-leaf path found by explicit DFS. Shares no code with class_probs.
inline std::vector<double> class_probs_oracle(const TreeParams& tp, const HierarchyGraph& g,
                                              const std::vector<double>& x) {
    auto cos_raw = [&](std::size_t node) {
        double num = 0, nx = 0, nw = 0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            num += x[j] * tp.weights(node, j);
            nx += x[j] * x[j];
            nw += tp.weights(node, j) * tp.weights(node, j);
        }
        return num / (std::sqrt(nx) * std::sqrt(nw));
    };
    std::vector<double> probs(g.num_classes(), 0.0);
    // DFS stack of (node, accumulated product).
    std::vector<std::pair<std::size_t, double>> stack{{g.root, 1.0}};
    while (!stack.empty()) {
        auto [node, acc] = stack.back();
        stack.pop_back();
        if (g.children[node].empty()) {
            probs[g.leaf_to_class.at(node)] = acc;
            continue;
        }
        double z = 0.0;
        for (std::size_t c : g.children[node]) z += std::exp(tp.gamma * cos_raw(c));
        for (std::size_t c : g.children[node])
            stack.push_back({c, acc * std::exp(tp.gamma * cos_raw(c)) / z});
    }
    return probs;
}

// Central-difference derivative of f at x.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
    double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

}  // namespace metadt::testing

#endif
