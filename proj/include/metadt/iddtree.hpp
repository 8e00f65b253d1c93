#ifndef METADT_IDDTREE_HPP
#define METADT_IDDTREE_HPP

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "metadt/dtinet.hpp"
#include "metadt/errors.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/tape.hpp"

namespace metadt {

struct ClassDistribution {
    std::vector<double> probs;  // length N over few-shot classes
};

struct TraceStep {
    std::size_t node;
    std::string node_name;
    std::map<std::size_t, double> sibling_probs;  // child -> probability
    std::size_t chosen;
};

struct DecisionTrace {
    std::vector<TraceStep> steps;
    std::size_t predicted_class;
    double final_prob;
};

// P(j | i, x, theta_d): sibling softmax of gamma * cos(x, theta_j) over the
// children of non-leaf node i.
inline std::map<std::size_t, double> conditional_probs(const TreeParams& tp,
                                                       const HierarchyGraph& g, std::size_t node,
                                                       const std::vector<double>& x_feat) {
    if (node >= g.node_count() || g.is_leaf(node))
        throw ContractError("conditional_probs: node " + std::to_string(node) +
                            " is a leaf or out of range");
    const auto& kids = g.children[node];
    std::vector<double> logits;
    logits.reserve(kids.size());
    for (std::size_t c : kids) logits.push_back(cosine_similarity(x_feat, tp.weights.row_vec(c)));
    std::vector<double> p = softmax_scaled(logits, tp.gamma);
    std::map<std::size_t, double> out;
    for (std::size_t i = 0; i < kids.size(); ++i) out[kids[i]] = p[i];
    return out;
}

// P(k | x, theta_d): cumulative product of sibling conditionals along the
// root-to-leaf path tau_k. The root contributes factor 1.
inline ClassDistribution class_probs(const TreeParams& tp, const HierarchyGraph& g,
                                     const std::vector<double>& x_feat) {
    std::size_t N = g.num_classes();
    std::map<std::size_t, std::map<std::size_t, double>> cond;
    for (std::size_t i = 0; i < g.node_count(); ++i)
        if (!g.is_leaf(i)) cond[i] = conditional_probs(tp, g, i, x_feat);
    ClassDistribution dist;
    dist.probs.assign(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
        double p = 1.0;
        auto path = traversal_path(g, k);
        for (std::size_t t = 0; t + 1 < path.size(); ++t) p *= cond[path[t]][path[t + 1]];
        dist.probs[k] = p;
    }
    return dist;
}

// Argmax with ties broken toward the lowest class index.
inline std::size_t argmax_class(const std::vector<double>& probs) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs[k] > probs[best]) best = k;
    return best;
}

inline std::size_t predict(const TreeParams& tp, const HierarchyGraph& g,
                           const std::vector<double>& x_feat) {
    return argmax_class(class_probs(tp, g, x_feat).probs);
}

// Greedy root-to-leaf walk recording full sibling distributions. The greedy
// path can disagree with the cumulative-product argmax on adversarial trees;
// callers compare predicted_class against predict() when that matters.
inline DecisionTrace explain(const TreeParams& tp, const HierarchyGraph& g,
                             const std::vector<double>& x_feat) {
    DecisionTrace tr;
    std::size_t cur = g.root;
    double prob = 1.0;
    while (!g.is_leaf(cur)) {
        auto cond = conditional_probs(tp, g, cur, x_feat);
        std::size_t best = cond.begin()->first;
        for (const auto& [child, p] : cond)
            if (p > cond[best]) best = child;
        tr.steps.push_back(TraceStep{cur, g.names[cur], cond, best});
        prob *= cond[best];
        cur = best;
    }
    tr.predicted_class = g.leaf_to_class.at(cur);
    tr.final_prob = prob;
    return tr;
}

inline nlohmann::json trace_to_json(const DecisionTrace& tr, const HierarchyGraph& g) {
    nlohmann::json doc;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : tr.steps) {
        nlohmann::json st;
        st["node"] = g.ids[s.node];
        st["node_name"] = s.node_name;
        nlohmann::json sib = nlohmann::json::object();
        for (const auto& [child, p] : s.sibling_probs) sib[g.ids[child]] = p;
        st["sibling_probs"] = std::move(sib);
        st["chosen"] = g.ids[s.chosen];
        steps.push_back(std::move(st));
    }
    doc["steps"] = std::move(steps);
    doc["predicted_class"] = tr.predicted_class;
    doc["final_prob"] = tr.final_prob;
    return doc;
}

// Tape-recorded class distribution for one sample: cosine rows, per-node
// sibling softmaxes, path products, assembled as a length-N row vector.
inline Var class_probs_on_tape(GradTape& t, Var theta, double gamma, const HierarchyGraph& g,
                               const std::vector<double>& x_feat) {
    Var s = t.cosine_rows(theta, x_feat);
    std::map<std::size_t, Var> cond;  // non-leaf node -> softmax over its children
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        if (g.is_leaf(i)) continue;
        cond[i] = t.softmax_scaled(t.gather(s, g.children[i]), gamma);
    }
    std::size_t N = g.num_classes();
    std::vector<Var> per_class;
    per_class.reserve(N);
    for (std::size_t k = 0; k < N; ++k) {
        auto path = traversal_path(g, k);
        Var p;
        for (std::size_t step = 0; step + 1 < path.size(); ++step) {
            const auto& kids = g.children[path[step]];
            std::size_t pos =
                std::find(kids.begin(), kids.end(), path[step + 1]) - kids.begin();
            Var factor = t.pick(cond[path[step]], pos);
            p = p.valid() ? t.mul(p, factor) : factor;
        }
        if (!p.valid()) p = t.constant(Matrix(1, 1, {1.0}));  // single-node tree
        per_class.push_back(p);
    }
    return t.concat(per_class);
}

}  // namespace metadt

#endif
