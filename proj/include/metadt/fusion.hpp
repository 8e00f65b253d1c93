#ifndef METADT_FUSION_HPP
#define METADT_FUSION_HPP

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "metadt/episodes.hpp"
#include "metadt/errors.hpp"
#include "metadt/iddtree.hpp"
#include "metadt/matrix.hpp"
#include "metadt/tape.hpp"

namespace metadt {

// Nearest-prototype cosine classifier fit on support means.
struct CosineClassifier {
    Matrix prototypes;  // N x d_f
    double gamma = 10.0;
};

struct FusionConfig {
    double lambda = 0.8;  // paper defaults: 0.8 (1-shot), 0.1 (5-shot)

    void validate() const {
        if (lambda < 0.0 || lambda > 1.0) throw ConfigError("fusion lambda must be in [0, 1]");
    }

    static FusionConfig default_for_shots(std::size_t k) {
        return FusionConfig{k <= 1 ? 0.8 : 0.1};
    }
};

inline CosineClassifier fit_cosine(const std::vector<LabeledFeature>& support, std::size_t n,
                                   double gamma = 10.0) {
    if (support.empty()) throw ContractError("fit_cosine: empty support");
    std::size_t d_f = support.front().features.size();
    Matrix proto(n, d_f);
    std::vector<std::size_t> counts(n, 0);
    for (const auto& s : support) {
        if (s.label >= n) throw IndexError("fit_cosine: label out of range");
        for (std::size_t j = 0; j < d_f; ++j) proto(s.label, j) += s.features[j];
        ++counts[s.label];
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (counts[k] == 0)
            throw ContractError("fit_cosine: class " + std::to_string(k) + " has no support");
        for (std::size_t j = 0; j < d_f; ++j) proto(k, j) /= static_cast<double>(counts[k]);
    }
    return CosineClassifier{std::move(proto), gamma};
}

inline ClassDistribution cosine_distribution(const CosineClassifier& c,
                                             const std::vector<double>& x_feat) {
    std::vector<double> logits;
    logits.reserve(c.prototypes.rows());
    for (std::size_t k = 0; k < c.prototypes.rows(); ++k)
        logits.push_back(cosine_similarity(x_feat, c.prototypes.row_vec(k)));
    return ClassDistribution{softmax_scaled(logits, c.gamma)};
}

// lambda * p_tree + (1 - lambda) * p_cos, entrywise.
inline ClassDistribution fuse(const ClassDistribution& p_tree, const ClassDistribution& p_cos,
                              const FusionConfig& cfg) {
    cfg.validate();
    if (p_tree.probs.size() != p_cos.probs.size())
        throw ShapeError("fuse: length mismatch " + std::to_string(p_tree.probs.size()) + " vs " +
                         std::to_string(p_cos.probs.size()));
    ClassDistribution out;
    out.probs.resize(p_tree.probs.size());
    for (std::size_t k = 0; k < out.probs.size(); ++k)
        out.probs[k] = cfg.lambda * p_tree.probs[k] + (1.0 - cfg.lambda) * p_cos.probs[k];
    return out;
}

}  // namespace metadt

#endif
