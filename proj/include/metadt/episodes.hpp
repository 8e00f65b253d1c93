#ifndef METADT_EPISODES_HPP
#define METADT_EPISODES_HPP

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metadt/errors.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/matrix.hpp"
#include "metadt/rng.hpp"

namespace metadt {

struct Sample {
    std::string id;
    std::string class_label;
    std::vector<double> features;
};

struct FeatureDataset {
    std::vector<Sample> samples;
    std::map<std::string, std::size_t> class_index;  // label -> contiguous index
    std::size_t d_f = 0;
    // True generating centers, keyed by hierarchy node id; filled by
    // generate_synthetic and round-tripped through the feature file.
    std::map<std::string, std::vector<double>> centers;

    std::vector<std::string> class_labels() const {
        std::vector<std::string> out(class_index.size());
        for (const auto& [label, idx] : class_index) out[idx] = label;
        return out;
    }
};

inline void index_classes(FeatureDataset& ds) {
    ds.class_index.clear();
    for (const auto& s : ds.samples) ds.class_index.emplace(s.class_label, 0);
    std::size_t i = 0;
    for (auto& [label, idx] : ds.class_index) idx = i++;
}

struct LabeledFeature {
    std::string id;
    std::size_t label;  // episode class index in [0, N)
    std::vector<double> features;
};

struct Episode {
    std::size_t n_way = 0;
    std::size_t k_shot = 0;
    std::vector<LabeledFeature> support;
    std::vector<LabeledFeature> query;
    std::vector<std::string> class_map;  // episode index -> dataset class label
};

// Uniformly samples n classes, then k support + q_per_class query samples per
// class without replacement. Deterministic under a fixed-seed rng.
inline Episode sample_episode(const FeatureDataset& ds, std::size_t n, std::size_t k,
                              std::size_t q_per_class, Rng& rng) {
    auto labels = ds.class_labels();
    if (labels.size() < n)
        throw CapacityError("sample_episode: need " + std::to_string(n) + " classes, have " +
                            std::to_string(labels.size()));
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        by_class[ds.samples[i].class_label].push_back(i);

    // Partial Fisher-Yates over the label list.
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, labels.size() - 1);
        std::swap(labels[i], labels[pick(rng)]);
    }
    labels.resize(n);

    Episode ep;
    ep.n_way = n;
    ep.k_shot = k;
    ep.class_map = labels;
    for (std::size_t cls = 0; cls < n; ++cls) {
        auto idx = by_class[labels[cls]];
        if (idx.size() < k + q_per_class)
            throw CapacityError("sample_episode: class '" + labels[cls] + "' has " +
                                std::to_string(idx.size()) + " samples, need " +
                                std::to_string(k + q_per_class));
        for (std::size_t i = 0; i < k + q_per_class; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        for (std::size_t i = 0; i < k; ++i) {
            const Sample& s = ds.samples[idx[i]];
            ep.support.push_back(LabeledFeature{s.id, cls, s.features});
        }
        for (std::size_t i = k; i < k + q_per_class; ++i) {
            const Sample& s = ds.samples[idx[i]];
            ep.query.push_back(LabeledFeature{s.id, cls, s.features});
        }
    }
    return ep;
}

// ---------------------------------------------------------------------------
// Synthetic hierarchy-aligned features (desk-scale stand-in for CNN features).

struct SyntheticSpec {
    HierarchyGraph hierarchy;
    std::size_t d_f = 32;
    double superclass_spread = 10.0;
    double class_spread = 3.0;
    double noise_sigma = 0.3;
};

inline void validate_spec(const SyntheticSpec& spec) {
    if (spec.class_spread > spec.superclass_spread)
        throw ConfigError("synthetic spec: class_spread must not exceed superclass_spread");
    if (spec.noise_sigma < 0.0) throw ConfigError("synthetic spec: negative noise_sigma");
}

// Hierarchical Gaussian placement: top-level centers at radius
// ~superclass_spread around the origin, deeper centers at ~class_spread
// around their parent, samples at leaf center + N(0, noise_sigma^2).
// Leaf class labels are the hierarchy leaf ids.
inline FeatureDataset generate_synthetic(const SyntheticSpec& spec, std::size_t samples_per_class,
                                         Rng& rng) {
    validate_spec(spec);
    const HierarchyGraph& g = spec.hierarchy;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> center(g.node_count());
    center[g.root] = std::vector<double>(spec.d_f, 0.0);

    // BFS from the root in child order keeps center placement deterministic.
    std::vector<std::size_t> order{g.root};
    for (std::size_t qi = 0; qi < order.size(); ++qi)
        for (std::size_t c : g.children[order[qi]]) order.push_back(c);
    for (std::size_t qi = 1; qi < order.size(); ++qi) {
        std::size_t node = order[qi];
        std::size_t par = *g.parent[node];
        double spread = par == g.root ? spec.superclass_spread : spec.class_spread;
        center[node] = center[par];
        for (std::size_t j = 0; j < spec.d_f; ++j) center[node][j] += spread * gauss(rng);
    }

    FeatureDataset ds;
    ds.d_f = spec.d_f;
    for (std::size_t i = 0; i < g.node_count(); ++i) ds.centers[g.ids[i]] = center[i];
    for (std::size_t qi = 0; qi < order.size(); ++qi) {
        std::size_t node = order[qi];
        if (!g.is_leaf(node)) continue;
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            Sample smp;
            smp.class_label = g.ids[node];
            smp.id = g.ids[node] + "#" + std::to_string(s);
            smp.features = center[node];
            for (std::size_t j = 0; j < spec.d_f; ++j)
                smp.features[j] += spec.noise_sigma * gauss(rng);
            ds.samples.push_back(std::move(smp));
        }
    }
    index_classes(ds);
    return ds;
}

// Balanced synthetic taxonomy: root -> num_super superclasses -> leaves.
// Semantics start zeroed; attach_center_semantics fills them in.
inline HierarchyGraph make_synthetic_taxonomy(std::size_t num_super, std::size_t leaves_per_super,
                                              std::size_t d_s) {
    HierarchyGraph g;
    auto pad = [](std::size_t i) {
        std::string s = std::to_string(i);
        return s.size() < 2 ? "0" + s : s;
    };
    g.ids.push_back("root");
    g.names.push_back("root");
    for (std::size_t s = 0; s < num_super; ++s) {
        g.ids.push_back("super" + pad(s));
        g.names.push_back("super" + pad(s));
        for (std::size_t l = 0; l < leaves_per_super; ++l) {
            g.ids.push_back("leaf" + pad(s) + "_" + pad(l));
            g.names.push_back("leaf" + pad(s) + "_" + pad(l));
        }
    }
    std::size_t F = g.ids.size();
    g.semantic = Matrix(F, d_s);
    g.parent.assign(F, std::nullopt);
    g.children.assign(F, {});
    g.root = 0;
    std::size_t idx = 1;
    std::size_t cls = 0;
    for (std::size_t s = 0; s < num_super; ++s) {
        std::size_t super = idx++;
        g.parent[super] = 0;
        g.children[0].push_back(super);
        g.edges.emplace_back(0, super);
        for (std::size_t l = 0; l < leaves_per_super; ++l) {
            std::size_t leaf = idx++;
            g.parent[leaf] = super;
            g.children[super].push_back(leaf);
            g.edges.emplace_back(super, leaf);
            g.leaf_to_class[leaf] = cls++;
        }
    }
    validate_hierarchy(g);
    return g;
}

enum class SemanticMode { centers, random };

// Semantic rows from unit-normalized true centers through a fixed random
// projection, so the semantic prior carries class geometry (the role class
// names play with word embeddings). SemanticMode::random severs that link
// for the no-semantic ablation.
inline void attach_center_semantics(HierarchyGraph& g,
                                    const std::map<std::string, std::vector<double>>& centers,
                                    std::size_t d_s, std::uint64_t seed,
                                    SemanticMode mode = SemanticMode::centers) {
    Rng rng(mix64(seed ^ 0x5eedc0de));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::size_t F = g.node_count();
    g.semantic = Matrix(F, d_s);
    if (mode == SemanticMode::random) {
        for (std::size_t i = 0; i < g.semantic.size(); ++i) g.semantic[i] = gauss(rng);
        return;
    }
    std::size_t d_f = centers.begin()->second.size();
    Matrix proj(d_s, d_f);
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = gauss(rng) / std::sqrt(double(d_f));
    for (std::size_t i = 0; i < F; ++i) {
        auto it = centers.find(g.ids[i]);
        if (it == centers.end())
            throw ValidationError("missing-center", "no center for node '" + g.ids[i] + "'");
        std::vector<double> c = it->second;
        double n = norm(c);
        if (n > 0)
            for (double& v : c) v /= n;
        for (std::size_t r = 0; r < d_s; ++r) g.semantic(i, r) = dot(proj.row_vec(r), c);
    }
}

// ---------------------------------------------------------------------------
// Feature file: "#metadt-features v1 d_f=<int>" header, optional
// "#center <label> v..." metadata lines, then id<TAB>label<TAB>v1 v2 ... rows
// with shortest round-trip decimals.

inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void save_features(const FeatureDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write feature file: " + path);
    out << "#metadt-features v1 d_f=" << ds.d_f << "\n";
    for (const auto& [label, c] : ds.centers) {
        out << "#center " << label;
        for (double v : c) out << " " << format_double(v);
        out << "\n";
    }
    for (const auto& s : ds.samples) {
        out << s.id << "\t" << s.class_label << "\t";
        for (std::size_t i = 0; i < s.features.size(); ++i)
            out << (i ? " " : "") << format_double(s.features[i]);
        out << "\n";
    }
}

inline FeatureDataset load_features(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open feature file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    FeatureDataset ds;
    {
        std::istringstream hdr(line);
        std::string tag, ver, dim;
        hdr >> tag >> ver >> dim;
        if (tag != "#metadt-features" || ver != "v1" || dim.rfind("d_f=", 0) != 0)
            throw ParseError(path + ": bad header '" + line + "'");
        ds.d_f = std::stoul(dim.substr(4));
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ss(line);
            std::string tag;
            ss >> tag;
            if (tag == "#center") {
                std::string label;
                ss >> label;
                std::vector<double> c;
                double x;
                while (ss >> x) c.push_back(x);
                ds.centers[label] = std::move(c);
            }
            continue;
        }
        std::size_t t1 = line.find('\t');
        std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected id<TAB>class<TAB>values");
        Sample s;
        s.id = line.substr(0, t1);
        s.class_label = line.substr(t1 + 1, t2 - t1 - 1);
        std::istringstream vs(line.substr(t2 + 1));
        double x;
        while (vs >> x) s.features.push_back(x);
        if (s.features.size() != ds.d_f)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(ds.d_f) + " values, got " +
                             std::to_string(s.features.size()));
        ds.samples.push_back(std::move(s));
    }
    index_classes(ds);
    return ds;
}

}  // namespace metadt

#endif
