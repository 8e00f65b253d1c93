#ifndef METADT_CONFIG_HPP
#define METADT_CONFIG_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metadt/dtinet.hpp"
#include "metadt/errors.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/metalearn.hpp"
#include "metadt/sha256.hpp"

namespace metadt {

// Flat experiment configuration. Mirrors the TOML config file; CLI flags
// override file values.
struct RunConfig {
    // data
    std::string hierarchy_path;
    std::string features_path;
    std::string embeddings_path;
    bool synthetic = false;
    std::size_t synthetic_num_super = 5;
    std::size_t synthetic_leaves_per_super = 5;
    std::size_t synthetic_samples_per_class = 40;
    double synthetic_superclass_spread = 10.0;
    double synthetic_class_spread = 3.0;
    double synthetic_noise_sigma = 0.3;
    std::size_t synthetic_holdout_per_super = 1;
    std::string semantic_mode = "centers";  // centers | random
    std::string train_classes;              // comma-separated allow-list (file mode)
    std::string test_classes;

    // dims
    Dims dims;

    // episode shape
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t query_per_class = 15;
    std::size_t eval_episodes = 200;

    // inner loop
    std::size_t m_train = 25;
    std::size_t m_test = 25;
    double alpha_inner = 0.05;

    // outer loop
    std::size_t epochs = 20;
    std::size_t episodes_per_epoch = 50;
    double outer_lr = 1e-4;
    double weight_decay = 5e-4;
    std::string grad_mode = "first_order";  // first_order | full_second_order

    // model
    double gamma = 10.0;
    double lambda = -1.0;  // < 0: pick the K-keyed default
    std::string adjacency_norm = "symmetric";  // symmetric | paper_literal
    bool self_loops = true;
    double dropout = 0.0;

    // run
    std::uint64_t seed = 0;

    // ablation flags
    bool no_semantic = false;
    bool no_gcn = false;
    bool no_dtinet = false;
    bool no_adapt = false;

    double effective_lambda() const {
        if (lambda >= 0.0) return lambda;
        return k_shot <= 1 ? 0.8 : 0.1;
    }

    AdjacencyNorm adjacency_norm_mode() const {
        if (adjacency_norm == "symmetric") return AdjacencyNorm::symmetric;
        if (adjacency_norm == "paper_literal") return AdjacencyNorm::paper_literal;
        throw ConfigError("adjacency_norm must be symmetric or paper_literal, got '" +
                          adjacency_norm + "'");
    }

    GradMode grad_mode_value() const {
        if (grad_mode == "first_order") return GradMode::first_order;
        if (grad_mode == "full_second_order") return GradMode::full_second_order;
        throw ConfigError("grad_mode must be first_order or full_second_order, got '" + grad_mode +
                          "'");
    }

    InnerLoopConfig inner_train() const { return InnerLoopConfig{m_train, alpha_inner}; }
    InnerLoopConfig inner_test() const { return InnerLoopConfig{m_test, alpha_inner}; }

    OuterLoopConfig outer() const {
        OuterLoopConfig o;
        o.epochs = epochs;
        o.episodes_per_epoch = episodes_per_epoch;
        o.optimizer.lr = outer_lr;
        o.optimizer.weight_decay = weight_decay;
        o.grad_mode = grad_mode_value();
        return o;
    }

    void validate() const {
        if (synthetic == !features_path.empty())
            throw ConfigError("exactly one of synthetic=true or features_path must be set");
        if (!synthetic && hierarchy_path.empty())
            throw ConfigError("hierarchy_path required when features_path is used");
        if (gamma <= 0.0) throw ConfigError("gamma must be positive");
        if (lambda >= 0.0 && lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
        if (alpha_inner <= 0.0) throw ConfigError("alpha_inner must be positive");
        if (outer_lr <= 0.0) throw ConfigError("outer_lr must be positive");
        if (n_way < 2) throw ConfigError("n_way must be >= 2");
        if (k_shot < 1) throw ConfigError("k_shot must be >= 1");
        if (query_per_class < 1) throw ConfigError("query_per_class must be >= 1");
        if (semantic_mode != "centers" && semantic_mode != "random")
            throw ConfigError("semantic_mode must be centers or random");
        adjacency_norm_mode();
        grad_mode_value();
    }
};

// key -> (default, owning module, description); drives --help and parsing.
struct ConfigKeyInfo {
    std::string key, def, module, desc;
};

inline const std::vector<ConfigKeyInfo>& config_key_table() {
    static const std::vector<ConfigKeyInfo> table = {
        {"hierarchy_path", "", "hierarchy", "hierarchy JSON file"},
        {"features_path", "", "episodes", "feature file (exclusive with synthetic)"},
        {"embeddings_path", "", "hierarchy", "token embedding table for token-based semantics"},
        {"synthetic", "false", "episodes", "generate synthetic hierarchy-aligned features"},
        {"synthetic_num_super", "5", "episodes", "superclasses in the synthetic taxonomy"},
        {"synthetic_leaves_per_super", "5", "episodes", "leaves per superclass"},
        {"synthetic_samples_per_class", "40", "episodes", "samples per leaf class"},
        {"synthetic_superclass_spread", "10", "episodes", "radius scale of superclass centers"},
        {"synthetic_class_spread", "3", "episodes", "radius scale of leaf centers"},
        {"synthetic_noise_sigma", "0.3", "episodes", "per-sample Gaussian noise"},
        {"synthetic_holdout_per_super", "1", "episodes", "leaves per superclass held out for test"},
        {"semantic_mode", "centers", "episodes", "centers | random (no-semantic-link ablation)"},
        {"train_classes", "", "episodes", "comma-separated training class allow-list (file mode)"},
        {"test_classes", "", "episodes", "comma-separated test class allow-list (file mode)"},
        {"d_s", "16", "dtinet", "semantic dimension"},
        {"d_in", "32", "dtinet", "input layer width"},
        {"d_hid", "64", "dtinet", "hidden layer width"},
        {"d_f", "32", "dtinet", "feature/output dimension"},
        {"n_way", "5", "episodes", "classes per episode"},
        {"k_shot", "1", "episodes", "support samples per class"},
        {"query_per_class", "15", "episodes", "query samples per class"},
        {"eval_episodes", "200", "metalearn", "episodes per evaluation"},
        {"m_train", "25", "metalearn", "inner-loop steps in meta-training"},
        {"m_test", "25", "metalearn", "inner-loop steps at meta-test"},
        {"alpha_inner", "0.05", "metalearn", "inner-loop learning rate"},
        {"epochs", "20", "metalearn", "outer-loop epochs"},
        {"episodes_per_epoch", "50", "metalearn", "episodes per epoch"},
        {"outer_lr", "0.0001", "metalearn", "Adam learning rate"},
        {"weight_decay", "0.0005", "metalearn", "decoupled weight decay"},
        {"grad_mode", "first_order", "metalearn", "first_order | full_second_order"},
        {"gamma", "10", "iddtree", "cosine softmax scale"},
        {"lambda", "-1", "fusion", "fusion weight; <0 picks 0.8 (1-shot) / 0.1 (5-shot)"},
        {"adjacency_norm", "symmetric", "hierarchy", "symmetric | paper_literal"},
        {"self_loops", "true", "hierarchy", "add identity before normalization"},
        {"dropout", "0", "dtinet", "dropout rate (outer-train forward passes only)"},
        {"seed", "0", "cli", "master seed"},
        {"no_semantic", "false", "cli", "ablation: one-hot semantic vectors"},
        {"no_gcn", "false", "cli", "ablation: identity adjacency (fully-connected layers)"},
        {"no_dtinet", "false", "cli", "ablation: mean-prototype tree, no inference network"},
        {"no_adapt", "false", "cli", "ablation: m_test = 0"},
    };
    return table;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream ss(v);
    T out;
    ss >> out;
    if (ss.fail() || !ss.eof()) throw ConfigError(key + ": bad numeric value '" + v + "'");
    return out;
}

}  // namespace detail

// key = value lines; strings may be double-quoted; # starts a comment.
inline std::map<std::string, std::string> parse_flat_toml(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = std::string::npos;
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                hash = i;
                break;
            }
        }
        std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(body.substr(0, eq));
        std::string val = detail::trim(body.substr(eq + 1));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
            val = val.substr(1, val.size() - 2);
        kv[key] = val;
    }
    return kv;
}

inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& val) {
    using detail::parse_bool;
    using detail::parse_num;
    if (key == "hierarchy_path") c.hierarchy_path = val;
    else if (key == "features_path") c.features_path = val;
    else if (key == "embeddings_path") c.embeddings_path = val;
    else if (key == "synthetic") c.synthetic = parse_bool(val, key);
    else if (key == "synthetic_num_super") c.synthetic_num_super = parse_num<std::size_t>(val, key);
    else if (key == "synthetic_leaves_per_super")
        c.synthetic_leaves_per_super = parse_num<std::size_t>(val, key);
    else if (key == "synthetic_samples_per_class")
        c.synthetic_samples_per_class = parse_num<std::size_t>(val, key);
    else if (key == "synthetic_superclass_spread")
        c.synthetic_superclass_spread = parse_num<double>(val, key);
    else if (key == "synthetic_class_spread") c.synthetic_class_spread = parse_num<double>(val, key);
    else if (key == "synthetic_noise_sigma") c.synthetic_noise_sigma = parse_num<double>(val, key);
    else if (key == "synthetic_holdout_per_super")
        c.synthetic_holdout_per_super = parse_num<std::size_t>(val, key);
    else if (key == "semantic_mode") c.semantic_mode = val;
    else if (key == "train_classes") c.train_classes = val;
    else if (key == "test_classes") c.test_classes = val;
    else if (key == "d_s") c.dims.d_s = parse_num<std::size_t>(val, key);
    else if (key == "d_in") c.dims.d_in = parse_num<std::size_t>(val, key);
    else if (key == "d_hid") c.dims.d_hid = parse_num<std::size_t>(val, key);
    else if (key == "d_f") c.dims.d_f = parse_num<std::size_t>(val, key);
    else if (key == "n_way") c.n_way = parse_num<std::size_t>(val, key);
    else if (key == "k_shot") c.k_shot = parse_num<std::size_t>(val, key);
    else if (key == "query_per_class") c.query_per_class = parse_num<std::size_t>(val, key);
    else if (key == "eval_episodes") c.eval_episodes = parse_num<std::size_t>(val, key);
    else if (key == "m_train") c.m_train = parse_num<std::size_t>(val, key);
    else if (key == "m_test") c.m_test = parse_num<std::size_t>(val, key);
    else if (key == "alpha_inner") c.alpha_inner = parse_num<double>(val, key);
    else if (key == "epochs") c.epochs = parse_num<std::size_t>(val, key);
    else if (key == "episodes_per_epoch") c.episodes_per_epoch = parse_num<std::size_t>(val, key);
    else if (key == "outer_lr") c.outer_lr = parse_num<double>(val, key);
    else if (key == "weight_decay") c.weight_decay = parse_num<double>(val, key);
    else if (key == "grad_mode") c.grad_mode = val;
    else if (key == "gamma") c.gamma = parse_num<double>(val, key);
    else if (key == "lambda") c.lambda = parse_num<double>(val, key);
    else if (key == "adjacency_norm") c.adjacency_norm = val;
    else if (key == "self_loops") c.self_loops = parse_bool(val, key);
    else if (key == "dropout") c.dropout = parse_num<double>(val, key);
    else if (key == "seed") c.seed = parse_num<std::uint64_t>(val, key);
    else if (key == "no_semantic") c.no_semantic = parse_bool(val, key);
    else if (key == "no_gcn") c.no_gcn = parse_bool(val, key);
    else if (key == "no_dtinet") c.no_dtinet = parse_bool(val, key);
    else if (key == "no_adapt") c.no_adapt = parse_bool(val, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RunConfig c;
    for (const auto& [k, v] : parse_flat_toml(in)) apply_config_kv(c, k, v);
    return c;
}

// Canonical serialization: every key in table order, one per line. Feeds the
// checkpoint digest and reproducible experiment records.
inline std::string canonical_config(const RunConfig& c) {
    std::ostringstream out;
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    out << "adjacency_norm=" << c.adjacency_norm << "\n";
    out << "alpha_inner=" << num(c.alpha_inner) << "\n";
    out << "d_f=" << c.dims.d_f << "\n";
    out << "d_hid=" << c.dims.d_hid << "\n";
    out << "d_in=" << c.dims.d_in << "\n";
    out << "d_s=" << c.dims.d_s << "\n";
    out << "dropout=" << num(c.dropout) << "\n";
    out << "epochs=" << c.epochs << "\n";
    out << "episodes_per_epoch=" << c.episodes_per_epoch << "\n";
    out << "eval_episodes=" << c.eval_episodes << "\n";
    out << "features_path=" << c.features_path << "\n";
    out << "gamma=" << num(c.gamma) << "\n";
    out << "grad_mode=" << c.grad_mode << "\n";
    out << "hierarchy_path=" << c.hierarchy_path << "\n";
    out << "k_shot=" << c.k_shot << "\n";
    out << "lambda=" << num(c.lambda) << "\n";
    out << "m_test=" << c.m_test << "\n";
    out << "m_train=" << c.m_train << "\n";
    out << "n_way=" << c.n_way << "\n";
    out << "no_adapt=" << (c.no_adapt ? "true" : "false") << "\n";
    out << "no_dtinet=" << (c.no_dtinet ? "true" : "false") << "\n";
    out << "no_gcn=" << (c.no_gcn ? "true" : "false") << "\n";
    out << "no_semantic=" << (c.no_semantic ? "true" : "false") << "\n";
    out << "outer_lr=" << num(c.outer_lr) << "\n";
    out << "query_per_class=" << c.query_per_class << "\n";
    out << "seed=" << c.seed << "\n";
    out << "self_loops=" << (c.self_loops ? "true" : "false") << "\n";
    out << "semantic_mode=" << c.semantic_mode << "\n";
    out << "synthetic=" << (c.synthetic ? "true" : "false") << "\n";
    out << "synthetic_class_spread=" << num(c.synthetic_class_spread) << "\n";
    out << "synthetic_holdout_per_super=" << c.synthetic_holdout_per_super << "\n";
    out << "synthetic_leaves_per_super=" << c.synthetic_leaves_per_super << "\n";
    out << "synthetic_noise_sigma=" << num(c.synthetic_noise_sigma) << "\n";
    out << "synthetic_num_super=" << c.synthetic_num_super << "\n";
    out << "synthetic_samples_per_class=" << c.synthetic_samples_per_class << "\n";
    out << "synthetic_superclass_spread=" << num(c.synthetic_superclass_spread) << "\n";
    out << "weight_decay=" << num(c.weight_decay) << "\n";
    return out.str();
}

// Digest over the fields that fix the checkpoint's meaning (shapes and the
// graph operator convention). Evaluation-only knobs are free to differ
// between train and eval configs.
inline std::array<std::uint8_t, 32> config_digest(const RunConfig& c) {
    std::ostringstream out;
    out << "adjacency_norm=" << c.adjacency_norm << "\n"
        << "d_f=" << c.dims.d_f << "\n"
        << "d_hid=" << c.dims.d_hid << "\n"
        << "d_in=" << c.dims.d_in << "\n"
        << "d_s=" << c.dims.d_s << "\n"
        << "gamma=" << c.gamma << "\n"
        << "no_gcn=" << (c.no_gcn ? "true" : "false") << "\n"
        << "no_semantic=" << (c.no_semantic ? "true" : "false") << "\n"
        << "self_loops=" << (c.self_loops ? "true" : "false") << "\n";
    return Sha256::hash(out.str());
}

}  // namespace metadt

#endif
