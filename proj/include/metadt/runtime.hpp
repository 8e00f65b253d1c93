#ifndef METADT_RUNTIME_HPP
#define METADT_RUNTIME_HPP

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metadt/config.hpp"
#include "metadt/dtinet.hpp"
#include "metadt/episodes.hpp"
#include "metadt/errors.hpp"
#include "metadt/fusion.hpp"
#include "metadt/hierarchy.hpp"
#include "metadt/iddtree.hpp"
#include "metadt/metalearn.hpp"
#include "metadt/rng.hpp"

namespace metadt {

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Config resolved into data: master taxonomy (semantics attached), feature
// dataset, and the train/test class split. Immutable after build().
struct Workbench {
    RunConfig cfg;
    HierarchyGraph master;
    FeatureDataset dataset;
    std::vector<std::string> train_labels;
    std::vector<std::string> test_labels;

    static Workbench build(RunConfig cfg) {
        cfg.validate();
        Workbench wb;
        wb.cfg = cfg;
        if (cfg.synthetic) {
            wb.master = make_synthetic_taxonomy(cfg.synthetic_num_super,
                                                cfg.synthetic_leaves_per_super, cfg.dims.d_s);
            SyntheticSpec spec{wb.master, cfg.dims.d_f, cfg.synthetic_superclass_spread,
                               cfg.synthetic_class_spread, cfg.synthetic_noise_sigma};
            Rng rng(mix64(cfg.seed ^ 0xda7a));
            wb.dataset = generate_synthetic(spec, cfg.synthetic_samples_per_class, rng);
            attach_center_semantics(wb.master, wb.dataset.centers, cfg.dims.d_s, cfg.seed,
                                    cfg.semantic_mode == "random" ? SemanticMode::random
                                                                  : SemanticMode::centers);
            // Last holdout_per_super leaves of each superclass go to test.
            for (std::size_t s : wb.master.children[wb.master.root]) {
                const auto& kids = wb.master.children[s];
                std::size_t hold = std::min(cfg.synthetic_holdout_per_super, kids.size());
                for (std::size_t i = 0; i < kids.size(); ++i) {
                    const std::string& id = wb.master.ids[kids[i]];
                    if (i + hold >= kids.size())
                        wb.test_labels.push_back(id);
                    else
                        wb.train_labels.push_back(id);
                }
            }
        } else {
            std::optional<EmbeddingTable> table;
            if (!cfg.embeddings_path.empty()) {
                // d_s must be known before reading the table; it is in the config.
                table = load_embedding_table(cfg.embeddings_path, cfg.dims.d_s);
            }
            wb.master = load_hierarchy(cfg.hierarchy_path, table ? &*table : nullptr);
            if (wb.master.semantic_dim() != cfg.dims.d_s)
                throw ConfigError("hierarchy d_s " + std::to_string(wb.master.semantic_dim()) +
                                  " != config d_s " + std::to_string(cfg.dims.d_s));
            wb.dataset = load_features(cfg.features_path);
            if (wb.dataset.d_f != cfg.dims.d_f)
                throw ConfigError("feature d_f " + std::to_string(wb.dataset.d_f) +
                                  " != config d_f " + std::to_string(cfg.dims.d_f));
            for (const auto& [label, idx] : wb.dataset.class_index) {
                std::size_t node = 0;
                try {
                    node = wb.master.index_of(label);
                } catch (const IndexError&) {
                    throw ValidationError("unknown-class",
                                          "dataset class '" + label + "' is not a hierarchy node");
                }
                if (!wb.master.is_leaf(node))
                    throw ValidationError("unknown-class",
                                          "dataset class '" + label + "' is not a leaf");
            }
            auto all = wb.dataset.class_labels();
            wb.train_labels = cfg.train_classes.empty() ? all : split_csv(cfg.train_classes);
            wb.test_labels = cfg.test_classes.empty() ? all : split_csv(cfg.test_classes);
        }
        if (cfg.no_semantic) {
            // One-hot semantics over the master node index space; W0 is
            // reshaped to F x d_in accordingly.
            wb.master.semantic = Matrix::identity(wb.master.node_count());
        }
        return wb;
    }

    Dims effective_dims() const {
        Dims d = cfg.dims;
        if (cfg.no_semantic) d.d_s = master.node_count();
        return d;
    }

    FeatureDataset subset(const std::vector<std::string>& labels) const {
        std::set<std::string> keep(labels.begin(), labels.end());
        FeatureDataset out;
        out.d_f = dataset.d_f;
        out.centers = dataset.centers;
        for (const auto& s : dataset.samples)
            if (keep.count(s.class_label)) out.samples.push_back(s);
        index_classes(out);
        return out;
    }

    Task task_from_episode(Episode ep) const {
        std::vector<std::size_t> leaves;
        leaves.reserve(ep.class_map.size());
        for (const auto& label : ep.class_map) leaves.push_back(master.index_of(label));
        HierarchyGraph sub = induce_subtree(master, leaves);
        AdjacencyOperator a_hat =
            cfg.no_gcn ? AdjacencyOperator{Matrix::identity(sub.node_count())}
                       : normalize_adjacency(build_adjacency(sub), cfg.self_loops,
                                             cfg.adjacency_norm_mode());
        return Task{std::move(ep), std::move(sub), std::move(a_hat)};
    }

    Task sample_task(const FeatureDataset& pool, Rng& rng) const {
        return task_from_episode(
            sample_episode(pool, cfg.n_way, cfg.k_shot, cfg.query_per_class, rng));
    }

    std::vector<Task> test_tasks(std::size_t count, std::uint64_t seed) const {
        FeatureDataset pool = subset(test_labels);
        Rng rng(child_seed(seed, 0xE7A1));
        std::vector<Task> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(sample_task(pool, rng));
        return out;
    }
};

// Ablation (iv): leaf parameters are class support means; non-leaf
// parameters average their children's parameters bottom-up.
inline TreeParams prototype_tree_params(const Task& task, double gamma) {
    const HierarchyGraph& g = task.g;
    std::size_t d_f = task.episode.support.front().features.size();
    Matrix w(g.node_count(), d_f);
    std::vector<std::size_t> counts(g.node_count(), 0);
    for (const auto& s : task.episode.support) {
        std::size_t leaf = g.class_leaf(s.label);
        for (std::size_t j = 0; j < d_f; ++j) w(leaf, j) += s.features[j];
        ++counts[leaf];
    }
    for (std::size_t i = 0; i < g.node_count(); ++i)
        if (counts[i])
            for (std::size_t j = 0; j < d_f; ++j) w(i, j) /= static_cast<double>(counts[i]);
    // Children before parents: sort nodes by depth, deepest first.
    std::vector<std::size_t> order(g.node_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return g.depth(a) > g.depth(b); });
    for (std::size_t i : order) {
        if (g.is_leaf(i)) continue;
        for (std::size_t c : g.children[i])
            for (std::size_t j = 0; j < d_f; ++j) w(i, j) += w(c, j);
        for (std::size_t j = 0; j < d_f; ++j)
            w(i, j) /= static_cast<double>(g.children[i].size());
    }
    return TreeParams{std::move(w), gamma};
}

// Per-episode evaluation honoring the ablation flags.
inline EpisodeEval eval_task(const Workbench& wb, const DTINetParams& params, const Task& task,
                             const InnerLoopConfig& inner) {
    if (wb.cfg.no_dtinet) {
        TreeParams tp = prototype_tree_params(task, wb.cfg.gamma);
        EpisodeEval ev;
        std::size_t correct = 0;
        for (const auto& q : task.episode.query) {
            ClassDistribution d = class_probs(tp, task.g, q.features);
            std::size_t pred = argmax_class(d.probs);
            if (pred == q.label) ++correct;
            ev.predictions.push_back(pred);
            ev.distributions.push_back(std::move(d));
        }
        ev.accuracy = double(correct) / double(task.episode.query.size());
        return ev;
    }
    InnerLoopConfig eff = inner;
    if (wb.cfg.no_adapt) eff.steps = 0;
    return eval_episode(params, task, eff, wb.cfg.gamma);
}

// ---------------------------------------------------------------------------
// Commands. Each returns its primary artifact; the CLI wrapper handles exit
// codes and printing.

struct TrainOutput {
    DTINetParams params;
    std::string checkpoint_path;
    std::string log_path;
};

inline TrainOutput run_train(const Workbench& wb, const std::string& out_dir) {
    const RunConfig& cfg = wb.cfg;
    Rng init_rng(mix64(cfg.seed));
    DTINetParams init = init_params(wb.effective_dims(), init_rng);

    TrainOutput out;
    out.checkpoint_path = out_dir + "/checkpoint.mdtc";
    out.log_path = out_dir + "/train_log.jsonl";

    DTINetParams trained = init;
    std::ofstream log(out.log_path, std::ios::trunc);
    if (!log) throw ParseError("cannot write training log: " + out.log_path);
    if (cfg.epochs > 0) {
        FeatureDataset pool = wb.subset(wb.train_labels);
        TaskStream stream = [&wb, &pool](Rng& rng) { return wb.sample_task(pool, rng); };
        DropoutConfig drop;
        drop.rate = cfg.dropout;
        Rng train_rng(child_seed(cfg.seed, 0x7124));
        auto res = meta_train(init, stream, cfg.inner_train(), cfg.outer(), train_rng, cfg.gamma,
                              drop, [&log](const TrainRecord& r) {
                                  nlohmann::json j{{"epoch", r.epoch},
                                                   {"episode", r.episode},
                                                   {"support_loss_initial", r.support_loss_initial},
                                                   {"support_loss_final", r.support_loss_final},
                                                   {"query_loss", r.query_loss},
                                                   {"query_accuracy", r.query_accuracy},
                                                   {"wall_ms", r.wall_ms}};
                                  log << j.dump() << "\n";
                              });
        trained = res.params;
    }
    save_checkpoint(trained, config_digest(cfg), out.checkpoint_path);
    out.params = trained;
    return out;
}

struct EvalRow {
    std::string name;
    AccuracyReport report;
};

struct EvalOutput {
    std::vector<EvalRow> rows;  // MetaDT always; Cosine/Fused when fusing
};

inline DTINetParams load_checked_params(const RunConfig& cfg, const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    auto expect = config_digest(cfg);
    if (ck.config_digest != expect)
        throw ConfigError("checkpoint digest mismatch: checkpoint " +
                          Sha256::hex(ck.config_digest) + " vs config " + Sha256::hex(expect));
    return ck.params;
}

inline EvalOutput run_eval(const Workbench& wb, const DTINetParams& params, bool with_fusion) {
    const RunConfig& cfg = wb.cfg;
    auto tasks = wb.test_tasks(cfg.eval_episodes, cfg.seed);
    std::vector<double> acc_tree, acc_cos, acc_fused;
    FusionConfig fcfg{cfg.effective_lambda()};
    for (const auto& task : tasks) {
        EpisodeEval ev = eval_task(wb, params, task, cfg.inner_test());
        acc_tree.push_back(ev.accuracy);
        if (!with_fusion) continue;
        CosineClassifier cc = fit_cosine(task.episode.support, task.episode.n_way, cfg.gamma);
        std::size_t cos_ok = 0, fus_ok = 0;
        for (std::size_t qi = 0; qi < task.episode.query.size(); ++qi) {
            const auto& q = task.episode.query[qi];
            ClassDistribution pc = cosine_distribution(cc, q.features);
            ClassDistribution pf = fuse(ev.distributions[qi], pc, fcfg);
            if (argmax_class(pc.probs) == q.label) ++cos_ok;
            if (argmax_class(pf.probs) == q.label) ++fus_ok;
        }
        acc_cos.push_back(double(cos_ok) / double(task.episode.query.size()));
        acc_fused.push_back(double(fus_ok) / double(task.episode.query.size()));
    }
    EvalOutput out;
    out.rows.push_back({"MetaDT", summarize_accuracies(acc_tree)});
    if (with_fusion) {
        out.rows.push_back({"Cosine", summarize_accuracies(acc_cos)});
        std::ostringstream name;
        name << "Fused(lambda=" << fcfg.lambda << ")";
        out.rows.push_back({name.str(), summarize_accuracies(acc_fused)});
    }
    return out;
}

// Deterministic adaptation task over every test class, used by explain and
// dump-weights: support is a seeded K-shot draw per class, preferring samples
// outside the requested query ids.
inline Task full_class_task(const Workbench& wb, const std::set<std::string>& exclude_ids,
                            std::uint64_t seed) {
    FeatureDataset pool = wb.subset(wb.test_labels);
    auto labels = pool.class_labels();
    Episode ep;
    ep.n_way = labels.size();
    ep.k_shot = wb.cfg.k_shot;
    ep.class_map = labels;
    Rng rng(child_seed(seed, 0xF00D));
    for (std::size_t cls = 0; cls < labels.size(); ++cls) {
        std::vector<std::size_t> idx, preferred;
        for (std::size_t i = 0; i < pool.samples.size(); ++i)
            if (pool.samples[i].class_label == labels[cls]) {
                idx.push_back(i);
                if (!exclude_ids.count(pool.samples[i].id)) preferred.push_back(i);
            }
        auto& from = preferred.size() >= wb.cfg.k_shot ? preferred : idx;
        if (from.size() < wb.cfg.k_shot)
            throw CapacityError("class '" + labels[cls] + "' has " + std::to_string(from.size()) +
                                " samples, need " + std::to_string(wb.cfg.k_shot));
        for (std::size_t i = 0; i < wb.cfg.k_shot; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, from.size() - 1);
            std::swap(from[i], from[pick(rng)]);
            const Sample& s = pool.samples[from[i]];
            ep.support.push_back(LabeledFeature{s.id, cls, s.features});
        }
    }
    return wb.task_from_episode(std::move(ep));
}

// One trace record per requested sample; wrong predictions annotate the
// shallowest node where the greedy walk departs from the true class's path.
inline std::vector<nlohmann::json> run_explain(const Workbench& wb, const DTINetParams& params,
                                               const std::vector<std::string>& sample_ids) {
    std::set<std::string> wanted(sample_ids.begin(), sample_ids.end());
    Task task = full_class_task(wb, wanted, wb.cfg.seed);
    InnerLoopConfig inner = wb.cfg.inner_test();
    if (wb.cfg.no_adapt) inner.steps = 0;
    TreeParams tp;
    if (wb.cfg.no_dtinet) {
        tp = prototype_tree_params(task, wb.cfg.gamma);
    } else {
        AdaptedState st =
            adapt(params, task.episode.support, task.g, task.a_hat, inner, wb.cfg.gamma);
        tp = infer_tree_params(st.params, task.g.semantic, task.a_hat, {}, Phase::eval, nullptr,
                               wb.cfg.gamma);
    }
    std::map<std::string, std::size_t> cls_of;
    for (std::size_t k = 0; k < task.episode.class_map.size(); ++k)
        cls_of[task.episode.class_map[k]] = k;

    std::vector<nlohmann::json> out;
    for (const auto& id : sample_ids) {
        const Sample* sample = nullptr;
        for (const auto& s : wb.dataset.samples)
            if (s.id == id) sample = &s;
        if (!sample) throw IndexError("unknown sample id '" + id + "'");
        auto cit = cls_of.find(sample->class_label);
        if (cit == cls_of.end())
            throw IndexError("sample '" + id + "' class not in the evaluated class set");
        std::size_t true_class = cit->second;
        DecisionTrace tr = explain(tp, task.g, sample->features);
        nlohmann::json rec = trace_to_json(tr, task.g);
        rec["sample_id"] = id;
        rec["true_class"] = true_class;
        rec["argmax_class"] = predict(tp, task.g, sample->features);
        rec["greedy_matches_argmax"] =
            rec["argmax_class"].get<std::size_t>() == tr.predicted_class;
        if (tr.predicted_class != true_class) {
            auto true_path = traversal_path(task.g, true_class);
            for (std::size_t i = 0; i < tr.steps.size(); ++i) {
                std::size_t expect = i + 1 < true_path.size() ? true_path[i + 1] : true_path.back();
                if (tr.steps[i].chosen != expect) {
                    rec["diverged_at"] = task.g.ids[tr.steps[i].node];
                    rec["chose"] = task.g.ids[tr.steps[i].chosen];
                    rec["true_branch"] = task.g.ids[expect];
                    break;
                }
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// Weight table: node_id, node_name, depth, phase (before/after), weights.
inline std::string run_dump_weights(const Workbench& wb, const DTINetParams& params,
                                    std::optional<std::uint64_t> episode_seed) {
    std::ostringstream out;
    out << "node_id\tnode_name\tdepth\tphase";
    for (std::size_t j = 0; j < wb.cfg.dims.d_f; ++j) out << "\tw" << j;
    out << "\n";
    auto emit = [&out](const HierarchyGraph& g, const TreeParams& tp, const char* phase) {
        for (std::size_t i = 0; i < g.node_count(); ++i) {
            out << g.ids[i] << "\t" << g.names[i] << "\t" << g.depth(i) << "\t" << phase;
            for (std::size_t j = 0; j < tp.weights.cols(); ++j)
                out << "\t" << format_double(tp.weights(i, j));
            out << "\n";
        }
    };
    if (!episode_seed) {
        AdjacencyOperator a_hat =
            wb.cfg.no_gcn
                ? AdjacencyOperator{Matrix::identity(wb.master.node_count())}
                : normalize_adjacency(build_adjacency(wb.master), wb.cfg.self_loops,
                                      wb.cfg.adjacency_norm_mode());
        TreeParams tp = infer_tree_params(params, wb.master.semantic, a_hat, {}, Phase::eval,
                                          nullptr, wb.cfg.gamma);
        emit(wb.master, tp, "before");
        return out.str();
    }
    FeatureDataset pool = wb.subset(wb.test_labels);
    Rng rng(child_seed(*episode_seed, 0xD0A7));
    Task task = wb.sample_task(pool, rng);
    TreeParams before = infer_tree_params(params, task.g.semantic, task.a_hat, {}, Phase::eval,
                                          nullptr, wb.cfg.gamma);
    AdaptedState st = adapt(params, task.episode.support, task.g, task.a_hat, wb.cfg.inner_test(),
                            wb.cfg.gamma);
    TreeParams after = infer_tree_params(st.params, task.g.semantic, task.a_hat, {}, Phase::eval,
                                         nullptr, wb.cfg.gamma);
    emit(task.g, before, "before");
    emit(task.g, after, "after");
    return out.str();
}

struct AblationRow {
    std::string setting;
    AccuracyReport report;
};

// The five settings of the component ablation: full model, one-hot
// semantics, identity adjacency, mean-prototype tree, and no test-time
// adaptation, evaluated on a shared seed set.
inline std::vector<AblationRow> run_ablate(const RunConfig& base, const std::string& out_dir) {
    std::vector<AblationRow> rows;
    auto eval_with = [&](RunConfig cfg, const std::string& name, bool needs_train,
                         const std::string& subdir) {
        Workbench wb = Workbench::build(cfg);
        DTINetParams params;
        if (needs_train) {
            std::string dir = out_dir + "/" + subdir;
            std::filesystem::create_directories(dir);
            params = run_train(wb, dir).params;
        } else {
            Rng rng(mix64(cfg.seed));
            params = init_params(wb.effective_dims(), rng);
        }
        rows.push_back({name, run_eval(wb, params, false).rows.front().report});
        return params;
    };
    DTINetParams full_params = eval_with(base, "(i) full", true, "ablate_full");
    {
        RunConfig c = base;
        c.no_semantic = true;
        eval_with(c, "(ii) w/o class semantic", true, "ablate_no_semantic");
    }
    {
        RunConfig c = base;
        c.no_gcn = true;
        eval_with(c, "(iii) w/o graph convolution", true, "ablate_no_gcn");
    }
    {
        RunConfig c = base;
        c.no_dtinet = true;
        eval_with(c, "(iv) w/o inference network", false, "");
    }
    {
        RunConfig c = base;
        c.no_adapt = true;
        Workbench wb = Workbench::build(c);
        rows.push_back(
            {"(v) w/o fast adaptation", run_eval(wb, full_params, false).rows.front().report});
    }
    return rows;
}

inline void run_gen_data(const Workbench& wb, const std::string& out_dir) {
    if (!wb.cfg.synthetic) throw ConfigError("gen-data requires synthetic=true");
    save_hierarchy(wb.master, out_dir + "/hierarchy.json");
    save_features(wb.dataset, out_dir + "/features.tsv");
}

}  // namespace metadt

#endif
