#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metadt/runtime.hpp"

namespace {

using namespace metadt;

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::vector<std::string> overrides;  // key=value
};

RunConfig resolve_config(const GlobalArgs& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    for (const auto& kv : g.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    cfg.validate();
    return cfg;
}

void add_globals(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--config", g.config_path, "run configuration (flat TOML)");
    cmd->add_option("--seed", g.seed, "master seed (overrides config)");
    cmd->add_option("--out", g.out_dir, "output directory");
    cmd->add_option("--set", g.overrides, "override a config key, e.g. --set m_test=50")
        ->type_name("KEY=VALUE");
}

std::string config_help_footer() {
    std::string s = "Config keys (key : default [module] description):\n";
    for (const auto& k : config_key_table()) {
        s += "  " + k.key + " : " + (k.def.empty() ? "\"\"" : k.def) + "  [" + k.module + "] " +
             k.desc + "\n";
    }
    return s;
}

void print_report(const std::string& name, const AccuracyReport& rep) {
    std::printf("%-28s %6.2f%% +/- %.2f%%  (%zu episodes)\n", name.c_str(), 100.0 * rep.mean,
                100.0 * rep.ci95, rep.per_episode.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MetaDT: decision-tree meta-learning over class hierarchies"};
    app.require_subcommand(1);
    app.footer(config_help_footer());

    GlobalArgs train_g, eval_g, explain_g, dump_g, ablate_g, gen_g;
    std::string eval_ckpt, explain_ckpt, dump_ckpt, fuse_arg;
    std::vector<std::string> explain_ids;
    std::optional<std::uint64_t> dump_episode_seed;

    auto* cmd_train = app.add_subcommand("train", "meta-train and write a checkpoint");
    add_globals(cmd_train, train_g);

    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint over test episodes");
    add_globals(cmd_eval, eval_g);
    cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    cmd_eval->add_option("--fuse", fuse_arg,
                         "also report cosine and fused accuracies; accepts lambda=<v>")
        ->expected(0, 1)
        ->default_str("");

    auto* cmd_explain = app.add_subcommand("explain", "emit decision traces for samples");
    add_globals(cmd_explain, explain_g);
    cmd_explain->add_option("--checkpoint", explain_ckpt, "checkpoint file")->required();
    cmd_explain->add_option("--id", explain_ids, "sample id (repeatable)")->required();

    auto* cmd_dump = app.add_subcommand("dump-weights", "emit per-node tree weight table");
    add_globals(cmd_dump, dump_g);
    cmd_dump->add_option("--checkpoint", dump_ckpt, "checkpoint file")->required();
    cmd_dump->add_option("--episode-seed", dump_episode_seed,
                         "adapt on a seeded episode and dump before/after rows");

    auto* cmd_ablate = app.add_subcommand("ablate", "run the five-component ablation table");
    add_globals(cmd_ablate, ablate_g);

    auto* cmd_gen = app.add_subcommand("gen-data", "write synthetic hierarchy + feature files");
    add_globals(cmd_gen, gen_g);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_train->parsed()) {
            RunConfig cfg = resolve_config(train_g);
            std::filesystem::create_directories(train_g.out_dir);
            Workbench wb = Workbench::build(cfg);
            TrainOutput out = run_train(wb, train_g.out_dir);
            std::printf("checkpoint: %s\nlog: %s\n", out.checkpoint_path.c_str(),
                        out.log_path.c_str());
        } else if (cmd_eval->parsed()) {
            bool with_fusion = cmd_eval->count("--fuse") > 0;
            if (fuse_arg.rfind("lambda=", 0) == 0)
                eval_g.overrides.push_back(fuse_arg);
            else if (!fuse_arg.empty())
                throw ConfigError("--fuse accepts only lambda=<v>, got '" + fuse_arg + "'");
            RunConfig cfg = resolve_config(eval_g);
            Workbench wb = Workbench::build(cfg);
            DTINetParams params = load_checked_params(cfg, eval_ckpt);
            EvalOutput out = run_eval(wb, params, with_fusion);
            for (const auto& row : out.rows) print_report(row.name, row.report);
        } else if (cmd_explain->parsed()) {
            RunConfig cfg = resolve_config(explain_g);
            Workbench wb = Workbench::build(cfg);
            DTINetParams params = load_checked_params(cfg, explain_ckpt);
            for (const auto& rec : run_explain(wb, params, explain_ids))
                std::cout << rec.dump() << "\n";
        } else if (cmd_dump->parsed()) {
            RunConfig cfg = resolve_config(dump_g);
            Workbench wb = Workbench::build(cfg);
            DTINetParams params = load_checked_params(cfg, dump_ckpt);
            std::cout << run_dump_weights(wb, params, dump_episode_seed);
        } else if (cmd_ablate->parsed()) {
            RunConfig cfg = resolve_config(ablate_g);
            std::filesystem::create_directories(ablate_g.out_dir);
            for (const auto& row : run_ablate(cfg, ablate_g.out_dir))
                print_report(row.setting, row.report);
        } else if (cmd_gen->parsed()) {
            RunConfig cfg = resolve_config(gen_g);
            std::filesystem::create_directories(gen_g.out_dir);
            Workbench wb = Workbench::build(cfg);
            run_gen_data(wb, gen_g.out_dir);
            std::printf("wrote %s/hierarchy.json and %s/features.tsv\n", gen_g.out_dir.c_str(),
                        gen_g.out_dir.c_str());
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "error: divergence: " << e.what() << "\n";
        return 4;
    } catch (const ParseError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const CapacityError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const IndexError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
