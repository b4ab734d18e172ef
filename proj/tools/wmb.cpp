// Command-line entry point: collect, pretrain, train, evaluate, ablate, transfer.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wmb/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace wmb;
using namespace wmb::harness;

namespace {

ReferenceCache cache_for(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    return ReferenceCache(cfg.output_dir / "references.json");
}

void print_scores(const std::vector<ScoreRow>& rows) {
    for (const auto& r : rows)
        std::printf("%-10s %-6s %-8s raw %8.3f  normalized %7.3f +- %.3f (n=%d)\n", r.embodiment.c_str(), r.task.c_str(),
                    r.rung.c_str(), r.raw_mean, r.normalized_mean, r.standard_error, r.n_seeds);
}

std::vector<ScoreRow> rows_of(const RunResult& r, const std::string& label) {
    std::vector<ScoreRow> rows;
    for (const auto& c : r.scores) rows.push_back(aggregate(c.embodiment, c.task, label, {c.result}));
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"World-model agent with task-aware fusion: experiments on toy embodiments"};
    app.require_subcommand(0, 1);
    bool show_schema = false;
    app.add_flag("--config-schema", show_schema, "Print every config key with its default and exit");

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;

    auto* collect = app.add_subcommand("collect", "Collect offline datasets for every configured embodiment");
    bool overwrite = false;
    collect->add_option("-c,--config", config_path, "Config file")->required();
    collect->add_flag("--overwrite", overwrite, "Recollect even if dataset files exist");

    auto* pretrain = app.add_subcommand("pretrain", "Phase 1 only: joint objective, no behavior learning");
    auto* train = app.add_subcommand("train", "Full two-phase schedule (or phase 2 from a pretrained run)");
    std::string init_run;
    for (auto* sub : {pretrain, train}) {
        sub->add_option("-c,--config", config_path, "Config file")->required();
        sub->add_option("-s,--seed", seed, "Override the config seed");
        sub->add_option("-o,--out", out_dir, "Run directory (default <output_dir>/runs/<name>)");
    }
    train->add_option("--init", init_run, "Pretrained run directory; runs phase 2 only from its checkpoint");

    auto* evaluate = app.add_subcommand("evaluate", "Score a trained run and draw its plots");
    std::string run_dir;
    bool allow_mismatch = false;
    evaluate->add_option("-r,--run", run_dir, "Run directory holding checkpoint.bin")->required();
    evaluate->add_option("-o,--out", out_dir, "Output directory (default <run>/eval)");
    evaluate->add_flag("--allow-dataset-mismatch", allow_mismatch, "Evaluate even if datasets changed since training");

    auto* ablate = app.add_subcommand("ablate", "Ablation ladder: base, +mllm, +tamf, +jbo");
    ablate->add_option("-c,--config", config_path, "Config file")->required();
    auto* transfer = app.add_subcommand("transfer", "Train on one embodiment, evaluate zero-shot on others");
    transfer->add_option("-c,--config", config_path, "Config file")->required();

    CLI11_PARSE(app, argc, argv);
    if (show_schema) {
        std::cout << config_schema();
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 2;
    }

    try {
        if (*collect) {
            const ExperimentConfig cfg = load_config(config_path);
            for (const auto& p : collect_datasets(cfg, overwrite))
                std::printf("%s  %s\n", toy::file_hash(p).c_str(), p.string().c_str());
        } else if (*pretrain || *train) {
            const ExperimentConfig cfg = load_config(config_path);
            const std::uint64_t s = seed.value_or(cfg.seed);
            const bool full = train->parsed();
            RunOptions o;
            o.pretrain_steps = cfg.pretrain_steps;
            o.behavior_steps = full ? cfg.behavior_steps : 0;
            o.evaluate = full;
            if (full && !init_run.empty()) {
                const fs::path ckpt = fs::path(init_run) / "checkpoint.bin";
                if (!fs::exists(ckpt)) throw std::runtime_error("no checkpoint at " + ckpt.string());
                o.init = ckpt;
                o.pretrain_steps = 0;
            }
            const std::string name =
                std::string(full ? "" : "pretrain-") + rung_slug(cfg.rung) + "-seed" + std::to_string(s);
            const fs::path dir = out_dir.empty() ? cfg.output_dir / "runs" / name : fs::path(out_dir);
            ReferenceCache refs = cache_for(cfg);
            const RunResult r = train_run(cfg, s, dir, o, refs);
            std::printf("run written to %s\n", dir.string().c_str());
            print_scores(rows_of(r, to_string(cfg.rung)));
        } else if (*evaluate) {
            const LoadedRun run = load_run(run_dir, allow_mismatch);
            ReferenceCache refs = cache_for(run.cfg);
            const fs::path out = out_dir.empty() ? fs::path(run_dir) / "eval" : fs::path(out_dir);
            print_scores(evaluate_run(run, out, refs));
            std::printf("scores and plots written to %s\n", out.string().c_str());
        } else if (*ablate) {
            const ExperimentConfig cfg = load_config(config_path);
            ReferenceCache refs = cache_for(cfg);
            const AblationResult res = ablation_ladder(cfg, refs);
            for (const auto& [rung, table] : res.tables) {
                print_scores(table);
                std::printf("%s mean normalized %.3f\n", to_string(rung).c_str(), res.mean_normalized.at(rung));
            }
        } else if (*transfer) {
            const ExperimentConfig cfg = load_config(config_path);
            ReferenceCache refs = cache_for(cfg);
            const TransferResult res = transfer_protocol(cfg, refs);
            print_scores(res.table);
            std::printf("mean transfer score: full %.3f, no-tamf %.3f over %d cells\n", res.full_transfer_mean,
                        res.no_tamf_transfer_mean, res.transfer_cells);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
