#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "wmb/harness/checkpoint.hpp"
#include "wmb/harness/config.hpp"
#include "wmb/harness/evaluate.hpp"
#include "wmb/harness/experiment.hpp"
#include "wmb/harness/format.hpp"
#include "wmb/harness/plot.hpp"

using namespace wmb;
using namespace wmb::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("wmb_test_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
    const std::string s = slurp(p);
    return {s.begin(), s.end()};
}

ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig cfg = parse_config(
        "embodiments_train = light\n"
        "embodiments_eval = light\n"
        "tasks = stand, walk\n"
        "episodes = 8\n"
        "pretrain_steps = 6\n"
        "behavior_steps = 4\n"
        "log_every = 2\n"
        "eval_episodes = 2\n"
        "batch = 4\n"
        "seq_len = 6\n"
        "horizon = 4\n");
    cfg.output_dir = out;
    return cfg;
}

std::vector<std::string> csv_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(s);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
}

bool same(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

TEST_CASE("fmt_double round-trips") {
    for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456.789, std::nextafter(1.0, 2.0)})
        CHECK(std::stod(fmt_double(v)) == v);
    CHECK(fmt_double(0.5) == "0.5");
}

TEST_CASE("config parsing") {
    SUBCASE("defaults round-trip through the canonical text") {
        const ExperimentConfig a;
        const ExperimentConfig b = parse_config(a.to_text());
        CHECK(b.to_text() == a.to_text());
        CHECK(b.hash() == a.hash());
    }
    SUBCASE("edited values round-trip") {
        const ExperimentConfig a = parse_config(
            "# comment\nseed = 7\ntasks = stand, run\nembodiments_eval = light, heavy\nlambda_jbo = 0.25\n"
            "rung = +tamf\nfusion = additive\nev_mode = frozen\n");
        CHECK(a.seed == 7);
        CHECK(a.tasks.size() == 2);
        CHECK(a.agent.weights.lambda_jbo == 0.25);
        CHECK(a.rung == Rung::Tamf);
        CHECK(a.fusion == FusionChoice::Additive);
        CHECK(parse_config(a.to_text()).to_text() == a.to_text());
        CHECK(a.hash() != ExperimentConfig{}.hash());
    }
    SUBCASE("unknown keys are fatal and name the key") {
        try {
            parse_config("seed = 1\nlamda_wm = 1\n");
            FAIL("expected an exception");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("lamda_wm") != std::string::npos);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SUBCASE("malformed input") {
        CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("seed = x\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("seed\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("tasks = fly\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("rung = +everything\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("lambda_wm = -1\n"), std::invalid_argument);
        CHECK_THROWS_AS(parse_config("embodiments_train = light, heavy\nepisodes = 10\n"), std::invalid_argument);
        CHECK_THROWS_AS(load_config("/nonexistent/wmb.cfg"), std::runtime_error);
    }
    SUBCASE("schema lists every canonical key") {
        const std::string schema = config_schema();
        std::istringstream in(ExperimentConfig{}.to_text());
        for (std::string line; std::getline(in, line);) {
            const std::string key = line.substr(0, line.find(' '));
            CHECK_MESSAGE(schema.find(key) != std::string::npos, key);
        }
    }
}

TEST_CASE("rung semantics") {
    ExperimentConfig cfg;
    cfg.rung = Rung::Base;
    AgentConfig a = cfg.effective_agent();
    CHECK_FALSE(a.use_tamf);
    CHECK(a.weights.lambda_mllm == 0.0);
    CHECK(a.weights.lambda_jbo == 0.0);
    CHECK(a.behavior.alignment_weight == 0.0);

    cfg.rung = Rung::Mllm;
    a = cfg.effective_agent();
    CHECK_FALSE(a.use_tamf);
    CHECK(a.weights.lambda_mllm > 0.0);
    CHECK(a.weights.lambda_jbo == 0.0);

    cfg.rung = Rung::Tamf;
    a = cfg.effective_agent();
    CHECK(a.use_tamf);
    CHECK(a.weights.lambda_jbo == 0.0);

    cfg.rung = Rung::Jbo;
    a = cfg.effective_agent();
    CHECK(a.use_tamf);
    CHECK(a.weights.lambda_jbo == cfg.agent.weights.lambda_jbo);
    CHECK(a.behavior.alignment_weight == cfg.agent.weights.lambda_jbo);

    cfg.fusion = FusionChoice::Additive;
    CHECK_FALSE(cfg.effective_agent().use_tamf);

    for (Rung r : all_rungs()) CHECK(rung_from_string(to_string(r)) == r);
    CHECK(rung_from_string("jbo") == Rung::Jbo);
}

TEST_CASE("checkpoints") {
    const fs::path dir = scratch("ckpt");
    AgentConfig cfg;
    const Agent a = Agent::create(cfg, 1);
    const auto params = a.all_parameters();
    save_checkpoint(params, dir / "a.bin");

    SUBCASE("manifest matches the live parameter list") {
        const auto manifest = read_manifest(dir / "a.bin");
        REQUIRE(manifest.size() == params.size());
        std::uint64_t offset = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            CHECK(manifest[i].name == params[i].name);
            CHECK(manifest[i].rows == params[i].tensor.rows());
            CHECK(manifest[i].cols == params[i].tensor.cols());
            CHECK(manifest[i].frozen == params[i].frozen);
            CHECK(manifest[i].offset == offset);
            offset += static_cast<std::uint64_t>(params[i].tensor.rows() * params[i].tensor.cols()) * 8;
        }
    }
    SUBCASE("save, load, save is byte-identical") {
        Agent b = Agent::create(cfg, 2);
        auto target = b.all_parameters();
        load_checkpoint(dir / "a.bin", target);
        for (std::size_t i = 0; i < params.size(); ++i) CHECK(same(target[i].tensor.value(), params[i].tensor.value()));
        save_checkpoint(target, dir / "b.bin");
        CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
    }
    SUBCASE("truncation is reported with an offset") {
        auto bytes = bytes_of(dir / "a.bin");
        bytes.resize(bytes.size() - 5);
        Agent b = Agent::create(cfg, 2);
        auto target = b.all_parameters();
        try {
            decode_checkpoint(bytes, target);
            FAIL("expected an exception");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("offset") != std::string::npos);
        }
        bytes.resize(20);
        CHECK_THROWS_AS(decode_checkpoint(bytes, target), std::runtime_error);
    }
    SUBCASE("tampered payload length is rejected") {
        auto bytes = bytes_of(dir / "a.bin");
        bytes.push_back(0);
        Agent b = Agent::create(cfg, 2);
        auto target = b.all_parameters();
        CHECK_THROWS_AS(decode_checkpoint(bytes, target), std::runtime_error);
    }
    SUBCASE("bad magic is rejected") {
        auto bytes = bytes_of(dir / "a.bin");
        bytes[0] = 'X';
        Agent b = Agent::create(cfg, 2);
        auto target = b.all_parameters();
        CHECK_THROWS_AS(decode_checkpoint(bytes, target), std::runtime_error);
    }
    SUBCASE("shape mismatch names the parameter and writes nothing") {
        AgentConfig other = cfg;
        other.dims.d_z += 1;
        other.dims.d_m += 1;
        Agent b = Agent::create(other, 2);
        auto target = b.all_parameters();
        const Matrix before = target[0].tensor.value();
        try {
            load_checkpoint(dir / "a.bin", target);
            FAIL("expected an exception");
        } catch (const std::runtime_error& e) {
            const std::string msg = e.what();
            bool named = false;
            for (const auto& p : target) named = named || msg.find(p.name) != std::string::npos;
            CHECK(named);
        }
        CHECK(same(target[0].tensor.value(), before));
    }
    SUBCASE("parameter sets with different structure are rejected") {
        AgentConfig other = cfg;
        other.use_tamf = !cfg.use_tamf;
        Agent b = Agent::create(other, 2);
        auto target = b.all_parameters();
        CHECK_THROWS_AS(load_checkpoint(dir / "a.bin", target), std::runtime_error);
    }
}

TEST_CASE("normalization") {
    CHECK(normalize(500.0, {100.0, 900.0}) == doctest::Approx(0.5));
    CHECK(normalize(100.0, {100.0, 900.0}) == 0.0);
    CHECK(normalize(900.0, {100.0, 900.0}) == 1.0);
    CHECK_THROWS_AS(normalize(1.0, {5.0, 5.0}), std::invalid_argument);
    CHECK_THROWS_AS(normalize(1.0, {5.0, 4.0}), std::invalid_argument);

    const MeanSe m = mean_se({1.0, 2.0, 3.0, 4.0});
    CHECK(m.mean == doctest::Approx(2.5));
    CHECK(m.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(mean_se({3.0}).se == 0.0);
}

TEST_CASE("reference policies normalize to 0 and 1 on fresh episodes") {
    const auto& e = toy::embodiment_by_name("light");
    const toy::Task task = toy::make_task(toy::TaskId::Walk, "walk");
    EvalOptions opts;
    opts.n_episodes = 20;
    const References refs = compute_references(e, task, 11, opts);
    REQUIRE(refs.expert > refs.random);
    double rand_sum = 0.0, exp_sum = 0.0;
    const Rng base(99);
    for (int i = 0; i < opts.n_episodes; ++i) {
        Rng r1 = base.derive(2 * static_cast<std::uint64_t>(i));
        Rng r2 = base.derive(2 * static_cast<std::uint64_t>(i) + 1);
        for (double r : toy::run_episode(e, task, toy::Collector::Random, r1, opts.length, opts.noise_std).true_rewards)
            rand_sum += r;
        for (double r :
             toy::run_episode(e, task, toy::Collector::Proportional, r2, opts.length, opts.noise_std).true_rewards)
            exp_sum += r;
    }
    CHECK(std::abs(normalize(rand_sum / opts.n_episodes, refs)) < 0.1);
    CHECK(std::abs(normalize(exp_sum / opts.n_episodes, refs) - 1.0) < 0.1);
}

TEST_CASE("reference cache persists entries") {
    const fs::path dir = scratch("refs");
    const auto& e = toy::embodiment_by_name("light");
    const toy::Task task = toy::make_task(toy::TaskId::Run, "run");
    EvalOptions opts;
    opts.n_episodes = 3;
    References a;
    {
        ReferenceCache cache(dir / "refs.json");
        a = cache.get(e, task, 5, opts);
    }
    REQUIRE(fs::exists(dir / "refs.json"));
    ReferenceCache again(dir / "refs.json");
    const References b = again.get(e, task, 5, opts);
    CHECK(a.random == b.random);
    CHECK(a.expert == b.expert);
    const References c = compute_references(e, task, 5, opts);
    CHECK(c.random == a.random);
}

TEST_CASE("score table round-trip") {
    const fs::path dir = scratch("scores");
    const std::vector<ScoreRow> rows{{"light", "walk", "+jbo", 51.25, 0.3, 0.01, 5},
                                     {"heavy", "run", "base", -1.0, -0.1, 0.0, 1}};
    write_score_table(rows, dir / "s.csv");
    const auto back = read_score_table(dir / "s.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].embodiment == "light");
    CHECK(back[0].raw_mean == 51.25);
    CHECK(back[1].rung == "base");
    CHECK(back[1].n_seeds == 1);
    CHECK(csv_lines(dir / "s.csv")[0] == "embodiment,task,rung,raw_mean,normalized_mean,standard_error,n_seeds");

    std::vector<EvalResult> per_seed(3);
    for (int i = 0; i < 3; ++i) {
        per_seed[static_cast<std::size_t>(i)].raw = 10.0 * (i + 1);
        per_seed[static_cast<std::size_t>(i)].normalized = 0.1 * (i + 1);
    }
    const ScoreRow r = aggregate("light", "walk", "+jbo", per_seed);
    CHECK(r.raw_mean == doctest::Approx(20.0));
    CHECK(r.normalized_mean == doctest::Approx(0.2));
    CHECK(r.standard_error == doctest::Approx(0.1 / std::sqrt(3.0)));
    CHECK(r.n_seeds == 3);
}

TEST_CASE("svg charts") {
    Chart c{"t", "x", "y", {{"a", {0, 1, 2}, {1, 2, 3}, false}, {"b", {0, 1}, {0, 0}, true}}};
    const std::string svg = render_svg(c);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    c.series[0].y.pop_back();
    CHECK_THROWS_AS(render_svg(c), std::invalid_argument);
}

TEST_CASE("tiny run end to end") {
    const fs::path root = scratch("run");
    ExperimentConfig cfg = tiny_config(root);
    std::map<std::string, std::string> hashes;
    CHECK_THROWS_AS(load_training_data(cfg, hashes), std::runtime_error);
    const auto written = collect_datasets(cfg);
    CHECK(written.size() == 1);

    ReferenceCache refs(root / "references.json");
    const RunResult run = train_run(cfg, 0, root / "a", {cfg.pretrain_steps, cfg.behavior_steps}, refs);
    for (const char* f : {"metrics.csv", "checkpoint.bin", "manifest.json", "config.txt", "scores.csv"})
        CHECK_MESSAGE(fs::exists(root / "a" / f), f);
    CHECK(run.scores.size() == 2);

    SUBCASE("metrics have gate and score columns and a row per log step") {
        const auto lines = csv_lines(root / "a" / "metrics.csv");
        const auto header = split(lines.at(0));
        const int layers = cfg.agent.dims.tamf_layers;
        for (const char* task : {"stand", "walk"})
            for (int k = 0; k < layers; ++k) {
                const std::string col = std::string("gate_") + task + "_l" + std::to_string(k);
                CHECK_MESSAGE(std::find(header.begin(), header.end(), col) != header.end(), col);
            }
        CHECK(std::find(header.begin(), header.end(), "score_light/walk") != header.end());
        // Phase 1 logs at 2, 4, 6; phase 2 at 2, 4; plus the final evaluation row.
        CHECK(lines.size() == 1 + 3 + 2 + 1);
        for (std::size_t i = 1; i < lines.size(); ++i) CHECK(split(lines[i]).size() == header.size());
        // Every gate cell is filled on every training row.
        const auto gate_col = std::find(header.begin(), header.end(), "gate_walk_l0") - header.begin();
        for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
            const auto cells = split(lines[i]);
            const double g = std::stod(cells[static_cast<std::size_t>(gate_col)]);
            CHECK(g > 0.0);
            CHECK(g < 1.0);
        }
    }
    SUBCASE("the same seed reproduces metrics and checkpoint bytes") {
        train_run(cfg, 0, root / "b", {cfg.pretrain_steps, cfg.behavior_steps}, refs);
        CHECK(slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv"));
        CHECK(slurp(root / "a" / "checkpoint.bin") == slurp(root / "b" / "checkpoint.bin"));
        train_run(cfg, 1, root / "c", {cfg.pretrain_steps, cfg.behavior_steps}, refs);
        CHECK(slurp(root / "a" / "checkpoint.bin") != slurp(root / "c" / "checkpoint.bin"));
    }
    SUBCASE("manifest records the run identity") {
        const RunManifest m = RunManifest::read(root / "a" / "manifest.json");
        CHECK(m.config_hash == cfg.hash());
        CHECK(m.code_version == code_version());
        CHECK(m.rung == "+jbo");
        CHECK(m.parameter_count == run.agent.all_parameters().size());
        CHECK(m.dataset_hashes.count("light") == 1);
        CHECK_FALSE(m.expert.empty());
    }
    SUBCASE("reload and evaluate") {
        const LoadedRun loaded = load_run(root / "a");
        const auto p0 = run.agent.all_parameters();
        const auto p1 = loaded.agent.all_parameters();
        REQUIRE(p0.size() == p1.size());
        for (std::size_t i = 0; i < p0.size(); ++i) CHECK(same(p0[i].tensor.value(), p1[i].tensor.value()));
        const auto rows = evaluate_run(loaded, root / "eval", refs);
        CHECK(rows.size() == 2);
        for (const char* f : {"scores.csv", "reward_curve.svg", "gates.svg", "trace_light_walk.svg"})
            CHECK_MESSAGE(fs::exists(root / "eval" / f), f);
        // Scores of a reloaded agent equal those computed right after training.
        for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].raw_mean == run.scores[i].result.raw);
    }
    SUBCASE("loading refuses a missing checkpoint or changed dataset") {
        fs::remove(root / "a" / "checkpoint.bin");
        CHECK_THROWS_AS(load_run(root / "a"), std::runtime_error);
        CHECK_THROWS_AS(load_run(root / "nope"), std::runtime_error);
    }
    SUBCASE("dataset hash mismatch") {
        ExperimentConfig other = cfg;
        other.data_seed += 1;
        toy::write_dataset(
            toy::collect_offline(toy::embodiment_by_name("light"),
                                 {toy::make_task(toy::TaskId::Stand, "x"), toy::make_task(toy::TaskId::Walk, "y")},
                                 8, 77),
            dataset_path(cfg, "light"));
        CHECK_THROWS_AS(load_run(root / "a"), std::runtime_error);
        CHECK_NOTHROW(load_run(root / "a", true));
    }
}

TEST_CASE("rung parameter sets") {
    const fs::path root = scratch("rungs");
    ExperimentConfig cfg = tiny_config(root);
    cfg.tasks = {toy::TaskId::Walk};
    collect_datasets(cfg);
    ReferenceCache refs;

    cfg.rung = Rung::Base;
    train_run(cfg, 0, root / "base", {2, 2, "", std::nullopt, false}, refs);
    for (const auto& e : read_manifest(root / "base" / "checkpoint.bin"))
        CHECK_MESSAGE(e.name.rfind("tamf", 0) != 0, e.name);
    CHECK_FALSE(fs::exists(root / "base" / "scores.csv"));

    cfg.rung = Rung::Mllm;
    train_run(cfg, 0, root / "mllm", {2, 2, "", std::nullopt, false}, refs);
    const RunManifest m = RunManifest::read(root / "mllm" / "manifest.json");
    CHECK(m.weights.lambda_jbo == 0.0);
    CHECK(m.weights.lambda_mllm > 0.0);
    CHECK_FALSE(m.use_tamf);

    cfg.rung = Rung::Jbo;
    train_run(cfg, 0, root / "jbo", {2, 2, "", std::nullopt, false}, refs);
    bool has_tamf = false;
    for (const auto& e : read_manifest(root / "jbo" / "checkpoint.bin")) has_tamf = has_tamf || e.name.rfind("tamf", 0) == 0;
    CHECK(has_tamf);
}

TEST_CASE("phase 2 from a pretrained checkpoint") {
    const fs::path root = scratch("init");
    ExperimentConfig cfg = tiny_config(root);
    collect_datasets(cfg);
    ReferenceCache refs;
    const RunResult pre = train_run(cfg, 0, root / "pre", {4, 0, "", std::nullopt, false}, refs);
    // Zero further steps reproduce the checkpoint exactly.
    train_run(cfg, 0, root / "same", {0, 0, "", root / "pre" / "checkpoint.bin", false}, refs);
    CHECK(slurp(root / "pre" / "checkpoint.bin") == slurp(root / "same" / "checkpoint.bin"));

    const RunResult post = train_run(cfg, 0, root / "post", {0, 3, "", root / "pre" / "checkpoint.bin", false}, refs);
    bool moved = false;
    const auto pa = pre.agent.behavior.all();
    const auto pb = post.agent.behavior.all();
    for (std::size_t i = 0; i < pa.size(); ++i) moved = moved || !same(pa[i].tensor.value(), pb[i].tensor.value());
    CHECK(moved);
    CHECK_THROWS_AS(train_run(cfg, 0, root / "bad", {0, 1, "", root / "missing.bin", false}, refs), std::runtime_error);
}

TEST_CASE("ablation ladder and transfer protocol shapes") {
    SUBCASE("ablation emits one table per rung") {
        const fs::path root = scratch("ablate");
        ExperimentConfig cfg = tiny_config(root);
        cfg.n_seeds = 1;
        cfg.pretrain_steps = 2;
        cfg.behavior_steps = 2;
        collect_datasets(cfg);
        ReferenceCache refs;
        const AblationResult r = ablation_ladder(cfg, refs);
        CHECK(r.tables.size() == 4);
        CHECK(r.mean_normalized.size() == 4);
        for (Rung rung : all_rungs()) {
            CHECK(fs::exists(root / "ablate" / ("scores_" + rung_slug(rung) + ".csv")));
            CHECK(r.tables.at(rung).size() == cfg.tasks.size());
        }
    }
    SUBCASE("transfer covers 2 targets x 3 tasks per variant") {
        const fs::path root = scratch("transfer");
        ExperimentConfig cfg = tiny_config(root);
        cfg.embodiments_train = {"heavy"};
        cfg.embodiments_eval = {"heavy", "segmented", "springy"};
        cfg.tasks = {toy::TaskId::Stand, toy::TaskId::Walk, toy::TaskId::Run};
        cfg.n_seeds = 1;
        cfg.pretrain_steps = 2;
        cfg.behavior_steps = 2;
        collect_datasets(cfg);
        ReferenceCache refs;
        const TransferResult r = transfer_protocol(cfg, refs);
        CHECK(r.transfer_cells == 6);
        std::set<std::string> variants;
        int target_rows = 0;
        for (const auto& row : r.table) {
            variants.insert(row.rung);
            if (row.embodiment != "heavy") ++target_rows;
        }
        CHECK(variants == std::set<std::string>{"full", "no-tamf"});
        CHECK(target_rows == 12);
        CHECK(r.table.size() == 12 + 6);
        CHECK(fs::exists(root / "transfer" / "transfer.csv"));
        CHECK(std::isfinite(r.full_transfer_mean));
        CHECK(std::isfinite(r.no_tamf_transfer_mean));
    }
}
