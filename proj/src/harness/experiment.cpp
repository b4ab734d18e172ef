#include "wmb/harness/experiment.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"
#include "wmb/harness/checkpoint.hpp"
#include "wmb/harness/format.hpp"
#include "wmb/harness/plot.hpp"
#include "wmb/io.hpp"

#ifndef WMB_CODE_VERSION
#define WMB_CODE_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace wmb::harness {

std::string code_version() { return WMB_CODE_VERSION; }

std::string expert_definition() {
    return "proportional speed controller: a0 = clamp(damping * mass * target / (action_scale * dt) + "
           "2 * (target - velocity), -1, 1), posture actions 0";
}

PromptRegistry load_prompts(const ExperimentConfig& cfg) {
    return cfg.prompts.empty() ? PromptRegistry::builtin() : PromptRegistry::load(cfg.prompts);
}

fs::path dataset_path(const ExperimentConfig& cfg, const std::string& embodiment) {
    return cfg.output_dir / "data" / (embodiment + ".wmbd");
}

namespace {

std::vector<toy::Task> task_list(const ExperimentConfig& cfg, const PromptRegistry& prompts,
                                 const std::string& embodiment) {
    std::vector<toy::Task> out;
    for (auto id : cfg.tasks) out.push_back(toy::make_task(id, prompts.prompt(embodiment, toy::to_string(id))));
    return out;
}

std::uint64_t data_seed_for(const ExperimentConfig& cfg, const std::string& embodiment) {
    const auto h = io::fnv1a64(reinterpret_cast<const std::uint8_t*>(embodiment.data()), embodiment.size());
    return mix_seed(cfg.data_seed ^ h);
}

std::vector<std::string> unique_embodiments(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (const auto* list : {&cfg.embodiments_train, &cfg.embodiments_eval})
        for (const auto& e : *list)
            if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    return out;
}

std::vector<std::string> task_names(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    for (auto id : cfg.tasks) out.push_back(toy::to_string(id));
    return out;
}

std::vector<std::string> cell_names(const ExperimentConfig& cfg, const std::vector<std::string>& embodiments) {
    std::vector<std::string> out;
    for (const auto& e : embodiments)
        for (auto id : cfg.tasks) out.push_back(e + "/" + toy::to_string(id));
    return out;
}

EvalOptions eval_options(const ExperimentConfig& cfg) {
    EvalOptions o;
    o.n_episodes = cfg.eval_episodes;
    o.noise_std = cfg.eval_noise_std;
    return o;
}

}  // namespace

std::vector<fs::path> collect_datasets(const ExperimentConfig& cfg, bool overwrite) {
    const PromptRegistry prompts = load_prompts(cfg);
    fs::create_directories(cfg.output_dir / "data");
    std::vector<fs::path> out;
    for (const auto& name : unique_embodiments(cfg)) {
        const fs::path path = dataset_path(cfg, name);
        out.push_back(path);
        if (fs::exists(path) && !overwrite) continue;
        const toy::Embodiment& e = toy::embodiment_by_name(name);
        toy::write_dataset(toy::collect_offline(e, task_list(cfg, prompts, name), cfg.episodes, data_seed_for(cfg, name)),
                           path);
    }
    return out;
}

toy::Dataset load_training_data(const ExperimentConfig& cfg, std::map<std::string, std::string>& hashes) {
    toy::Dataset merged;
    for (const auto& name : cfg.embodiments_train) {
        const fs::path path = dataset_path(cfg, name);
        if (!fs::exists(path))
            throw std::runtime_error("dataset " + path.string() + " not found; run the collect command with this config first");
        hashes[name] = toy::file_hash(path);
        toy::Dataset ds = toy::read_dataset(path);
        if (ds.embodiment != name)
            throw std::runtime_error("dataset " + path.string() + " holds embodiment '" + ds.embodiment + "'");
        if (merged.episodes.empty()) {
            merged = std::move(ds);
        } else {
            for (auto& ep : ds.episodes) merged.episodes.push_back(std::move(ep));
            merged.embodiment += "+" + name;
        }
    }
    return merged;
}

void RunManifest::write(const fs::path& path) const {
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash;
    j["code_version"] = code_version;
    j["rung"] = rung;
    j["variant"] = variant;
    j["seed"] = seed;
    j["use_tamf"] = use_tamf;
    j["lambda_wm"] = weights.lambda_wm;
    j["lambda_mllm"] = weights.lambda_mllm;
    j["lambda_jbo"] = weights.lambda_jbo;
    j["gamma"] = weights.gamma;
    j["alignment_weight"] = alignment_weight;
    j["pretrain_steps"] = pretrain_steps;
    j["behavior_steps"] = behavior_steps;
    j["dataset_hashes"] = dataset_hashes;
    j["expert"] = expert;
    j["parameter_count"] = parameter_count;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

RunManifest RunManifest::read(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("run manifest " + path.string() + " not found");
    RunManifest m;
    try {
        nlohmann::json j;
        in >> j;
        m.config_hash = j.at("config_hash").get<std::string>();
        m.code_version = j.at("code_version").get<std::string>();
        m.rung = j.at("rung").get<std::string>();
        m.variant = j.at("variant").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.use_tamf = j.at("use_tamf").get<bool>();
        m.weights.lambda_wm = j.at("lambda_wm").get<double>();
        m.weights.lambda_mllm = j.at("lambda_mllm").get<double>();
        m.weights.lambda_jbo = j.at("lambda_jbo").get<double>();
        m.weights.gamma = j.at("gamma").get<double>();
        m.alignment_weight = j.at("alignment_weight").get<double>();
        m.pretrain_steps = j.at("pretrain_steps").get<int>();
        m.behavior_steps = j.at("behavior_steps").get<int>();
        m.dataset_hashes = j.at("dataset_hashes").get<std::map<std::string, std::string>>();
        m.expert = j.at("expert").get<std::string>();
        m.parameter_count = j.at("parameter_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("run manifest " + path.string() + ": " + e.what());
    }
    return m;
}

MetricsWriter::MetricsWriter(const fs::path& path, const std::vector<std::string>& tasks, int gate_layers,
                             const std::vector<std::string>& eval_cells)
    : out_(path), n_tasks_(tasks.size()), layers_(gate_layers), cells_(eval_cells) {
    if (!out_) throw std::runtime_error("cannot write metrics " + path.string());
    out_ << "step,phase,total,wm,wm_dynamics,wm_reconstruction,mllm,jbo,reward_fit,grad_norm,grad_norm_wm,"
            "grad_norm_mllm,grad_norm_jbo,imagined_reward,imagined_return,actor_loss,critic_loss,alignment_kl";
    for (const auto& t : tasks)
        for (int l = 0; l < layers_; ++l) out_ << ",gate_" << t << "_l" << l;
    for (const auto& c : cells_) out_ << ",score_" << c;
    out_ << '\n';
}

void MetricsWriter::row(const StepMetrics& m, const std::vector<std::vector<double>>& gates,
                        const std::map<std::string, double>& scores) {
    const bool log = scores.empty();
    auto cell = [&](double v) { out_ << ',' << (log ? fmt_double(v) : std::string()); };
    out_ << m.step << ',' << m.phase;
    for (double v : {m.total, m.wm, m.wm_dynamics, m.wm_reconstruction, m.mllm, m.jbo, m.reward_fit, m.grad_norm,
                     m.grad_norm_wm, m.grad_norm_mllm, m.grad_norm_jbo})
        cell(v);
    for (double v : {m.behavior.mean_reward, m.behavior.mean_return, m.behavior.actor_loss, m.behavior.critic_loss,
                     m.behavior.alignment_kl}) {
        if (log && m.has_behavior)
            out_ << ',' << fmt_double(v);
        else
            out_ << ',';
    }
    if (layers_ > 0) {
        if (gates.size() != n_tasks_) throw std::invalid_argument("metrics: gate table has the wrong task count");
        for (const auto& per_task : gates) {
            if (static_cast<int>(per_task.size()) != layers_)
                throw std::invalid_argument("metrics: gate table has the wrong layer count");
            for (double g : per_task) out_ << ',' << fmt_double(g);
        }
    }
    for (const auto& c : cells_) {
        auto it = scores.find(c);
        out_ << ',' << (it == scores.end() ? std::string() : fmt_double(it->second));
    }
    out_ << '\n';
    out_.flush();
}

std::vector<std::vector<double>> gate_table(const Agent& agent, const std::vector<std::string>& prompts) {
    if (!agent.fusion.task_aware()) return {};
    NoGradGuard no_grad;
    const FusionGates g = agent.fusion.gates(agent.task(Tensor(prompt_bags(prompts, agent.cfg.dims.hash_buckets))));
    std::vector<std::vector<double>> out(prompts.size());
    for (std::size_t t = 0; t < prompts.size(); ++t)
        for (const auto& layer : g) out[t].push_back(layer.value()(static_cast<Eigen::Index>(t), 0));
    return out;
}

std::vector<CellScore> evaluate_cells(const ExperimentConfig& cfg, const Agent& agent,
                                      const std::vector<std::string>& embodiments, ReferenceCache& refs) {
    const PromptRegistry prompts = load_prompts(cfg);
    const EvalOptions opts = eval_options(cfg);
    std::vector<CellScore> out;
    for (const auto& name : embodiments) {
        const toy::Embodiment& e = toy::embodiment_by_name(name);
        for (const auto& task : task_list(cfg, prompts, name)) {
            const References r = refs.get(e, task, cfg.reference_seed, opts);
            const std::uint64_t seed = mix_seed(cfg.eval_seed + 131 * out.size());
            out.push_back({name, toy::to_string(task.id), evaluate_agent(agent, e, task, r, seed, opts)});
        }
    }
    return out;
}

namespace {

std::vector<ScoreRow> single_seed_rows(const std::vector<CellScore>& scores, const std::string& label) {
    std::vector<ScoreRow> rows;
    for (const auto& c : scores) rows.push_back(aggregate(c.embodiment, c.task, label, {c.result}));
    return rows;
}

}  // namespace

RunResult train_run(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir, const RunOptions& opts,
                    ReferenceCache& refs) {
    cfg.validate();
    fs::create_directories(dir);
    std::map<std::string, std::string> hashes;
    const toy::Dataset data = load_training_data(cfg, hashes);
    const PromptRegistry prompts = load_prompts(cfg);
    const AgentConfig acfg = cfg.effective_agent();
    RunResult res{Agent::create(acfg, seed), {}, dir};
    Agent& agent = res.agent;
    if (opts.init) {
        auto params = agent.all_parameters();
        load_checkpoint(*opts.init, params);
    }
    const std::string label = opts.variant.empty() ? to_string(cfg.rung) : opts.variant;

    std::vector<std::string> task_prompts;
    for (const auto& t : task_list(cfg, prompts, cfg.embodiments_train.front())) task_prompts.push_back(t.prompt);
    const auto cells = cell_names(cfg, cfg.embodiments_eval);
    MetricsWriter metrics(dir / "metrics.csv", task_names(cfg), agent.fusion.task_aware() ? acfg.dims.tamf_layers : 0,
                          opts.evaluate ? cells : std::vector<std::string>{});
    Trainer trainer(agent, data, prompts, seed);
    int last_phase = opts.behavior_steps > 0 ? 2 : 1;
    trainer.run(opts.pretrain_steps, opts.behavior_steps, cfg.log_every, [&](const StepMetrics& m) {
        if (m.step % cfg.log_every == 0) metrics.row(m, gate_table(agent, task_prompts));
    });

    if (opts.evaluate) {
        res.scores = evaluate_cells(cfg, agent, cfg.embodiments_eval, refs);
        std::map<std::string, double> scores;
        for (const auto& c : res.scores) scores[c.embodiment + "/" + c.task] = c.result.normalized;
        StepMetrics final_row;
        final_row.step = trainer.steps_done();
        final_row.phase = last_phase;
        metrics.row(final_row, gate_table(agent, task_prompts), scores);
        write_score_table(single_seed_rows(res.scores, label), dir / "scores.csv");
    }

    save_checkpoint(agent.all_parameters(), dir / "checkpoint.bin");
    {
        std::ofstream out(dir / "config.txt");
        if (!out) throw std::runtime_error("cannot write " + (dir / "config.txt").string());
        out << cfg.to_text();
    }
    RunManifest man;
    man.config_hash = cfg.hash();
    man.code_version = code_version();
    man.rung = to_string(cfg.rung);
    man.variant = label;
    man.seed = seed;
    man.use_tamf = acfg.use_tamf;
    man.weights = acfg.weights;
    man.alignment_weight = acfg.behavior.alignment_weight;
    man.pretrain_steps = opts.pretrain_steps;
    man.behavior_steps = opts.behavior_steps;
    man.dataset_hashes = hashes;
    man.expert = expert_definition();
    man.parameter_count = agent.all_parameters().size();
    man.write(dir / "manifest.json");
    return res;
}

LoadedRun load_run(const fs::path& dir, bool allow_dataset_mismatch) {
    const fs::path ckpt = dir / "checkpoint.bin";
    if (!fs::exists(ckpt))
        throw std::runtime_error("no checkpoint at " + ckpt.string() + "; run pretrain or train first");
    LoadedRun run{dir, load_config(dir / "config.txt"), RunManifest::read(dir / "manifest.json"), Agent{}};
    if (run.manifest.config_hash != run.cfg.hash())
        throw std::runtime_error("config.txt in " + dir.string() + " does not match the manifest's config hash");
    for (const auto& [name, hash] : run.manifest.dataset_hashes) {
        const fs::path path = dataset_path(run.cfg, name);
        if (!fs::exists(path)) {
            if (allow_dataset_mismatch) continue;
            throw std::runtime_error("dataset " + path.string() + " recorded in the manifest is missing");
        }
        const std::string now = toy::file_hash(path);
        if (now != hash && !allow_dataset_mismatch)
            throw std::runtime_error("dataset " + path.string() + " has hash " + now + " but the run was trained on " +
                                     hash + " (pass the dataset-mismatch override to evaluate anyway)");
    }
    run.agent = Agent::create(run.cfg.effective_agent(), run.manifest.seed);
    auto params = run.agent.all_parameters();
    load_checkpoint(ckpt, params);
    return run;
}

Matrix imagine_observations(const Agent& agent, const Matrix& observations, const Matrix& actions,
                            const std::string& prompt, Rng& rng) {
    if (observations.rows() != actions.rows() + 1)
        throw std::invalid_argument("imagine_observations: need one more observation than actions");
    NoGradGuard no_grad;
    const ModelDims& d = agent.cfg.dims;
    const FusionGates gates = agent.fusion.gates(agent.task(Tensor(prompt_bags({prompt}, d.hash_buckets))));
    LatentState state = agent.wm.step(initial_state(1, d), Tensor::zeros(1, d.act_dim), Tensor(Matrix(observations.row(0))),
                                      rng).state;
    const auto w = toy::observation_window(observations, 0, d.window);
    Matrix window(1, static_cast<Eigen::Index>(w.size()));
    for (std::size_t j = 0; j < w.size(); ++j) window(0, static_cast<Eigen::Index>(j)) = w[j];
    Tensor z = agent.fusion(agent.mllm(Tensor(window)), state.features(), gates);
    Matrix out(actions.rows(), d.obs_dim);
    for (Eigen::Index t = 0; t < actions.rows(); ++t) {
        ImagineStep st = agent.wm.imagine(state, Tensor(Matrix(actions.row(t))), rng);
        z = agent.fusion(agent.dec.semantic(z), st.state.features(), gates);
        out.row(t) = agent.dec.observation(z).value();
        state = st.state;
    }
    return out;
}

namespace {

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

Csv read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    Csv csv;
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cell);
                cell.clear();
            } else {
                cell += c;
            }
        }
        cells.push_back(cell);
        return cells;
    };
    std::string line;
    if (std::getline(in, line)) csv.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) csv.rows.push_back(split(line));
    return csv;
}

Series column_series(const Csv& csv, const std::string& name, const std::string& label) {
    Series s{label, {}, {}, false};
    const int step = csv.column("step"), col = csv.column(name);
    if (step < 0 || col < 0) return s;
    for (const auto& r : csv.rows) {
        if (static_cast<int>(r.size()) <= col || r[static_cast<std::size_t>(col)].empty()) continue;
        s.x.push_back(std::stod(r[static_cast<std::size_t>(step)]));
        s.y.push_back(std::stod(r[static_cast<std::size_t>(col)]));
    }
    return s;
}

}  // namespace

std::vector<ScoreRow> evaluate_run(const LoadedRun& run, const fs::path& out_dir, ReferenceCache& refs) {
    fs::create_directories(out_dir);
    const ExperimentConfig& cfg = run.cfg;
    const auto cells = evaluate_cells(cfg, run.agent, cfg.embodiments_eval, refs);
    const auto rows = single_seed_rows(cells, run.manifest.variant);
    write_score_table(rows, out_dir / "scores.csv");

    const fs::path metrics = run.dir / "metrics.csv";
    if (fs::exists(metrics)) {
        const Csv csv = read_csv(metrics);
        Chart reward{"Imagined reward and return during behavior learning", "step", "value", {}};
        reward.series.push_back(column_series(csv, "imagined_reward", "mean reward"));
        Series ret = column_series(csv, "imagined_return", "mean return / horizon");
        for (double& y : ret.y) y /= static_cast<double>(run.agent.cfg.behavior.horizon);
        reward.series.push_back(ret);
        write_svg(reward, out_dir / "reward_curve.svg");

        Chart gates{"Gate values per task and layer", "step", "gate p", {}};
        for (const auto& t : task_names(cfg))
            for (int l = 0; l < cfg.agent.dims.tamf_layers; ++l) {
                Series s = column_series(csv, "gate_" + t + "_l" + std::to_string(l), t + " layer " + std::to_string(l));
                s.dashed = l % 2 == 1;
                if (!s.x.empty()) gates.series.push_back(s);
            }
        if (!gates.series.empty()) write_svg(gates, out_dir / "gates.svg");
    }

    const PromptRegistry prompts = load_prompts(cfg);
    for (const auto& name : cfg.embodiments_eval) {
        const toy::Embodiment& e = toy::embodiment_by_name(name);
        for (const auto& task : task_list(cfg, prompts, name)) {
            Rng rng(mix_seed(cfg.eval_seed ^ 0x7a11ULL));
            EvalOptions one = eval_options(cfg);
            one.n_episodes = 1;
            const AgentRollout ro = run_agent(run.agent, e, task, rng, one);
            const Matrix pred = imagine_observations(run.agent, ro.observations, ro.actions, task.prompt, rng);
            Chart trace{"Velocity, real vs imagined (" + name + ", " + toy::to_string(task.id) + ")", "step",
                        "velocity", {}};
            Series real{"real", {}, {}, false}, imag{"imagined (open loop)", {}, {}, true};
            for (Eigen::Index t = 0; t < pred.rows(); ++t) {
                real.x.push_back(static_cast<double>(t + 1));
                real.y.push_back(ro.observations(t + 1, 1));
                imag.x.push_back(static_cast<double>(t + 1));
                imag.y.push_back(pred(t, 1));
            }
            trace.series = {real, imag};
            write_svg(trace, out_dir / ("trace_" + name + "_" + toy::to_string(task.id) + ".svg"));
        }
    }
    return rows;
}

namespace {

// Per-(embodiment, task) results of one variant, in first-seen order.
struct CellResults {
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<EvalResult>> cells;

    void add(const CellScore& c) {
        const auto key = std::make_pair(c.embodiment, c.task);
        if (!cells.count(key)) order.push_back(key);
        cells[key].push_back(c.result);
    }
    std::vector<ScoreRow> rows(const std::string& label) const {
        std::vector<ScoreRow> out;
        for (const auto& key : order) out.push_back(aggregate(key.first, key.second, label, cells.at(key)));
        return out;
    }
};

// One agent per (seed, task): the policy reads only the fused latent, so a
// single agent cannot be told which task it is evaluated on.
CellResults train_per_task(const ExperimentConfig& vc, const std::string& label, const fs::path& root,
                           ReferenceCache& refs) {
    CellResults res;
    for (int k = 0; k < vc.n_seeds; ++k) {
        const std::uint64_t seed = vc.seed + static_cast<std::uint64_t>(k);
        for (toy::TaskId task : vc.tasks) {
            ExperimentConfig tc = vc;
            tc.tasks = {task};
            RunOptions o{vc.pretrain_steps, vc.behavior_steps, label, std::nullopt, true};
            const RunResult r =
                train_run(tc, seed, root / toy::to_string(task) / ("seed" + std::to_string(seed)), o, refs);
            for (const auto& c : r.scores) res.add(c);
        }
    }
    return res;
}

}  // namespace

AblationResult ablation_ladder(const ExperimentConfig& cfg, ReferenceCache& refs) {
    cfg.validate();
    AblationResult res;
    const fs::path root = cfg.output_dir / "ablate";
    for (Rung rung : all_rungs()) {
        ExperimentConfig rc = cfg;
        rc.rung = rung;
        rc.fusion = FusionChoice::Auto;
        const CellResults cells = train_per_task(rc, to_string(rung), root / rung_slug(rung), refs);
        double sum = 0.0;
        int n = 0;
        for (const auto& [key, results] : cells.cells)
            for (const auto& r : results) {
                sum += r.normalized;
                ++n;
            }
        auto& table = res.tables[rung];
        table = cells.rows(to_string(rung));
        write_score_table(table, root / ("scores_" + rung_slug(rung) + ".csv"));
        res.mean_normalized[rung] = sum / n;
    }
    return res;
}

TransferResult transfer_protocol(const ExperimentConfig& cfg, ReferenceCache& refs) {
    cfg.validate();
    const std::string source = cfg.embodiments_train.front();
    std::vector<std::string> targets;
    for (const auto& e : cfg.embodiments_eval)
        if (e != source && std::find(targets.begin(), targets.end(), e) == targets.end()) targets.push_back(e);
    if (targets.empty()) throw std::invalid_argument("transfer: no target embodiment besides the source '" + source + "'");

    TransferResult res;
    const fs::path root = cfg.output_dir / "transfer";
    struct Variant {
        const char* name;
        FusionChoice fusion;
        double* mean;
    };
    const Variant variants[2] = {{"full", FusionChoice::Tamf, &res.full_transfer_mean},
                                 {"no-tamf", FusionChoice::Additive, &res.no_tamf_transfer_mean}};
    for (const Variant& v : variants) {
        ExperimentConfig vc = cfg;
        vc.rung = Rung::Jbo;
        vc.fusion = v.fusion;
        vc.embodiments_train = {source};
        vc.embodiments_eval = {source};
        vc.embodiments_eval.insert(vc.embodiments_eval.end(), targets.begin(), targets.end());
        const CellResults cells = train_per_task(vc, v.name, root / v.name, refs);
        double sum = 0.0;
        int n = 0;
        for (const auto& [key, results] : cells.cells)
            if (key.first != source)
                for (const auto& r : results) {
                    sum += r.normalized;
                    ++n;
                }
        const auto rows = cells.rows(v.name);
        res.table.insert(res.table.end(), rows.begin(), rows.end());
        *v.mean = sum / n;
        res.transfer_cells = static_cast<int>(targets.size() * cfg.tasks.size());
    }
    write_score_table(res.table, root / "transfer.csv");
    return res;
}

}  // namespace wmb::harness
