#include "wmb/harness/evaluate.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "wmb/harness/format.hpp"

namespace wmb::harness {

AgentRollout run_agent(const Agent& agent, const toy::Embodiment& e, const toy::Task& task, Rng& rng,
                       const EvalOptions& opts) {
    if (opts.n_episodes < 1 || opts.length < 1) throw std::invalid_argument("evaluate: episodes and length must be >= 1");
    const ModelDims& d = agent.cfg.dims;
    if (e.obs_dim() != d.obs_dim || e.act_dim() != d.act_dim)
        throw std::invalid_argument("evaluate: embodiment '" + e.name + "' does not match the model dimensions");
    NoGradGuard no_grad;
    const int n = opts.n_episodes;
    const Tensor tau = agent.task(Tensor(prompt_bags(std::vector<std::string>(static_cast<std::size_t>(n), task.prompt),
                                                     d.hash_buckets)));
    const FusionGates gates = agent.fusion.gates(tau);

    std::vector<toy::EnvState> states(static_cast<std::size_t>(n), toy::reset_state(e));
    std::vector<Matrix> history(static_cast<std::size_t>(n), Matrix(opts.length + 1, d.obs_dim));
    Matrix obs(n, d.obs_dim);
    for (int i = 0; i < n; ++i) {
        const auto o = toy::observe(states[static_cast<std::size_t>(i)]);
        for (int j = 0; j < d.obs_dim; ++j) obs(i, j) = o[static_cast<std::size_t>(j)];
        history[static_cast<std::size_t>(i)].row(0) = obs.row(i);
    }
    AgentRollout out;
    out.returns.assign(static_cast<std::size_t>(n), 0.0);
    out.observations = history[0];
    out.actions.resize(opts.length, d.act_dim);

    LatentState state = initial_state(n, d);
    Tensor action = Tensor::zeros(n, d.act_dim);
    Matrix windows(n, d.window * d.obs_dim);
    for (int t = 0; t < opts.length; ++t) {
        state = agent.wm.step(state, action, Tensor(obs), rng).state;
        for (int i = 0; i < n; ++i) {
            const auto w = toy::observation_window(history[static_cast<std::size_t>(i)], t, d.window);
            for (std::size_t j = 0; j < w.size(); ++j) windows(i, static_cast<Eigen::Index>(j)) = w[j];
        }
        const Tensor z = agent.fusion(agent.mllm(Tensor(windows)), state.features(), gates);
        action = agent.policy.mode(z);
        const Matrix& a = action.value();
        for (int i = 0; i < n; ++i) {
            std::vector<double> ai(a.row(i).data(), a.row(i).data() + a.cols());
            auto& s = states[static_cast<std::size_t>(i)];
            auto step = toy::env_step(s, ai, e, rng, opts.noise_std);
            s = std::move(step.state);
            for (int j = 0; j < d.obs_dim; ++j) obs(i, j) = step.observation[static_cast<std::size_t>(j)];
            history[static_cast<std::size_t>(i)].row(t + 1) = obs.row(i);
            const double r = toy::true_reward(s, task);
            out.returns[static_cast<std::size_t>(i)] += r;
            if (i == 0) out.rewards.push_back(r);
        }
        out.actions.row(t) = a.row(0);
    }
    out.observations = history[0];
    return out;
}

References compute_references(const toy::Embodiment& e, const toy::Task& task, std::uint64_t seed,
                              const EvalOptions& opts) {
    References refs;
    const Rng base(seed);
    for (int i = 0; i < opts.n_episodes; ++i) {
        Rng r_rand = base.derive(2 * static_cast<std::uint64_t>(i));
        Rng r_exp = base.derive(2 * static_cast<std::uint64_t>(i) + 1);
        const auto rand_ep = toy::run_episode(e, task, toy::Collector::Random, r_rand, opts.length, opts.noise_std);
        const auto exp_ep = toy::run_episode(e, task, toy::Collector::Proportional, r_exp, opts.length, opts.noise_std);
        for (double r : rand_ep.true_rewards) refs.random += r;
        for (double r : exp_ep.true_rewards) refs.expert += r;
    }
    refs.random /= opts.n_episodes;
    refs.expert /= opts.n_episodes;
    return refs;
}

namespace {

std::string cache_key(const toy::Embodiment& e, const toy::Task& task, std::uint64_t seed, const EvalOptions& o) {
    std::ostringstream os;
    os << e.name << '/' << toy::to_string(task.id) << "/n" << o.n_episodes << "/len" << o.length << "/noise"
       << fmt_double(o.noise_std) << "/seed" << seed;
    return os.str();
}

}  // namespace

ReferenceCache::ReferenceCache(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error("reference cache " + path_.string() + " is not valid JSON: " + ex.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it)
        entries_[it.key()] = References{it.value().at("random").get<double>(), it.value().at("expert").get<double>()};
}

References ReferenceCache::get(const toy::Embodiment& e, const toy::Task& task, std::uint64_t seed,
                               const EvalOptions& opts) {
    const std::string key = cache_key(e, task, seed, opts);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    const References refs = compute_references(e, task, seed, opts);
    entries_[key] = refs;
    if (!path_.empty()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : entries_) j[k] = {{"random", v.random}, {"expert", v.expert}};
        std::ofstream out(path_);
        if (!out) throw std::runtime_error("cannot write reference cache " + path_.string());
        out << j.dump(2) << '\n';
    }
    return refs;
}

double normalize(double raw, const References& refs) {
    if (!(refs.expert > refs.random))
        throw std::invalid_argument("normalize: expert reference " + fmt_double(refs.expert) +
                                    " does not exceed random reference " + fmt_double(refs.random));
    return (raw - refs.random) / (refs.expert - refs.random);
}

MeanSe mean_se(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_se: no values");
    MeanSe out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
    }
    return out;
}

EvalResult evaluate_agent(const Agent& agent, const toy::Embodiment& e, const toy::Task& task,
                          const References& refs, std::uint64_t seed, const EvalOptions& opts) {
    Rng rng(seed);
    const AgentRollout ro = run_agent(agent, e, task, rng, opts);
    std::vector<double> norm;
    for (double r : ro.returns) norm.push_back(normalize(r, refs));
    EvalResult out;
    out.refs = refs;
    out.raw = mean_se(ro.returns).mean;
    const MeanSe ms = mean_se(norm);
    out.normalized = ms.mean;
    out.normalized_se = ms.se;
    return out;
}

ScoreRow aggregate(const std::string& embodiment, const std::string& task, const std::string& rung,
                   const std::vector<EvalResult>& per_seed) {
    std::vector<double> raw, norm;
    for (const auto& r : per_seed) {
        raw.push_back(r.raw);
        norm.push_back(r.normalized);
    }
    const MeanSe ms = mean_se(norm);
    return ScoreRow{embodiment, task, rung, mean_se(raw).mean, ms.mean, ms.se, static_cast<int>(per_seed.size())};
}

namespace {
constexpr const char* kScoreHeader = "embodiment,task,rung,raw_mean,normalized_mean,standard_error,n_seeds";
}

void write_score_table(const std::vector<ScoreRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write score table " + path.string());
    out << kScoreHeader << '\n';
    for (const auto& r : rows)
        out << r.embodiment << ',' << r.task << ',' << r.rung << ',' << fmt_double(r.raw_mean) << ','
            << fmt_double(r.normalized_mean) << ',' << fmt_double(r.standard_error) << ',' << r.n_seeds << '\n';
}

std::vector<ScoreRow> read_score_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read score table " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kScoreHeader) throw std::runtime_error("score table " + path.string() + ": unexpected header");
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 7) throw std::runtime_error("score table " + path.string() + ": malformed row '" + line + "'");
        rows.push_back({f[0], f[1], f[2], std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stoi(f[6])});
    }
    return rows;
}

}  // namespace wmb::harness
