// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
//   acceptance [--work DIR] [criterion ...]   (default: all, 1..10)
//
// Result lines are also appended to DIR/results.txt.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wmb/harness/experiment.hpp"
#include "wmb/numcore/grad_check.hpp"

using namespace wmb;
using namespace wmb::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int precision = 3) {
    std::ostringstream o;
    o.precision(precision);
    o << v;
    return o.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1

struct GradSuite {
    AgentConfig cfg;
    Agent agent;
    toy::SequenceBatch batch;
    Matrix bags;

    GradSuite() : agent(Agent::create(small_config(), 41)) {
        Rng rng(42);
        // Non-zero layerscales so that every adapter path carries gradient.
        for (auto& p : agent.model.all())
            if (p.name.ends_with("layerscale")) p.tensor.mutable_value() = rng.normal_matrix(1, agent.cfg.dims.d_z);
        const std::vector<toy::Task> tasks{toy::make_task(toy::TaskId::Stand, "stand still upright"),
                                           toy::make_task(toy::TaskId::Walk, "walk forward at a steady pace"),
                                           toy::make_task(toy::TaskId::Run, "run forward fast")};
        const toy::Dataset ds = toy::collect_offline(toy::embodiment_by_name("light"), tasks, 6, 43);
        batch = toy::sample_batch(ds, 2, 3, rng);
        bags = prompt_bags(batch_prompts(batch, PromptRegistry::builtin()), agent.cfg.dims.hash_buckets);
    }

    static AgentConfig small_config() {
        AgentConfig c;
        c.behavior.horizon = 3;
        return c;
    }
};

Outcome gradient_suite() {
    Stopwatch clock;
    GradSuite g;
    const Agent& a = g.agent;
    const ModelDims& d = a.cfg.dims;
    const std::vector<Tensor> model = trainable_tensors(a.model.all());
    const std::vector<Tensor> behavior = trainable_tensors(a.behavior.all());

    struct Check {
        std::string name;
        std::function<double(Rng&, GradCheckOptions&)> run;
    };
    auto leaves = [&](const std::string& prefix) { return trainable_tensors(a.model.with_prefix(prefix)); };

    std::vector<Check> checks;
    checks.push_back({"task encoder", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor bags(rng.uniform_matrix(2, d.hash_buckets, 0.0, 2.0));
                          Tensor probe(rng.normal_matrix(2, d.d_tau));
                          return grad_check_leaves([&] { return sum(a.task(bags) * probe); }, leaves("task."), o);
                      }});
    checks.push_back({"stub encoder", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor w(rng.normal_matrix(2, d.window * d.obs_dim));
                          Tensor probe(rng.normal_matrix(2, d.d_m));
                          return grad_check_leaves([&] { return sum(a.mllm(w) * probe); }, leaves("mllm."), o);
                      }});
    checks.push_back({"task mapper and aligner", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor tau(rng.normal_matrix(2, d.d_tau));
                          Tensor p1(rng.normal_matrix(2, d.d_z)), p2(rng.normal_matrix(2, d.d_m));
                          auto ls = leaves("map.");
                          for (auto& t : leaves("psi.")) ls.push_back(t);
                          return grad_check_leaves([&] { return sum(a.map(tau) * p1) + sum(a.psi(tau) * p2); }, ls, o);
                      }});
    checks.push_back({"decoders", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor z(rng.normal_matrix(2, d.d_z));
                          Tensor p1(rng.normal_matrix(2, d.d_m)), p2(rng.normal_matrix(2, d.obs_dim));
                          return grad_check_leaves(
                              [&] { return sum(a.dec.semantic(z) * p1) + sum(a.dec.observation(z) * p2); },
                              leaves("dec."), o);
                      }});
    checks.push_back({"rssm step", [&](Rng& rng, GradCheckOptions& o) {
                          LatentState prev = initial_state(2, d);
                          prev.h = Tensor(rng.normal_matrix(2, d.d_h));
                          prev.s = Tensor(rng.normal_matrix(2, d.d_s));
                          Tensor act(rng.uniform_matrix(2, d.act_dim, -1, 1)), x(rng.normal_matrix(2, d.obs_dim));
                          Tensor probe(rng.normal_matrix(2, d.d_s));
                          const std::uint64_t seed = rng.below(1000);
                          auto f = [&] {
                              Rng r(seed);
                              WmStep st = a.wm.step(prev, act, x, r);
                              return sum(st.state.s * probe) + sum(kl_diag_gaussian(st.post, st.prior)) +
                                     sum(square(st.state.h));
                          };
                          return grad_check_leaves(f, leaves("wm."), o);
                      }});
    for (std::size_t l = 0; l < a.fusion.tamf().layers.size(); ++l) {
        checks.push_back({"tamf layer " + std::to_string(l), [&, l](Rng& rng, GradCheckOptions& o) {
                              const TamfLayer& layer = a.fusion.tamf().layers[l];
                              Tensor z(rng.normal_matrix(2, d.d_z)), tau(rng.normal_matrix(2, d.d_tau));
                              Tensor probe(rng.normal_matrix(2, d.d_z));
                              return grad_check_leaves([&] { return sum(layer(z, layer.gate(tau)) * probe); },
                                                       leaves("tamf.layer" + std::to_string(l) + "."), o);
                          }});
    }
    checks.push_back({"tamf stack", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor ev(rng.normal_matrix(2, d.d_m)), feat(rng.normal_matrix(2, d.d_h + d.d_s));
                          Tensor tau(rng.normal_matrix(2, d.d_tau)), probe(rng.normal_matrix(2, d.d_z));
                          return grad_check_leaves([&] { return sum(a.fusion(ev, feat, a.fusion.gates(tau)) * probe); },
                                                   leaves("tamf."), o);
                      }});
    checks.push_back({"policy", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor z(rng.normal_matrix(2, d.d_z)), probe(rng.normal_matrix(2, d.act_dim));
                          const std::uint64_t seed = rng.below(1000);
                          auto f = [&] {
                              Rng r(seed);
                              return sum(a.policy.sample(z, r) * probe) + sum(a.policy.dist(z).log_std());
                          };
                          return grad_check_leaves(f, behavior, o);
                      }});
    checks.push_back({"text imagination", [&](Rng& rng, GradCheckOptions& o) {
                          Tensor tau(rng.normal_matrix(2, d.d_tau)), probe(rng.normal_matrix(2, d.d_z));
                          std::vector<Tensor> actions;
                          for (int h = 0; h < 3; ++h) actions.emplace_back(rng.uniform_matrix(2, d.act_dim, -1, 1));
                          auto ls = leaves("text.");
                          for (auto& t : leaves("map.")) ls.push_back(t);
                          auto f = [&] {
                              auto seq = text_rollout(a.map, a.text, tau, actions);
                              return sum(seq.back().mean() * probe) + sum(seq.back().log_std());
                          };
                          return grad_check_leaves(f, ls, o);
                      }});
    auto batch_loss = [&](const std::string& name, std::function<Tensor(const BatchForward&, Rng&)> term) {
        checks.push_back({name, [&, term](Rng& rng, GradCheckOptions& o) {
                              const std::uint64_t seed = rng.below(100000);
                              auto f = [&] {
                                  Rng r(seed);
                                  BatchForward fwd = forward_batch(a, g.batch, g.bags, r);
                                  return term(fwd, r);
                              };
                              return grad_check_leaves(f, model, o);
                          }});
    };
    batch_loss("L_WM", [&](const BatchForward& f, Rng&) {
        return wm_loss(f.seq.priors, f.seq.posts, a.dec.observation(f.z), f.obs).total;
    });
    batch_loss("L_MLLM", [&](const BatchForward& f, Rng&) { return mllm_loss(a, f.e_v, f.z, f.tau); });
    batch_loss("L_JBO", [&](const BatchForward& f, Rng& r) { return jbo_term(a, f, r); });

    double worst = 0.0;
    std::string worst_name;
    Rng rng(44);
    for (const auto& c : checks) {
        for (int trial = 0; trial < 10; ++trial) {
            GradCheckOptions o;
            o.max_coords_per_tensor = c.name.starts_with("L_") ? 2 : 8;
            o.coord_seed = static_cast<std::uint64_t>(trial);
            const double err = c.run(rng, o);
            if (!(err <= worst)) {
                worst = err;
                worst_name = c.name;
            }
        }
    }
    const double secs = clock.seconds();
    return {worst <= 1e-4 && secs < 120.0,
            std::to_string(checks.size()) + " maps x 10 points, worst " + fmt(worst) + " (" + worst_name + "), " +
                fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 2

// log p(x) - log q(x) averaged over x ~ p; written against the densities
// directly rather than the closed form.
double kl_monte_carlo(const Matrix& mp, const Matrix& lp, const Matrix& mq, const Matrix& lq, int n, Rng& rng) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < mp.cols(); ++j) {
            const double sp = std::exp(lp(0, j)), sq = std::exp(lq(0, j));
            const double x = mp(0, j) + sp * rng.normal();
            const double zp = (x - mp(0, j)) / sp, zq = (x - mq(0, j)) / sq;
            acc += (-0.5 * zp * zp - std::log(sp)) - (-0.5 * zq * zq - std::log(sq));
        }
    }
    return acc / n;
}

Outcome distribution_properties() {
    Rng rng(52);
    int negative = 0;
    double self_max = 0.0;
    for (int i = 0; i < 10000; ++i) {
        DiagGaussian p(Tensor(rng.normal_matrix(1, 4)), Tensor(rng.uniform_matrix(1, 4, -2, 2)));
        DiagGaussian q(Tensor(rng.normal_matrix(1, 4)), Tensor(rng.uniform_matrix(1, 4, -2, 2)));
        if (kl_diag_gaussian(p, q).item() < 0.0) ++negative;
        self_max = std::max(self_max, std::abs(kl_diag_gaussian(p, p).item()));
    }
    double mc_worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Matrix mp = rng.normal_matrix(1, 2) * 0.5, mq = rng.normal_matrix(1, 2) * 0.5;
        const Matrix lp = rng.uniform_matrix(1, 2, -0.4, 0.2), lq = rng.uniform_matrix(1, 2, -0.2, 0.4);
        const double closed = kl_diag_gaussian(DiagGaussian(Tensor(mp), Tensor(lp)), DiagGaussian(Tensor(mq), Tensor(lq))).item();
        mc_worst = std::max(mc_worst, std::abs(closed - kl_monte_carlo(mp, lp, mq, lq, 1'000'000, rng)));
    }
    return {negative == 0 && self_max < 1e-10 && mc_worst < 1e-2,
            "negative " + std::to_string(negative) + "/10000, max KL(p,p) " + fmt(self_max) +
                ", worst |closed - MC| " + fmt(mc_worst) + " over 20 pairs"};
}

// ---------------------------------------------------------------- 3

Outcome tamf_invariants() {
    ModelDims d;
    ParamSet ps;
    Rng rng(61);
    Tamf tamf = Tamf::create(ps, d, rng);

    bool identity = true;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor ev(rng.normal_matrix(5, d.d_m)), feat(rng.normal_matrix(5, d.d_h + d.d_s)), tau(rng.normal_matrix(5, d.d_tau));
        const Tensor z0 = tamf.initial_fusion(ev, feat);
        identity = identity && tamf.forward(ev, feat, tamf.gates(tau)).value() == z0.value();
        for (const auto& l : tamf.layers) identity = identity && l(z0, l.gate(tau)).value() == z0.value();
    }

    // Gates read tau alone: same tau gives the same gates regardless of the
    // state it is later fused with, and identical tau rows give identical gates.
    bool tau_only = true;
    const Matrix one = rng.normal_matrix(1, d.d_tau);
    const FusionGates before = tamf.gates(Tensor(one.replicate(4, 1)));
    for (const auto& p : before)
        for (int r = 1; r < 4; ++r) tau_only = tau_only && p.value()(r, 0) == p.value()(0, 0);
    (void)tamf.forward(Tensor(rng.normal_matrix(4, d.d_m)), Tensor(rng.normal_matrix(4, d.d_h + d.d_s)), before);
    const FusionGates after = tamf.gates(Tensor(one.replicate(4, 1)));
    for (std::size_t l = 0; l < before.size(); ++l) tau_only = tau_only && before[l].value() == after[l].value();

    for (auto& l : tamf.layers) {
        l.sem.layerscale.mutable_value() = rng.normal_matrix(1, d.d_z);
        l.dyn.layerscale.mutable_value() = rng.normal_matrix(1, d.d_z);
    }
    auto scramble = [&](const std::string& branch) {
        for (int l = 0; l < d.tamf_layers; ++l)
            for (auto p : ps.with_prefix("tamf.layer" + std::to_string(l) + "." + branch))
                p.tensor.mutable_value() = rng.normal_matrix(p.tensor.rows(), p.tensor.cols());
    };
    Tensor ev(rng.normal_matrix(4, d.d_m)), feat(rng.normal_matrix(4, d.d_h + d.d_s));
    const FusionGates closed(static_cast<std::size_t>(d.tamf_layers), Tensor::scalar(0.0));
    const FusionGates open(static_cast<std::size_t>(d.tamf_layers), Tensor::scalar(1.0));
    const Matrix zc = tamf.forward(ev, feat, closed).value();
    scramble("dyn");
    const bool dyn_dead = tamf.forward(ev, feat, closed).value() == zc;
    const Matrix zo = tamf.forward(ev, feat, open).value();
    scramble("sem");
    const bool sem_dead = tamf.forward(ev, feat, open).value() == zo;

    return {identity && tau_only && dyn_dead && sem_dead,
            std::string("residual identity ") + (identity ? "exact" : "broken") + ", gates tau-only " +
                (tau_only ? "yes" : "no") + ", annihilation p=0 " + (dyn_dead ? "yes" : "no") + " p=1 " +
                (sem_dead ? "yes" : "no")};
}

// ---------------------------------------------------------------- 4

Outcome routing() {
    Stopwatch clock;
    int ok = 0;
    std::string seps;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RoutingResult r = routing_separation(seed, 2000);
        if (r.mean_separation > 0.2) ++ok;
        seps += (seed ? " " : "") + fmt(r.mean_separation);
    }
    const double secs = clock.seconds();
    return {ok >= 4 && secs < 180.0,
            std::to_string(ok) + "/5 seeds > 0.2 (" + seps + "), " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 5

bool any_grad(const std::vector<Parameter>& params) {
    for (const auto& p : params)
        if (p.tensor.has_grad() && !p.tensor.grad().isZero(0.0)) return true;
    return false;
}

Outcome backward_witness() {
    Agent agent = Agent::create(AgentConfig{}, 71);
    Rng rng(72);
    const std::vector<toy::Task> tasks{toy::make_task(toy::TaskId::Walk, "walk forward at a steady pace")};
    const toy::Dataset ds = toy::collect_offline(toy::embodiment_by_name("light"), tasks, 8, 73);
    const toy::SequenceBatch batch = toy::sample_batch(ds, 4, 5, rng);
    const Matrix bags = prompt_bags(batch_prompts(batch, PromptRegistry::builtin()), agent.cfg.dims.hash_buckets);

    agent.model.zero_grad();
    BatchForward f = forward_batch(agent, batch, bags, rng);
    total_loss(agent, f, rng).total.backward();
    const bool wm = any_grad(agent.model.with_prefix("wm."));
    const bool tamf = any_grad(agent.model.with_prefix("tamf."));
    const bool head = any_grad(agent.model.with_prefix("mllm.head"));

    Adam opt(agent.model.all());
    const Matrix before = agent.mllm.head_out.weight.value();
    BatchForward g = forward_batch(agent, batch, bags, rng);
    opt.zero_grad();
    mllm_loss(agent, g.e_v, g.z, g.tau).backward();
    opt.step();
    const double moved = (agent.mllm.head_out.weight.value() - before).cwiseAbs().maxCoeff();
    return {wm && tamf && head && moved > 0.0,
            std::string("grads: world model ") + (wm ? "yes" : "no") + ", tamf " + (tamf ? "yes" : "no") +
                ", encoder head " + (head ? "yes" : "no") + "; head change after one L_MLLM step " + fmt(moved)};
}

// ---------------------------------------------------------------- 6 and 9

ExperimentConfig smoke_config(const fs::path& work) {
    ExperimentConfig cfg;  // light, walk, 3000 + 1500
    cfg.output_dir = work / "smoke";
    return cfg;
}

fs::path smoke_run_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.output_dir / ("seed" + std::to_string(seed));
}

Outcome learning_smoke(const fs::path& work) {
    const ExperimentConfig cfg = smoke_config(work);
    collect_datasets(cfg);
    ReferenceCache refs(cfg.output_dir / "references.json");
    int ok = 0;
    double slowest = 0.0;
    std::string cells;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Stopwatch clock;
        const RunResult r =
            train_run(cfg, seed, smoke_run_dir(cfg, seed), {cfg.pretrain_steps, cfg.behavior_steps}, refs);
        slowest = std::max(slowest, clock.seconds());
        const EvalResult& e = r.scores.at(0).result;
        // The random reference sits at 0 on the normalized scale.
        const bool good = e.normalized > 0.3 && e.normalized > 3.0 * e.normalized_se;
        if (good) ++ok;
        cells += (seed ? " " : "") + fmt(e.normalized) + "+-" + fmt(e.normalized_se, 2);
        std::cerr << "[6] seed " << seed << " normalized " << e.normalized << " se " << e.normalized_se << " ("
                  << clock.seconds() << " s)\n";
    }
    return {ok >= 4 && slowest < 600.0,
            std::to_string(ok) + "/5 seeds pass (" + cells + "), slowest run " + fmt(slowest) + " s"};
}

Outcome determinism(const fs::path& work) {
    const ExperimentConfig cfg = smoke_config(work);
    collect_datasets(cfg);
    ReferenceCache refs(cfg.output_dir / "references.json");
    const fs::path first = smoke_run_dir(cfg, 0);
    if (!fs::exists(first / "metrics.csv"))
        train_run(cfg, 0, first, {cfg.pretrain_steps, cfg.behavior_steps}, refs);
    const fs::path second = cfg.output_dir / "seed0-repeat";
    train_run(cfg, 0, second, {cfg.pretrain_steps, cfg.behavior_steps}, refs);
    const std::string a = slurp(first / "metrics.csv"), b = slurp(second / "metrics.csv");
    return {a == b, "metrics.csv " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " bytes, " +
                        (a == b ? "identical" : "different")};
}

// ---------------------------------------------------------------- 7

constexpr int kAblationPretrain = 1000;
constexpr int kAblationBehavior = 500;
const char* const kAblationEmbodiment = "springy";

Outcome ablation(const fs::path& work) {
    Stopwatch clock;
    ExperimentConfig cfg;
    cfg.embodiments_train = {kAblationEmbodiment};
    cfg.embodiments_eval = {kAblationEmbodiment};
    cfg.tasks = {toy::TaskId::Stand, toy::TaskId::Walk, toy::TaskId::Run};
    cfg.pretrain_steps = kAblationPretrain;
    cfg.behavior_steps = kAblationBehavior;
    cfg.output_dir = work / "ablation";
    collect_datasets(cfg);
    ReferenceCache refs(cfg.output_dir / "references.json");
    const AblationResult r = ablation_ladder(cfg, refs);
    bool ordered = true;
    std::string ladder;
    double prev = -1e300;
    for (Rung rung : all_rungs()) {
        const double m = r.mean_normalized.at(rung);
        if (m < prev - 0.02) ordered = false;
        prev = m;
        ladder += (ladder.empty() ? "" : " -> ") + to_string(rung) + " " + fmt(m);
    }
    const double secs = clock.seconds();
    return {ordered && secs < 3600.0, ladder + ", " + fmt(secs / 60.0) + " min"};
}

// ---------------------------------------------------------------- 8

constexpr int kTransferPretrain = 1500;
constexpr int kTransferBehavior = 750;

Outcome transfer(const fs::path& work) {
    Stopwatch clock;
    ExperimentConfig cfg;
    cfg.embodiments_train = {"heavy"};
    cfg.embodiments_eval = {"heavy", "segmented", "springy"};
    cfg.tasks = {toy::TaskId::Stand, toy::TaskId::Walk, toy::TaskId::Run};
    cfg.pretrain_steps = kTransferPretrain;
    cfg.behavior_steps = kTransferBehavior;
    cfg.output_dir = work / "transfer";
    collect_datasets(cfg);
    ReferenceCache refs(cfg.output_dir / "references.json");
    const TransferResult r = transfer_protocol(cfg, refs);
    const double secs = clock.seconds();
    return {r.transfer_cells == 6 && r.full_transfer_mean >= r.no_tamf_transfer_mean && secs < 5400.0,
            "full " + fmt(r.full_transfer_mean) + " vs no-tamf " + fmt(r.no_tamf_transfer_mean) + " over " +
                std::to_string(r.transfer_cells) + " cells x 5 seeds, " + fmt(secs / 60.0) + " min"};
}

// ---------------------------------------------------------------- 10

Outcome reward_oracle() {
    Rng rng(101);
    int agree = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix target = rng.normal_matrix(1, 64);
        const Matrix zs = rng.normal_matrix(100, 64);
        const CosineResult r = task_reward(Tensor(zs), Tensor(Matrix(target.replicate(100, 1))));
        Eigen::Index best = 0;
        r.value.value().col(0).maxCoeff(&best);
        int brute = 0;
        double best_cos = -2.0;
        for (int i = 0; i < 100; ++i) {
            double dot = 0.0, nz = 0.0, nt = 0.0;
            for (int j = 0; j < 64; ++j) {
                dot += zs(i, j) * target(0, j);
                nz += zs(i, j) * zs(i, j);
                nt += target(0, j) * target(0, j);
            }
            const double c = dot / std::sqrt(nz * nt);
            if (c > best_cos) {
                best_cos = c;
                brute = i;
            }
        }
        if (brute == best) ++agree;
    }
    return {agree == 100, std::to_string(agree) + "/100 trials agree"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    fs::path work = "acceptance_work";
    std::vector<int> selected;
    app.add_option("--work", work, "Directory for datasets and runs");
    app.add_option("criteria", selected, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"distribution properties", distribution_properties},
        {"TAMF structural invariants", tamf_invariants},
        {"routing separation", routing},
        {"backward-path witness", backward_witness},
        {"learning smoke test", [&] { return learning_smoke(work); }},
        {"ablation ordering", [&] { return ablation(work); }},
        {"transfer direction", [&] { return transfer(work); }},
        {"determinism", [&] { return determinism(work); }},
        {"reward oracle", reward_oracle},
    };
    int failed = 0;
    for (int c : selected) {
        const auto& [name, run] = criteria[static_cast<std::size_t>(c - 1)];
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!o.pass) ++failed;
        const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(c) + "] " + name + ": " + o.detail;
        std::cout << line << std::endl;
        fs::create_directories(work);
        std::ofstream(work / "results.txt", std::ios::app) << line << '\n';
    }
    return failed == 0 ? 0 : 1;
}
