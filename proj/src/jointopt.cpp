#include "wmb/jointopt.hpp"

#include <cmath>
#include <stdexcept>

namespace wmb {

void LossWeights::validate() const {
    if (!(lambda_wm >= 0.0) || !(lambda_mllm >= 0.0) || !(lambda_jbo >= 0.0))
        throw std::invalid_argument("loss weights must be non-negative");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
}

Agent Agent::create(const AgentConfig& cfg, std::uint64_t seed) {
    cfg.weights.validate();
    Agent a;
    a.cfg = cfg;
    const ModelDims& d = cfg.dims;
    const Rng base(seed);
    Rng r_task = base.derive(1), r_mllm = base.derive(2), r_map = base.derive(3), r_psi = base.derive(4),
        r_dec = base.derive(5), r_wm = base.derive(6), r_fuse = base.derive(7), r_text = base.derive(8),
        r_lift = base.derive(9), r_pol = base.derive(10), r_crit = base.derive(11);
    a.task = TaskEncoder::create(a.model, d, r_task);
    a.mllm = StubMllm::create(a.model, d, r_mllm);
    a.map = TaskMapper::create(a.model, d, r_map);
    a.psi = TextAligner::create(a.model, d, r_psi);
    a.dec = LatentDecoder::create(a.model, d, r_dec);
    a.wm = WorldModel::create(a.model, d, r_wm);
    a.fusion = cfg.use_tamf ? Fusion::make_tamf(a.model, d, r_fuse) : Fusion::make_additive(a.model, d, r_fuse);
    a.text = TextImagination::create(a.model, d, r_text);
    a.lift = LatentLift::create(a.model, d, r_lift);
    a.policy = Policy::create(a.behavior, d, r_pol);
    a.critic = Critic::create(a.behavior, d, r_crit);

    const int fused = cfg.use_tamf ? a.fusion.tamf().h_fuse.out() : d.d_z;
    if (fused != a.map.map.out())
        throw std::invalid_argument("agent: fused latent width " + std::to_string(fused) +
                                    " differs from task latent width " + std::to_string(a.map.map.out()));
    return a;
}

std::vector<Parameter> Agent::all_parameters() const {
    std::vector<Parameter> out = model.all();
    for (const auto& p : behavior.all()) out.push_back(p);
    return out;
}

Matrix prompt_bags(const std::vector<std::string>& prompts, int buckets) {
    Matrix out(static_cast<Eigen::Index>(prompts.size()), buckets);
    for (std::size_t i = 0; i < prompts.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = prompt_bag_of_words(prompts[i], buckets);
    return out;
}

std::vector<std::string> batch_prompts(const toy::SequenceBatch& batch, const PromptRegistry& prompts) {
    std::vector<std::string> out;
    for (std::size_t r = 0; r < batch.tasks.size(); ++r)
        out.push_back(prompts.prompt(batch.embodiments[r], toy::to_string(batch.tasks[r])));
    return out;
}

BatchForward forward_batch(const Agent& agent, const toy::SequenceBatch& batch, const Matrix& bags, Rng& rng) {
    BatchForward f;
    f.T = batch.seq_len;
    f.B = batch.batch;
    if (bags.rows() != f.B) throw std::invalid_argument("forward_batch: one prompt per batch row required");
    f.tau = agent.task(Tensor(bags));
    f.seq = observe_sequence(agent.wm, batch.obs, batch.actions, rng);
    f.e_v = agent.mllm(Tensor(stack_time(batch.windows)));
    std::vector<Tensor> feats;
    feats.reserve(f.seq.states.size());
    for (const auto& s : f.seq.states) feats.push_back(s.features());
    f.gates = agent.fusion.gates(f.tau);
    f.z = agent.fusion(f.e_v, concat_rows(feats), f.gates);
    f.obs = Tensor(stack_time(batch.obs));
    f.actions = batch.actions;
    for (int r = 0; r < f.B; ++r) {
        const bool demo = toy::collector_for(batch.episode_index[static_cast<std::size_t>(r)]) ==
                          toy::Collector::Proportional;
        if (agent.cfg.reward_fit_source == RewardFitSource::All || demo) f.fit_rows.push_back(r);
    }
    return f;
}

Tensor mllm_loss(const Agent& agent, const Tensor& e_v, const Tensor& z, const Tensor& tau) {
    if (e_v.rows() != z.rows() || e_v.rows() % tau.rows() != 0)
        throw std::invalid_argument("mllm_loss: e_v, z and tau rows do not line up");
    const int B = tau.rows();
    Tensor recon = sum(square(e_v - agent.dec.semantic(z)));
    Tensor align = sum(square(e_v - tile_rows(agent.psi(tau), e_v.rows() / B)));
    return scale(recon + align, 1.0 / B);
}

Tensor jbo_loss(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text, double gamma) {
    return discounted_kl(wm, text, gamma);
}

Tensor jbo_term(const Agent& agent, const BatchForward& fwd, Rng& rng) {
    const int T = fwd.T, B = fwd.B;
    ImaginationStart start;
    start.state = fwd.seq.states.back();
    start.z = slice_rows(fwd.z, (T - 1) * B, T * B);
    start.e_v = slice_rows(fwd.e_v, (T - 1) * B, T * B);
    start.gates = fwd.gates;
    const BehaviorConfig& bc = agent.cfg.behavior;
    ImaginedTrajectory traj = rollout(RolloutModels{agent.wm, agent.fusion, agent.dec, agent.policy.detached()}, start,
                                       bc.horizon, rng, bc.ev_mode);
    TextRolloutOptions topts;
    topts.sample = bc.text_sampling;
    topts.rng = &rng;
    std::vector<DiagGaussian> text = text_rollout(agent.map, agent.text, fwd.tau, traj.actions, topts);
    std::vector<DiagGaussian> wm_side, text_side;
    for (int h = 0; h < traj.horizon(); ++h) {
        wm_side.push_back(lifted_wm_dist(traj.z[static_cast<std::size_t>(h + 1)],
                                         traj.priors[static_cast<std::size_t>(h)], agent.lift));
        text_side.push_back(text[static_cast<std::size_t>(h + 1)]);
    }
    return jbo_loss(wm_side, text_side, agent.cfg.weights.gamma);
}

Tensor reward_fit_loss(const Agent& agent, const BatchForward& fwd) {
    if (fwd.fit_rows.empty()) return {};
    const int B = fwd.B;
    const auto& rows = fwd.fit_rows;
    const int n = static_cast<int>(rows.size());
    Tensor tau = gather_rows(detach(fwd.tau), rows);
    std::vector<Tensor> actions;
    for (const auto& a : fwd.actions) {
        Matrix sel(n, a.cols());
        for (int i = 0; i < n; ++i) sel.row(i) = a.row(rows[static_cast<std::size_t>(i)]);
        actions.emplace_back(std::move(sel));
    }
    std::vector<DiagGaussian> text = text_rollout(agent.map, agent.text, tau, actions);
    const Tensor z = detach(fwd.z);
    Tensor total;
    std::vector<int> idx(rows.size());
    for (int t = 0; t < fwd.T; ++t) {
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = t * B + rows[static_cast<std::size_t>(i)];
        const DiagGaussian& prior = fwd.seq.priors[static_cast<std::size_t>(t)];
        DiagGaussian prior_rows(gather_rows(detach(prior.mean()), rows), gather_rows(detach(prior.log_std()), rows));
        DiagGaussian wm_side = lifted_wm_dist(gather_rows(z, idx), prior_rows, agent.lift);
        Tensor kl = mean(kl_diag_gaussian(wm_side, text[static_cast<std::size_t>(t)]));
        total = total.defined() ? total + kl : kl;
    }
    return total;
}

namespace {

void require_finite_term(const Tensor& t, const char* name) {
    if (!std::isfinite(t.item())) throw std::runtime_error(std::string("total loss: term ") + name + " is not finite");
}

}  // namespace

TotalLoss total_loss(const Agent& agent, const BatchForward& fwd, Rng& rng) {
    const LossWeights& w = agent.cfg.weights;
    TotalLoss out;
    std::vector<Tensor> parts;
    if (w.lambda_wm > 0.0) {
        out.wm_parts = wm_loss(fwd.seq.priors, fwd.seq.posts, agent.dec.observation(fwd.z), fwd.obs, agent.cfg.wm);
        out.wm = out.wm_parts.total;
        require_finite_term(out.wm, "L_WM");
        out.wm_value = out.wm.item();
        parts.push_back(scale(out.wm, w.lambda_wm));
    }
    if (w.lambda_mllm > 0.0) {
        out.mllm = mllm_loss(agent, fwd.e_v, fwd.z, fwd.tau);
        require_finite_term(out.mllm, "L_MLLM");
        out.mllm_value = out.mllm.item();
        parts.push_back(scale(out.mllm, w.lambda_mllm));
    }
    if (w.lambda_jbo > 0.0) {
        out.jbo = jbo_term(agent, fwd, rng);
        require_finite_term(out.jbo, "L_JBO");
        out.jbo_value = out.jbo.item();
        parts.push_back(scale(out.jbo, w.lambda_jbo));
    }
    if (parts.empty()) {
        out.total = Tensor::scalar(0.0);
        return out;
    }
    out.total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) out.total = out.total + parts[i];
    return out;
}

ImaginationStart behavior_start(const BatchForward& fwd, Rng& rng) {
    const int T = fwd.T, B = fwd.B;
    std::vector<int> idx(static_cast<std::size_t>(B)), rows(static_cast<std::size_t>(B));
    for (int r = 0; r < B; ++r) {
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
        idx[static_cast<std::size_t>(r)] = t * B + r;
        rows[static_cast<std::size_t>(r)] = r;
    }
    std::vector<Tensor> h, s, mu, ls;
    for (const auto& st : fwd.seq.states) {
        h.push_back(detach(st.h));
        s.push_back(detach(st.s));
        mu.push_back(detach(st.s_dist.mean()));
        ls.push_back(detach(st.s_dist.log_std()));
    }
    ImaginationStart start;
    start.state.h = gather_rows(concat_rows(h), idx);
    start.state.s = gather_rows(concat_rows(s), idx);
    start.state.s_dist = DiagGaussian(gather_rows(concat_rows(mu), idx), gather_rows(concat_rows(ls), idx));
    start.z = gather_rows(detach(fwd.z), idx);
    start.e_v = gather_rows(detach(fwd.e_v), idx);
    for (const auto& g : fwd.gates) start.gates.push_back(detach(g));
    return start;
}

Trainer::Trainer(Agent& agent, const toy::Dataset& data, const PromptRegistry& prompts, std::uint64_t seed)
    : agent_(agent),
      data_(data),
      prompts_(prompts),
      model_opt_(agent.model.all(), agent.cfg.adam),
      policy_opt_(agent.behavior.with_prefix("policy."), agent.cfg.adam),
      critic_opt_(agent.behavior.with_prefix("critic."), agent.cfg.adam),
      batch_rng_(Rng(seed).derive(101)),
      model_rng_(Rng(seed).derive(102)),
      behavior_rng_(Rng(seed).derive(103)) {}

StepMetrics Trainer::model_update(const BatchForward& fwd, bool log_grad_norms) {
    StepMetrics m;
    m.step = step_;
    TotalLoss tl = total_loss(agent_, fwd, model_rng_);
    Tensor objective = tl.total;
    if (agent_.cfg.reward_fit) {
        Tensor fit = reward_fit_loss(agent_, fwd);
        if (fit.defined()) {
            m.reward_fit = fit.item();
            if (!std::isfinite(m.reward_fit)) throw std::runtime_error("reward fit loss is not finite");
            objective = objective + fit;
        }
    }
    m.total = tl.total.item();
    m.wm = tl.wm_value;
    m.wm_dynamics = tl.wm.defined() ? tl.wm_parts.dynamics.item() : 0.0;
    m.wm_reconstruction = tl.wm.defined() ? tl.wm_parts.reconstruction.item() : 0.0;
    m.mllm = tl.mllm_value;
    m.jbo = tl.jbo_value;

    const auto& params = model_opt_.params();
    if (log_grad_norms) {
        const LossWeights& w = agent_.cfg.weights;
        auto term_norm = [&](const Tensor& term, double lambda) {
            if (!term.defined() || !term.requires_grad()) return 0.0;
            model_opt_.zero_grad();
            scale(term, lambda).backward();
            return global_grad_norm(params);
        };
        m.grad_norm_wm = term_norm(tl.wm, w.lambda_wm);
        m.grad_norm_mllm = term_norm(tl.mllm, w.lambda_mllm);
        m.grad_norm_jbo = term_norm(tl.jbo, w.lambda_jbo);
    }
    model_opt_.zero_grad();
    if (objective.requires_grad()) objective.backward();
    m.grad_norm = model_opt_.step();
    return m;
}

StepMetrics Trainer::model_step(bool log_grad_norms) {
    toy::SequenceBatch batch = toy::sample_batch(data_, agent_.cfg.batch, agent_.cfg.seq_len, batch_rng_,
                                                 agent_.cfg.dims.window);
    const Matrix bags = prompt_bags(batch_prompts(batch, prompts_), agent_.cfg.dims.hash_buckets);
    BatchForward fwd = forward_batch(agent_, batch, bags, model_rng_);
    StepMetrics m = model_update(fwd, log_grad_norms);
    m.phase = 1;
    ++step_;
    return m;
}

StepMetrics Trainer::alternating_step(bool log_grad_norms) {
    toy::SequenceBatch batch = toy::sample_batch(data_, agent_.cfg.batch, agent_.cfg.seq_len, batch_rng_,
                                                 agent_.cfg.dims.window);
    const Matrix bags = prompt_bags(batch_prompts(batch, prompts_), agent_.cfg.dims.hash_buckets);
    BatchForward fwd = forward_batch(agent_, batch, bags, model_rng_);
    StepMetrics m = model_update(fwd, log_grad_norms);
    m.phase = 2;
    ImaginationStart start = behavior_start(fwd, behavior_rng_);
    m.behavior = behavior_update(agent_.behavior_models(), start, detach(fwd.tau), agent_.model.all(), policy_opt_,
                                 critic_opt_, agent_.cfg.behavior, behavior_rng_);
    m.has_behavior = true;
    ++step_;
    return m;
}

void Trainer::run(int pretrain_steps, int behavior_steps, int log_every,
                  const std::function<void(const StepMetrics&)>& on_step) {
    if (pretrain_steps < 0 || behavior_steps < 0) throw std::invalid_argument("trainer: negative step count");
    auto is_log = [&](int s) { return log_every > 0 && s % log_every == 0; };
    for (int i = 0; i < pretrain_steps; ++i) {
        StepMetrics m = model_step(is_log(step_));
        if (on_step) on_step(m);
    }
    for (int i = 0; i < behavior_steps; ++i) {
        StepMetrics m = alternating_step(is_log(step_));
        if (on_step) on_step(m);
    }
}

}  // namespace wmb
