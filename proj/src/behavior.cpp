#include "wmb/behavior.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace wmb {

Policy Policy::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    Policy p;
    p.trunk = Linear::create(ps, "policy.trunk", d.d_z, d.policy_hidden, rng);
    p.mean_head = Linear::create(ps, "policy.mean", d.policy_hidden, d.act_dim, rng);
    p.log_std_head = Linear::create(ps, "policy.log_std", d.policy_hidden, d.act_dim, rng);
    return p;
}

DiagGaussian Policy::dist(const Tensor& z) const {
    Tensor h = gelu(trunk(z));
    return DiagGaussian::from_raw(mean_head(h), log_std_head(h));
}

namespace {

// tanh(15) is 1 - 2e-13, so squashed actions stay strictly inside (-1, 1).
constexpr double kPreSquashLimit = 15.0;

Tensor squash(const Tensor& u) { return tanh(clamp(u, -kPreSquashLimit, kPreSquashLimit)); }

}  // namespace

Tensor Policy::sample(const Tensor& z, Rng& rng) const { return squash(dist(z).sample(rng)); }

Tensor Policy::mode(const Tensor& z) const { return squash(mean_head(gelu(trunk(z)))); }

Policy Policy::detached() const {
    auto cut = [](const Linear& l) { return Linear{detach(l.weight), detach(l.bias)}; };
    return Policy{cut(trunk), cut(mean_head), cut(log_std_head)};
}

Critic Critic::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    Critic c;
    c.hidden = Linear::create(ps, "critic.hidden", d.d_z, d.critic_hidden, rng);
    c.out = Linear::create(ps, "critic.out", d.critic_hidden, 1, rng);
    return c;
}

TextImagination TextImagination::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    TextImagination t;
    t.d_z = d.d_z;
    t.hidden = Linear::create(ps, "text.hidden", d.d_z + d.act_dim, d.text_hidden, rng);
    t.out = Linear::create(ps, "text.out", d.text_hidden, 2 * d.d_z, rng);
    return t;
}

DiagGaussian TextImagination::operator()(const Tensor& z_tau, const Tensor& action) const {
    Tensor raw = out(gelu(hidden(concat_cols({z_tau, action}))));
    return DiagGaussian::from_raw(slice_cols(raw, 0, d_z), slice_cols(raw, d_z, 2 * d_z));
}

LatentLift LatentLift::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    return LatentLift{Linear::create(ps, "lift.map", d.d_s, d.d_z, rng)};
}

DiagGaussian lifted_wm_dist(const Tensor& z, const DiagGaussian& prior, const LatentLift& lift) {
    return DiagGaussian::from_raw(z, lift(prior.log_std()));
}

std::vector<DiagGaussian> text_rollout(const TaskMapper& map, const TextImagination& text, const Tensor& tau,
                                       const std::vector<Tensor>& actions, const TextRolloutOptions& opts) {
    if (opts.sample && opts.rng == nullptr) throw std::invalid_argument("text_rollout: sampling needs an rng");
    std::vector<DiagGaussian> out;
    out.reserve(actions.size() + 1);
    Tensor z0 = map(tau);
    out.emplace_back(z0, Tensor::constant(z0.rows(), z0.cols(), kLogStdMin));
    Tensor input = z0;
    for (const auto& a : actions) {
        if (a.rows() != input.rows())
            throw std::invalid_argument("text_rollout: action rows " + std::to_string(a.rows()) +
                                        " do not match task rows " + std::to_string(input.rows()));
        out.push_back(text(input, a));
        input = opts.sample ? out.back().sample(*opts.rng) : out.back().mean();
    }
    return out;
}

Tensor traj_alignment_kl(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text) {
    if (wm.size() != text.size() || wm.empty())
        throw std::invalid_argument("traj_alignment_kl: sequences have lengths " + std::to_string(wm.size()) +
                                    " and " + std::to_string(text.size()));
    Tensor total = mean(kl_diag_gaussian(wm[0], text[0]));
    for (std::size_t h = 1; h < wm.size(); ++h) total = total + mean(kl_diag_gaussian(wm[h], text[h]));
    return scale(total, 1.0 / static_cast<double>(wm.size()));
}

Tensor discounted_kl(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text, double gamma) {
    if (wm.size() != text.size() || wm.empty())
        throw std::invalid_argument("discounted KL: sequences have lengths " + std::to_string(wm.size()) +
                                    " and " + std::to_string(text.size()));
    Tensor total = mean(kl_diag_gaussian(wm[0], text[0]));
    double w = 1.0;
    for (std::size_t h = 1; h < wm.size(); ++h) {
        w *= gamma;
        total = total + scale(mean(kl_diag_gaussian(wm[h], text[h])), w);
    }
    return total;
}

CosineResult task_reward(const Tensor& z, const Tensor& z_tau_mean) { return cosine_sim(z, z_tau_mean); }

namespace {

std::string describe(const Matrix& m) {
    std::ostringstream os;
    os << "shape " << m.rows() << "x" << m.cols() << ", non-finite entries " << (m.array().isFinite() == false).count();
    const Matrix finite = m.array().isFinite().select(m, 0.0);
    os << ", max |finite| " << (finite.size() ? finite.cwiseAbs().maxCoeff() : 0.0);
    return os.str();
}

void check_step(const char* what, int step, const Tensor& x, const LatentState& state) {
    if (x.value().allFinite()) return;
    throw std::runtime_error(std::string("imagination: non-finite ") + what + " at step " + std::to_string(step) +
                             " (" + describe(x.value()) + "); h: " + describe(state.h.value()) +
                             "; s: " + describe(state.s.value()));
}

}  // namespace

ImaginedTrajectory rollout(const RolloutModels& m, const ImaginationStart& start, int horizon, Rng& rng,
                           ImaginationEv ev_mode, bool detach_actions) {
    if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
    ImaginedTrajectory traj;
    traj.z.push_back(start.z);
    traj.states.push_back(start.state);
    for (int h = 0; h < horizon; ++h) {
        const Tensor& z = traj.z.back();
        Tensor a = m.policy.sample(z, rng);
        if (detach_actions) a = detach(a);
        check_step("action", h, a, traj.states.back());
        ImagineStep st = m.wm.imagine(traj.states.back(), a, rng);
        Tensor ev = ev_mode == ImaginationEv::Decoded ? m.dec.semantic(z) : start.e_v;
        Tensor next = m.fusion(ev, st.state.features(), start.gates);
        check_step("fused latent", h + 1, next, st.state);
        traj.actions.push_back(a);
        traj.states.push_back(st.state);
        traj.priors.push_back(st.prior);
        traj.z.push_back(next);
    }
    return traj;
}

std::vector<Tensor> compute_returns(const std::vector<Tensor>& rewards, const Tensor& bootstrap, double gamma) {
    std::vector<Tensor> out(rewards.size());
    Tensor next = bootstrap;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        next = rewards[i] + scale(next, gamma);
        out[i] = next;
    }
    return out;
}

Tensor actor_loss(const std::vector<Tensor>& returns) {
    if (returns.empty()) throw std::invalid_argument("actor_loss: no returns");
    return neg(mean(returns[0]));
}

Tensor critic_loss(const Critic& critic, const std::vector<Tensor>& z, const std::vector<Tensor>& returns) {
    if (returns.empty() || z.size() < returns.size())
        throw std::invalid_argument("critic_loss: need a latent for every return");
    std::vector<Tensor> zs, targets;
    for (std::size_t h = 0; h < returns.size(); ++h) {
        zs.push_back(detach(z[h]));
        targets.push_back(detach(returns[h]));
    }
    return mean(square(critic(concat_rows(zs)) - concat_rows(targets)));
}

ImaginedRewards imagined_rewards(const BehaviorModels& m, const ImaginedTrajectory& traj, const Tensor& tau,
                                 const BehaviorConfig& cfg, Rng& rng) {
    ImaginedRewards out;
    TextRolloutOptions topts;
    topts.sample = cfg.text_sampling;
    topts.rng = &rng;
    out.text = text_rollout(m.map, m.text, tau, traj.actions, topts);
    for (int h = 0; h < traj.horizon(); ++h) {
        CosineResult r = task_reward(traj.z[static_cast<std::size_t>(h + 1)],
                                     out.text[static_cast<std::size_t>(h + 1)].mean());
        out.degenerate += r.degenerate_rows;
        out.rewards.push_back(r.value);
    }
    return out;
}

BehaviorStats behavior_update(const BehaviorModels& m, const ImaginationStart& start, const Tensor& tau,
                              const std::vector<Parameter>& frozen, Adam& policy_opt, Adam& critic_opt,
                              const BehaviorConfig& cfg, Rng& rng) {
    BehaviorStats stats;
    ImaginedTrajectory traj;
    std::vector<Tensor> returns;
    {
        FreezeGuard freeze_model(frozen);
        FreezeGuard freeze_critic(critic_opt.params());
        traj = rollout(RolloutModels{m.wm, m.fusion, m.dec, m.policy}, start, cfg.horizon, rng, cfg.ev_mode);
        ImaginedRewards rw = imagined_rewards(m, traj, tau, cfg, rng);
        returns = compute_returns(rw.rewards, m.critic(traj.z.back()), cfg.gamma);
        Tensor loss = actor_loss(returns);
        if (cfg.alignment_weight > 0.0) {
            std::vector<DiagGaussian> wm_side, text_side;
            for (int h = 0; h < traj.horizon(); ++h) {
                wm_side.push_back(lifted_wm_dist(traj.z[static_cast<std::size_t>(h + 1)],
                                                 traj.priors[static_cast<std::size_t>(h)], m.lift));
                text_side.push_back(rw.text[static_cast<std::size_t>(h + 1)]);
            }
            Tensor kl = discounted_kl(wm_side, text_side, cfg.gamma);
            stats.alignment_kl = kl.item();
            loss = loss + scale(kl, cfg.alignment_weight);
        }
        double reward_sum = 0.0;
        for (const auto& r : rw.rewards) reward_sum += r.value().mean();
        stats.mean_reward = reward_sum / static_cast<double>(rw.rewards.size());
        stats.mean_return = returns[0].value().mean();
        stats.degenerate_rewards = rw.degenerate;
        stats.actor_loss = loss.item();
        if (!std::isfinite(stats.actor_loss)) throw std::runtime_error("behavior: non-finite actor loss");
        policy_opt.zero_grad();
        loss.backward();
        policy_opt.step();
    }
    Tensor closs = critic_loss(m.critic, traj.z, returns);
    stats.critic_loss = closs.item();
    if (!std::isfinite(stats.critic_loss)) throw std::runtime_error("behavior: non-finite critic loss");
    critic_opt.zero_grad();
    closs.backward();
    critic_opt.step();
    return stats;
}

}  // namespace wmb
