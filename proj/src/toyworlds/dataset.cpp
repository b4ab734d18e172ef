#include "wmb/toyworlds/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wmb/io.hpp"

namespace wmb::toy {

namespace {

constexpr char kMagic[4] = {'W', 'M', 'B', 'D'};
constexpr double kBangBangFlipProb = 0.1;

bool same_matrix(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

bool EpisodeRecord::operator==(const EpisodeRecord& o) const {
    return embodiment == o.embodiment && task == o.task && same_matrix(observations, o.observations) &&
           same_matrix(actions, o.actions) && true_rewards == o.true_rewards;
}

Collector collector_for(int index) {
    switch (index % 4) {
        case 0:
        case 1: return Collector::Random;
        case 2: return Collector::BangBang;
        default: return Collector::Proportional;
    }
}

EpisodeRecord run_episode(const Embodiment& e, const Task& tag_task, Collector c, Rng& rng,
                          int length, double noise_std) {
    EpisodeRecord rec;
    rec.embodiment = e.name;
    rec.task = tag_task.id;
    rec.observations.resize(length + 1, e.obs_dim());
    rec.actions.resize(length, e.act_dim());
    rec.true_rewards.resize(static_cast<std::size_t>(length));

    EnvState s = reset_state(e);
    auto obs = observe(s);
    for (int j = 0; j < e.obs_dim(); ++j) rec.observations(0, j) = obs[static_cast<std::size_t>(j)];

    std::vector<double> bang(static_cast<std::size_t>(e.act_dim()));
    for (auto& b : bang) b = rng.uniform() < 0.5 ? -1.0 : 1.0;

    for (int t = 0; t < length; ++t) {
        std::vector<double> a;
        switch (c) {
            case Collector::Random:
                a.resize(static_cast<std::size_t>(e.act_dim()));
                for (auto& v : a) v = rng.uniform(-1.0, 1.0);
                break;
            case Collector::BangBang:
                for (auto& b : bang)
                    if (rng.uniform() < kBangBangFlipProb) b = -b;
                a = bang;
                break;
            case Collector::Proportional:
                a = proportional_action(s, e, tag_task.target_speed);
                break;
        }
        auto step = env_step(s, a, e, rng, noise_std);
        s = std::move(step.state);
        for (int j = 0; j < e.act_dim(); ++j) rec.actions(t, j) = a[static_cast<std::size_t>(j)];
        for (int j = 0; j < e.obs_dim(); ++j)
            rec.observations(t + 1, j) = step.observation[static_cast<std::size_t>(j)];
        rec.true_rewards[static_cast<std::size_t>(t)] = true_reward(s, tag_task);
    }
    return rec;
}

Dataset collect_offline(const Embodiment& e, const std::vector<Task>& tasks, int n_episodes,
                        std::uint64_t seed, int length) {
    if (n_episodes < 1) throw std::invalid_argument("collect_offline: n_episodes must be >= 1");
    if (tasks.empty()) throw std::invalid_argument("collect_offline: no tasks");
    Dataset ds;
    ds.embodiment = e.name;
    ds.obs_dim = e.obs_dim();
    ds.act_dim = e.act_dim();
    ds.episode_length = length;
    ds.episodes.reserve(static_cast<std::size_t>(n_episodes));
    const Rng base(seed);
    std::size_t explore_tag = 0;
    std::size_t controller_tag = 0;
    for (int i = 0; i < n_episodes; ++i) {
        const Collector c = collector_for(i);
        const Task& task = c == Collector::Proportional ? tasks[controller_tag++ % tasks.size()]
                                                        : tasks[explore_tag++ % tasks.size()];
        Rng rng = base.derive(static_cast<std::uint64_t>(i));
        ds.episodes.push_back(run_episode(e, task, c, rng, length));
    }
    return ds;
}

std::vector<double> observation_window(const Matrix& observations, int t, int k) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(k * observations.cols()));
    for (int i = t - k + 1; i <= t; ++i) {
        const int row = std::max(i, 0);
        for (int j = 0; j < observations.cols(); ++j) out.push_back(observations(row, j));
    }
    return out;
}

SequenceBatch sample_batch(const Dataset& ds, int batch, int seq_len, Rng& rng, int window) {
    if (ds.episodes.empty()) throw std::invalid_argument("sample_batch: empty dataset");
    if (batch < 1 || seq_len < 2) throw std::invalid_argument("sample_batch: batch >= 1 and seq_len >= 2 required");
    SequenceBatch b;
    b.batch = batch;
    b.seq_len = seq_len;
    b.obs.assign(static_cast<std::size_t>(seq_len), Matrix(batch, ds.obs_dim));
    b.actions.assign(static_cast<std::size_t>(seq_len - 1), Matrix(batch, ds.act_dim));
    b.windows.assign(static_cast<std::size_t>(seq_len), Matrix(batch, window * ds.obs_dim));
    for (int r = 0; r < batch; ++r) {
        const int ep = static_cast<int>(rng.below(ds.episodes.size()));
        const EpisodeRecord& rec = ds.episodes[static_cast<std::size_t>(ep)];
        const int n_obs = static_cast<int>(rec.observations.rows());
        if (seq_len > n_obs)
            throw std::invalid_argument("sample_batch: seq_len " + std::to_string(seq_len) +
                                        " exceeds episode length " + std::to_string(n_obs));
        const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_obs - seq_len + 1)));
        for (int t = 0; t < seq_len; ++t) {
            b.obs[static_cast<std::size_t>(t)].row(r) = rec.observations.row(start + t);
            const auto w = observation_window(rec.observations, start + t, window);
            for (std::size_t j = 0; j < w.size(); ++j)
                b.windows[static_cast<std::size_t>(t)](r, static_cast<Eigen::Index>(j)) = w[j];
            if (t + 1 < seq_len) b.actions[static_cast<std::size_t>(t)].row(r) = rec.actions.row(start + t);
        }
        b.tasks.push_back(rec.task);
        b.embodiments.push_back(rec.embodiment);
        b.episode_index.push_back(ep);
        b.start.push_back(start);
    }
    return b;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    io::Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kDatasetSchemaVersion);
    w.u32(static_cast<std::uint32_t>(ds.obs_dim));
    w.u32(static_cast<std::uint32_t>(ds.act_dim));
    w.u32(static_cast<std::uint32_t>(ds.episode_length));
    w.u32(static_cast<std::uint32_t>(ds.episodes.size()));
    for (const auto& ep : ds.episodes) {
        if (ep.length() != ds.episode_length || ep.observations.cols() != ds.obs_dim ||
            ep.actions.cols() != ds.act_dim)
            throw std::invalid_argument("write_dataset: episode does not match dataset header");
        io::Writer body;
        body.str(ep.embodiment);
        body.str(to_string(ep.task));
        for (Eigen::Index i = 0; i < ep.observations.size(); ++i) body.f64(ep.observations.data()[i]);
        for (Eigen::Index i = 0; i < ep.actions.size(); ++i) body.f64(ep.actions.data()[i]);
        for (double r : ep.true_rewards) body.f64(r);
        w.u64(body.size());
        w.bytes(body.data().data(), body.size());
    }
    io::write_file(path.string(), w.data());
}

Dataset read_dataset(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path.string());
    io::Reader r(bytes.data(), bytes.size());
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (!std::equal(magic, magic + 4, kMagic))
        throw std::runtime_error("read_dataset: '" + path.string() + "' is not a dataset file");
    const auto version = r.u32();
    if (version != kDatasetSchemaVersion)
        throw std::runtime_error("read_dataset: unsupported schema version " + std::to_string(version));
    Dataset ds;
    ds.obs_dim = static_cast<int>(r.u32());
    ds.act_dim = static_cast<int>(r.u32());
    ds.episode_length = static_cast<int>(r.u32());
    const auto count = r.u32();
    const int T = ds.episode_length;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u64();
        const auto begin = r.offset();
        EpisodeRecord ep;
        ep.embodiment = r.str();
        ep.task = task_id_from_string(r.str());
        ep.observations.resize(T + 1, ds.obs_dim);
        ep.actions.resize(T, ds.act_dim);
        for (Eigen::Index k = 0; k < ep.observations.size(); ++k) ep.observations.data()[k] = r.f64();
        for (Eigen::Index k = 0; k < ep.actions.size(); ++k) ep.actions.data()[k] = r.f64();
        ep.true_rewards.resize(static_cast<std::size_t>(T));
        for (auto& v : ep.true_rewards) v = r.f64();
        if (r.offset() - begin != len)
            throw std::runtime_error("read_dataset: episode " + std::to_string(i) + " length prefix " +
                                     std::to_string(len) + " does not match its contents");
        if (ds.embodiment.empty()) ds.embodiment = ep.embodiment;
        ds.episodes.push_back(std::move(ep));
    }
    if (r.remaining() != 0)
        throw std::runtime_error("read_dataset: " + std::to_string(r.remaining()) + " trailing bytes");
    return ds;
}

std::string file_hash(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path.string());
    return io::hex64(io::fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace wmb::toy
