#include "wmb/harness/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "wmb/harness/format.hpp"
#include "wmb/io.hpp"

namespace wmb::harness {

std::string to_string(Rung r) {
    switch (r) {
        case Rung::Base: return "base";
        case Rung::Mllm: return "+mllm";
        case Rung::Tamf: return "+tamf";
        case Rung::Jbo: return "+jbo";
    }
    return "?";
}

Rung rung_from_string(const std::string& s) {
    for (Rung r : all_rungs())
        if (to_string(r) == s || rung_slug(r) == s) return r;
    throw std::invalid_argument("unknown rung '" + s + "' (expected base, +mllm, +tamf or +jbo)");
}

const std::vector<Rung>& all_rungs() {
    static const std::vector<Rung> rungs = {Rung::Base, Rung::Mllm, Rung::Tamf, Rung::Jbo};
    return rungs;
}

std::string rung_slug(Rung r) {
    const std::string s = to_string(r);
    return s[0] == '+' ? s.substr(1) : s;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("empty list entry in '" + v + "'");
        out.push_back(item);
    }
    if (out.empty()) throw std::invalid_argument("empty list");
    return out;
}

std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
    return out;
}

long long parse_int(const std::string& v) {
    std::size_t pos = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw std::invalid_argument("'" + v + "' is not an integer");
    return x;
}

int parse_i32(const std::string& v) {
    const long long x = parse_int(v);
    if (x < -2147483647LL || x > 2147483647LL) throw std::invalid_argument("'" + v + "' is out of range");
    return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] != '-') x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw std::invalid_argument("'" + v + "' is not a non-negative integer");
    return x;
}

double parse_double(const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw std::invalid_argument("'" + v + "' is not a number");
    return x;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("'" + v + "' is not a boolean (true or false)");
}

struct Field {
    const char* name;
    const char* doc;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define INT_FIELD(key, member, doc)                                                              \
    Field {                                                                                      \
        key, doc, [](const ExperimentConfig& c) { return std::to_string(c.member); },            \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_i32(v); }           \
    }
#define U64_FIELD(key, member, doc)                                                              \
    Field {                                                                                      \
        key, doc, [](const ExperimentConfig& c) { return std::to_string(c.member); },            \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_u64(v); }           \
    }
#define DOUBLE_FIELD(key, member, doc)                                                           \
    Field {                                                                                      \
        key, doc, [](const ExperimentConfig& c) { return fmt_double(c.member); },                \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(v); }        \
    }
#define BOOL_FIELD(key, member, doc)                                                             \
    Field {                                                                                      \
        key, doc, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(v); }          \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        U64_FIELD("seed", seed, "training seed (first of the seed range)"),
        INT_FIELD("n_seeds", n_seeds, "seeds per cell for ablate and transfer"),
        Field{"embodiments_train", "comma-separated embodiments whose data trains the agent",
              [](const ExperimentConfig& c) { return join(c.embodiments_train); },
              [](ExperimentConfig& c, const std::string& v) { c.embodiments_train = split_list(v); }},
        Field{"embodiments_eval", "comma-separated embodiments to evaluate on",
              [](const ExperimentConfig& c) { return join(c.embodiments_eval); },
              [](ExperimentConfig& c, const std::string& v) { c.embodiments_eval = split_list(v); }},
        Field{"tasks", "comma-separated tasks (stand, walk, run)",
              [](const ExperimentConfig& c) {
                  std::vector<std::string> names;
                  for (auto t : c.tasks) names.push_back(toy::to_string(t));
                  return join(names);
              },
              [](ExperimentConfig& c, const std::string& v) {
                  c.tasks.clear();
                  for (const auto& n : split_list(v)) c.tasks.push_back(toy::task_id_from_string(n));
              }},
        INT_FIELD("episodes", episodes, "offline episodes collected per embodiment"),
        U64_FIELD("data_seed", data_seed, "seed of the offline collection"),
        INT_FIELD("eval_episodes", eval_episodes, "evaluation episodes per (embodiment, task)"),
        U64_FIELD("eval_seed", eval_seed, "seed of evaluation rollouts"),
        U64_FIELD("reference_seed", reference_seed, "seed of the random / expert reference rollouts"),
        DOUBLE_FIELD("eval_noise_std", eval_noise_std, "velocity noise during evaluation"),
        INT_FIELD("pretrain_steps", pretrain_steps, "phase 1 steps (joint objective only)"),
        INT_FIELD("behavior_steps", behavior_steps, "phase 2 steps (model and behavior alternating)"),
        INT_FIELD("log_every", log_every, "metrics CSV row interval in steps"),
        Field{"rung", "ablation rung: base, +mllm, +tamf or +jbo (the full model)",
              [](const ExperimentConfig& c) { return to_string(c.rung); },
              [](ExperimentConfig& c, const std::string& v) { c.rung = rung_from_string(v); }},
        Field{"fusion", "fusion override: auto (follows the rung), tamf or additive",
              [](const ExperimentConfig& c) {
                  switch (c.fusion) {
                      case FusionChoice::Tamf: return std::string("tamf");
                      case FusionChoice::Additive: return std::string("additive");
                      default: return std::string("auto");
                  }
              },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v == "auto")
                      c.fusion = FusionChoice::Auto;
                  else if (v == "tamf")
                      c.fusion = FusionChoice::Tamf;
                  else if (v == "additive")
                      c.fusion = FusionChoice::Additive;
                  else
                      throw std::invalid_argument("'" + v + "' is not auto, tamf or additive");
              }},
        DOUBLE_FIELD("lambda_wm", agent.weights.lambda_wm, "weight of the world-model loss"),
        DOUBLE_FIELD("lambda_mllm", agent.weights.lambda_mllm, "weight of the semantic loss (rungs >= +mllm)"),
        DOUBLE_FIELD("lambda_jbo", agent.weights.lambda_jbo, "weight of the alignment loss (rung +jbo)"),
        DOUBLE_FIELD("gamma", agent.weights.gamma, "discount for returns and the alignment loss"),
        DOUBLE_FIELD("free_bits", agent.wm.free_bits, "per-step KL floor in nats"),
        BOOL_FIELD("kl_balance", agent.wm.kl_balance, "split the KL into prior / posterior parts"),
        INT_FIELD("horizon", agent.behavior.horizon, "imagination horizon"),
        Field{"ev_mode", "semantic embedding during imagination: decoded or frozen",
              [](const ExperimentConfig& c) {
                  return std::string(c.agent.behavior.ev_mode == ImaginationEv::Decoded ? "decoded" : "frozen");
              },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v == "decoded")
                      c.agent.behavior.ev_mode = ImaginationEv::Decoded;
                  else if (v == "frozen")
                      c.agent.behavior.ev_mode = ImaginationEv::FrozenLast;
                  else
                      throw std::invalid_argument("'" + v + "' is not decoded or frozen");
              }},
        BOOL_FIELD("text_sampling", agent.behavior.text_sampling, "sample (rather than take the mean of) text latents"),
        BOOL_FIELD("reward_fit", agent.reward_fit, "fit the text imagination to demo sequences"),
        Field{"reward_fit_source", "sequences for the reward fit: demos or all",
              [](const ExperimentConfig& c) {
                  return std::string(c.agent.reward_fit_source == RewardFitSource::Demos ? "demos" : "all");
              },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v == "demos")
                      c.agent.reward_fit_source = RewardFitSource::Demos;
                  else if (v == "all")
                      c.agent.reward_fit_source = RewardFitSource::All;
                  else
                      throw std::invalid_argument("'" + v + "' is not demos or all");
              }},
        DOUBLE_FIELD("lr", agent.adam.lr, "Adam learning rate"),
        DOUBLE_FIELD("clip_norm", agent.adam.clip_norm, "global gradient-norm clip"),
        INT_FIELD("batch", agent.batch, "sequences per batch"),
        INT_FIELD("seq_len", agent.seq_len, "steps per sequence"),
        INT_FIELD("d_tau", agent.dims.d_tau, "task embedding width"),
        INT_FIELD("d_m", agent.dims.d_m, "semantic embedding width"),
        INT_FIELD("d_z", agent.dims.d_z, "fused latent width"),
        INT_FIELD("d_h", agent.dims.d_h, "recurrent state width"),
        INT_FIELD("d_s", agent.dims.d_s, "stochastic state width"),
        INT_FIELD("tamf_layers", agent.dims.tamf_layers, "gated fusion layers"),
        INT_FIELD("d_adapter", agent.dims.d_adapter, "expert adapter width"),
        Field{"prompts", "prompt registry file; empty for the built-in prompts",
              [](const ExperimentConfig& c) { return c.prompts; },
              [](ExperimentConfig& c, const std::string& v) { c.prompts = v; }},
        Field{"output_dir", "directory for datasets, runs and tables",
              [](const ExperimentConfig& c) { return c.output_dir.string(); },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v.empty()) throw std::invalid_argument("output_dir must not be empty");
                  c.output_dir = v;
              }},
    };
    return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
    if (n_seeds < 1) fail("n_seeds must be >= 1");
    if (episodes < 1) fail("episodes must be >= 1");
    if (eval_episodes < 1) fail("eval_episodes must be >= 1");
    if (!(eval_noise_std >= 0.0)) fail("eval_noise_std must be >= 0");
    if (pretrain_steps < 0 || behavior_steps < 0) fail("step counts must be >= 0");
    if (log_every < 1) fail("log_every must be >= 1");
    if (tasks.empty()) fail("no tasks");
    if (std::set<toy::TaskId>(tasks.begin(), tasks.end()).size() != tasks.size()) fail("duplicate task");
    if (embodiments_train.empty() || embodiments_eval.empty()) fail("embodiment lists must not be empty");
    const toy::Embodiment& first = toy::embodiment_by_name(embodiments_train.front());
    for (const auto* list : {&embodiments_train, &embodiments_eval})
        for (const auto& name : *list) {
            const toy::Embodiment& e = toy::embodiment_by_name(name);
            if (e.obs_dim() != first.obs_dim() || e.act_dim() != first.act_dim())
                fail("embodiment '" + name + "' has obs/act dims " + std::to_string(e.obs_dim()) + "/" +
                     std::to_string(e.act_dim()) + " but '" + first.name + "' has " +
                     std::to_string(first.obs_dim()) + "/" + std::to_string(first.act_dim()));
        }
    agent.weights.validate();
    if (agent.behavior.horizon < 1) fail("horizon must be >= 1");
    if (agent.batch < 1 || agent.seq_len < 2) fail("batch >= 1 and seq_len >= 2 required");
    if (!(agent.adam.lr > 0.0) || !(agent.adam.clip_norm > 0.0)) fail("lr and clip_norm must be positive");
    if (!(agent.wm.free_bits >= 0.0)) fail("free_bits must be >= 0");
    const ModelDims& d = agent.dims;
    for (int v : {d.d_tau, d.d_m, d.d_z, d.d_h, d.d_s, d.tamf_layers, d.d_adapter})
        if (v < 1) fail("model widths and layer count must be >= 1");
    if (toy::kEpisodeLength < agent.seq_len) fail("seq_len exceeds the episode length");
    // Merged datasets keep the collector pattern (one demo in four) only in whole blocks.
    if (embodiments_train.size() > 1 && episodes % 4 != 0)
        fail("episodes must be a multiple of 4 when training on several embodiments");
}

AgentConfig ExperimentConfig::effective_agent() const {
    AgentConfig a = agent;
    const toy::Embodiment& e = toy::embodiment_by_name(embodiments_train.front());
    a.dims.obs_dim = e.obs_dim();
    a.dims.act_dim = e.act_dim();
    a.behavior.gamma = a.weights.gamma;
    a.use_tamf = rung == Rung::Tamf || rung == Rung::Jbo;
    if (fusion != FusionChoice::Auto) a.use_tamf = fusion == FusionChoice::Tamf;
    if (rung == Rung::Base) a.weights.lambda_mllm = 0.0;
    if (rung != Rung::Jbo) a.weights.lambda_jbo = 0.0;
    a.behavior.alignment_weight = rung == Rung::Jbo ? a.weights.lambda_jbo : 0.0;
    return a;
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(*this) + "\n";
    return out;
}

std::string ExperimentConfig::hash() const {
    const std::string t = to_text();
    return io::hex64(io::fnv1a64(reinterpret_cast<const std::uint8_t*>(t.data()), t.size()));
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    int lineno = 0;
    for (std::string raw; std::getline(in, raw);) {
        ++lineno;
        const auto hash_pos = raw.find('#');
        const std::string line = trim(hash_pos == std::string::npos ? raw : raw.substr(0, hash_pos));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.name) field = &f;
        if (!field) throw std::invalid_argument(where + "unknown key '" + key + "'");
        if (!seen.insert(key).second) throw std::invalid_argument(where + "key '" + key + "' given twice");
        try {
            field->set(cfg, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(where + key + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::string config_schema() {
    const ExperimentConfig defaults;
    std::ostringstream os;
    for (const auto& f : fields()) os << f.name << " = " << f.get(defaults) << "    # " << f.doc << "\n";
    return os.str();
}

}  // namespace wmb::harness
