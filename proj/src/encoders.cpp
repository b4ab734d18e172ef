#include "wmb/encoders.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wmb/io.hpp"

namespace wmb {

namespace {

constexpr const char* kBuiltinPrompts =
    "light/stand\tstand still upright\n"
    "light/walk\twalk forward at a steady pace\n"
    "light/run\trun forward fast\n"
    "heavy/stand\tstand still upright\n"
    "heavy/walk\twalk forward at a steady pace\n"
    "heavy/run\trun forward fast\n"
    "segmented/stand\tstand still upright\n"
    "segmented/walk\twalk forward at a steady pace\n"
    "segmented/run\trun forward fast\n"
    "springy/stand\tstand still upright\n"
    "springy/walk\twalk forward at a steady pace\n"
    "springy/run\trun forward fast\n";

}  // namespace

Matrix prompt_bag_of_words(const std::string& prompt, int buckets) {
    Matrix bag = Matrix::Zero(1, buckets);
    std::string token;
    int tokens = 0;
    auto flush = [&] {
        if (token.empty()) return;
        const auto h = io::fnv1a64(reinterpret_cast<const std::uint8_t*>(token.data()), token.size());
        bag(0, static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(buckets))) += 1.0;
        ++tokens;
        token.clear();
    };
    for (unsigned char c : prompt) {
        if (std::isalnum(c))
            token.push_back(static_cast<char>(std::tolower(c)));
        else
            flush();
    }
    flush();
    if (tokens == 0) throw std::invalid_argument("task encoder: empty prompt");
    return bag;
}

TaskEncoder TaskEncoder::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    TaskEncoder t;
    t.buckets = d.hash_buckets;
    t.hidden = Linear::create(ps, "task.hidden", d.hash_buckets, d.task_hidden, rng);
    t.out = Linear::create(ps, "task.out", d.task_hidden, d.d_tau, rng);
    return t;
}

Tensor TaskEncoder::operator()(const Tensor& bags) const {
    Tensor raw = out(gelu(hidden(bags)));
    return div(raw, sqrt(sum_cols(square(raw))));
}

Tensor TaskEncoder::encode(const std::string& prompt) const {
    return (*this)(Tensor(prompt_bag_of_words(prompt, buckets)));
}

StubMllm StubMllm::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    StubMllm m;
    m.window = d.window;
    m.obs_dim = d.obs_dim;
    m.frozen = Linear::create(ps, "mllm.frozen", d.window * d.obs_dim, d.mllm_hidden, rng, true);
    m.head_hidden = Linear::create(ps, "mllm.head_hidden", d.mllm_hidden, d.mllm_hidden, rng);
    m.head_out = Linear::create(ps, "mllm.head_out", d.mllm_hidden, d.d_m, rng);
    return m;
}

Tensor StubMllm::operator()(const Tensor& windows) const {
    if (windows.cols() != window * obs_dim)
        throw std::invalid_argument("stub encoder: window has " + std::to_string(windows.cols()) +
                                    " values, expected " + std::to_string(window) + " x " +
                                    std::to_string(obs_dim));
    return head_out(gelu(head_hidden(gelu(frozen(windows)))));
}

TaskMapper TaskMapper::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    return TaskMapper{Linear::create(ps, "map.affine", d.d_tau, d.d_z, rng)};
}

TextAligner TextAligner::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    TextAligner a;
    a.hidden = Linear::create(ps, "psi.hidden", d.d_tau, d.psi_hidden, rng);
    a.out = Linear::create(ps, "psi.out", d.psi_hidden, d.d_m, rng);
    return a;
}

LatentDecoder LatentDecoder::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    LatentDecoder dec;
    dec.ev_head = Linear::create(ps, "dec.ev_head", d.d_z, d.d_m, rng);
    dec.obs_head = Linear::create(ps, "dec.obs_head", d.d_z, d.obs_dim, rng);
    return dec;
}

PromptRegistry PromptRegistry::parse(const std::string& text) {
    PromptRegistry reg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
            throw std::runtime_error("prompt registry line " + std::to_string(lineno) +
                                     ": expected task_id<TAB>prompt");
        const std::string id = line.substr(0, tab);
        if (!reg.entries_.emplace(id, line.substr(tab + 1)).second)
            throw std::runtime_error("prompt registry line " + std::to_string(lineno) +
                                     ": duplicate task id '" + id + "'");
    }
    return reg;
}

PromptRegistry PromptRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prompt registry '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

PromptRegistry PromptRegistry::builtin() { return parse(kBuiltinPrompts); }

const std::string& PromptRegistry::prompt(const std::string& embodiment, const std::string& task) const {
    const auto it = entries_.find(embodiment + "/" + task);
    if (it == entries_.end())
        throw std::invalid_argument("no prompt registered for '" + embodiment + "/" + task + "'");
    return it->second;
}

}  // namespace wmb
