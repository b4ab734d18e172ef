#pragma once

// Task encoder, stub multimodal encoder, task-to-latent mapper, text-to-visual
// aligner and fused-latent decoder.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wmb/model_dims.hpp"
#include "wmb/numcore/nn.hpp"

namespace wmb {

/// Token-hash bag of words: lowercase alphanumeric tokens, FNV-1a into
/// `buckets` counters. Throws on an empty prompt.
Matrix prompt_bag_of_words(const std::string& prompt, int buckets);

/// Prompt -> unit-norm task embedding tau.
struct TaskEncoder {
    Linear hidden;
    Linear out;
    int buckets = 64;

    static TaskEncoder create(ParamSet& ps, const ModelDims& d, Rng& rng);
    /// bags [n, buckets] -> tau [n, d_tau]
    Tensor operator()(const Tensor& bags) const;
    Tensor encode(const std::string& prompt) const;
};

/// Stand-in for the pretrained video-language encoder: a frozen random first
/// layer followed by a trainable two-layer head.
struct StubMllm {
    Linear frozen;
    Linear head_hidden;
    Linear head_out;
    int window = 4;
    int obs_dim = 5;

    static StubMllm create(ParamSet& ps, const ModelDims& d, Rng& rng);
    /// windows [n, window * obs_dim] -> e_v [n, d_m]
    Tensor operator()(const Tensor& windows) const;
};

/// z_tau = f_map(tau)
struct TaskMapper {
    Linear map;
    static TaskMapper create(ParamSet& ps, const ModelDims& d, Rng& rng);
    Tensor operator()(const Tensor& tau) const { return map(tau); }
};

/// Predicts the semantic embedding from tau.
struct TextAligner {
    Linear hidden;
    Linear out;
    static TextAligner create(ParamSet& ps, const ModelDims& d, Rng& rng);
    Tensor operator()(const Tensor& tau) const { return out(gelu(hidden(tau))); }
};

/// Two heads on the fused latent: semantic embedding and observation.
struct LatentDecoder {
    Linear ev_head;
    Linear obs_head;
    static LatentDecoder create(ParamSet& ps, const ModelDims& d, Rng& rng);
    Tensor semantic(const Tensor& z) const { return ev_head(z); }
    Tensor observation(const Tensor& z) const { return obs_head(z); }
};

/// "task_id<TAB>prompt" lines; ids are "<embodiment>/<task>".
class PromptRegistry {
public:
    static PromptRegistry load(const std::filesystem::path& path);
    static PromptRegistry parse(const std::string& text);
    /// Built-in registry identical to data/prompts.tsv.
    static PromptRegistry builtin();

    const std::string& prompt(const std::string& embodiment, const std::string& task) const;
    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace wmb
