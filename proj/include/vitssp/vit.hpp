#pragma once

#include <string>
#include <vector>

#include "vitssp/nn.hpp"

namespace vitssp {

struct ViTConfig {
    int64_t image_size = 28;
    int64_t patch_size = 7;
    int64_t in_channels = 1;
    int64_t embed_dim = 768;
    int64_t depth = 12;
    int64_t num_heads = 12;
    int64_t mlp_ratio = 4;
    double drop_rate = 0.0;

    void validate() const;
    int64_t num_patches() const;
    int64_t tokens() const { return num_patches() + 1; }
    int64_t head_dim() const { return embed_dim / num_heads; }
    int64_t patch_len() const { return in_channels * patch_size * patch_size; }
    // Exact trainable parameter count of a model built from this config.
    int64_t parameter_count() const;

    static ViTConfig preset(const std::string& name);
};

struct AttentionBlock {
    LayerNorm ln1, ln2;
    Linear qkv, proj, fc1, fc2;
    Dropout drop;
    int64_t dim = 0, heads = 0;
    bool keep_attn = false;  // stash last_attn (detached) for inspection
    Tensor last_attn;        // [n, heads, tokens, tokens]

    AttentionBlock() = default;
    AttentionBlock(const ViTConfig& cfg, Rng& rng, DType dt);
    Tensor forward(const Tensor& x, const Fwd& ctx);  // [n, T, D] -> [n, T, D]
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

// Pre-norm encoder over non-overlapping patches plus a learned class token;
// forward yields the normalized class-token embedding.
struct ViTModel {
    ViTConfig cfg;
    Linear patch_proj;
    Tensor cls_token;  // [1, 1, D]
    Tensor pos_embed;  // [1, T, D]
    std::vector<AttentionBlock> blocks;
    LayerNorm norm;
    Dropout pos_drop;

    ViTModel() = default;
    ViTModel(const ViTConfig& config, Rng& rng, DType dt = default_dtype());
    Tensor forward(const Tensor& images, const Fwd& ctx);  // [n,C,H,W] -> [n,D]
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
    void set_keep_attn(bool keep);
};

}  // namespace vitssp
