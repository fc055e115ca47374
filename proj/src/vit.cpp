#include "vitssp/vit.hpp"

#include <cmath>

namespace vitssp {

void ViTConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || in_channels <= 0 || embed_dim <= 0 ||
        depth <= 0 || num_heads <= 0 || mlp_ratio <= 0)
        throw ConfigError("vit: all dimensions must be positive");
    if (image_size % patch_size != 0)
        throw ConfigError("vit: image size " + std::to_string(image_size) +
                          " is not a multiple of patch size " + std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
        throw ConfigError("vit: embed dim " + std::to_string(embed_dim) +
                          " is not divisible by " + std::to_string(num_heads) + " heads");
    if (drop_rate < 0.0 || drop_rate >= 1.0)
        throw ConfigError("vit: drop rate must be in [0,1)");
}

int64_t ViTConfig::num_patches() const {
    const int64_t g = image_size / patch_size;
    return g * g;
}

int64_t ViTConfig::parameter_count() const {
    const int64_t d = embed_dim, r = mlp_ratio;
    const int64_t embed = (patch_len() + 1) * d;        // patch projection
    const int64_t tok = d + tokens() * d;               // cls + positional
    const int64_t block = (4 + 2 * r) * d * d + (9 + r) * d;
    return embed + tok + depth * block + 2 * d;         // + final norm
}

ViTConfig ViTConfig::preset(const std::string& name) {
    ViTConfig cfg;
    if (name == "vit-base") {
        cfg.embed_dim = 768;
        cfg.depth = 12;
        cfg.num_heads = 12;
    } else if (name == "vit-desk") {
        cfg.embed_dim = 64;
        cfg.depth = 2;
        cfg.num_heads = 4;
    } else {
        throw ConfigError("unknown model preset '" + name + "'");
    }
    return cfg;
}

AttentionBlock::AttentionBlock(const ViTConfig& cfg, Rng& rng, DType dt)
    : ln1(cfg.embed_dim, dt),
      ln2(cfg.embed_dim, dt),
      qkv(cfg.embed_dim, 3 * cfg.embed_dim, rng, dt),
      proj(cfg.embed_dim, cfg.embed_dim, rng, dt),
      fc1(cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim, rng, dt),
      fc2(cfg.mlp_ratio * cfg.embed_dim, cfg.embed_dim, rng, dt),
      drop{cfg.drop_rate},
      dim(cfg.embed_dim),
      heads(cfg.num_heads) {}

Tensor AttentionBlock::forward(const Tensor& x, const Fwd& ctx) {
    const int64_t n = x.dim(0), t = x.dim(1), dh = dim / heads;

    Tensor h = ln1.forward(x);
    Tensor qkv_all = qkv.forward(h);  // [n, t, 3d]
    auto to_heads = [&](Tensor part) {
        part = reshape(part, {n, t, heads, dh});
        part = permute(part, {0, 2, 1, 3});  // [n, heads, t, dh]
        return reshape(part, {n * heads, t, dh});
    };
    Tensor q = to_heads(slice(qkv_all, 2, 0, dim));
    Tensor k = to_heads(slice(qkv_all, 2, dim, dim));
    Tensor v = to_heads(slice(qkv_all, 2, 2 * dim, dim));

    Tensor scores = mul_scalar(bmm(q, permute(k, {0, 2, 1})),
                               1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(scores);  // [n*heads, t, t]
    if (keep_attn) last_attn = reshape(detach(attn), {n, heads, t, t});

    Tensor mix = bmm(attn, v);  // [n*heads, t, dh]
    mix = reshape(mix, {n, heads, t, dh});
    mix = permute(mix, {0, 2, 1, 3});
    mix = reshape(mix, {n, t, dim});
    Tensor out = add(x, drop.forward(proj.forward(mix), ctx));

    Tensor m = fc2.forward(gelu(fc1.forward(ln2.forward(out))));
    return add(out, drop.forward(m, ctx));
}

void AttentionBlock::collect(const std::string& prefix, NamedTensors& params,
                             NamedTensors& buffers) {
    ln1.collect(prefix + ".ln1", params, buffers);
    qkv.collect(prefix + ".qkv", params, buffers);
    proj.collect(prefix + ".proj", params, buffers);
    ln2.collect(prefix + ".ln2", params, buffers);
    fc1.collect(prefix + ".fc1", params, buffers);
    fc2.collect(prefix + ".fc2", params, buffers);
}

ViTModel::ViTModel(const ViTConfig& config, Rng& rng, DType dt) : cfg(config) {
    cfg.validate();
    patch_proj = Linear(cfg.patch_len(), cfg.embed_dim, rng, dt);
    cls_token = Tensor::trunc_normal({1, 1, cfg.embed_dim}, rng, 0.02, dt);
    cls_token.set_requires_grad(true);
    pos_embed = Tensor::trunc_normal({1, cfg.tokens(), cfg.embed_dim}, rng, 0.02, dt);
    pos_embed.set_requires_grad(true);
    blocks.reserve(static_cast<size_t>(cfg.depth));
    for (int64_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(cfg, rng, dt);
    norm = LayerNorm(cfg.embed_dim, dt);
    pos_drop = Dropout{cfg.drop_rate};
}

Tensor ViTModel::forward(const Tensor& images, const Fwd& ctx) {
    if (images.ndim() != 4 || images.dim(1) != cfg.in_channels ||
        images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
        throw ShapeError("vit: expected [n," + std::to_string(cfg.in_channels) + "," +
                         std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "], got " +
                         shape_str(images.shape()));
    const int64_t n = images.dim(0);

    Tensor x = patchify(images, cfg.patch_size);
    x = patch_proj.forward(x);  // [n, patches, d]
    Tensor cls = broadcast_to(cls_token, {n, 1, cfg.embed_dim});
    x = concat({cls, x}, 1);    // [n, tokens, d]
    x = add(x, pos_embed);
    x = pos_drop.forward(x, ctx);
    for (auto& block : blocks) x = block.forward(x, ctx);
    x = norm.forward(x);
    return reshape(slice(x, 1, 0, 1), {n, cfg.embed_dim});
}

void ViTModel::collect(const std::string& prefix, NamedTensors& params,
                       NamedTensors& buffers) {
    patch_proj.collect(prefix + ".patch_proj", params, buffers);
    params.add(prefix + ".cls_token", cls_token);
    params.add(prefix + ".pos_embed", pos_embed);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".blocks." + std::to_string(i), params, buffers);
    norm.collect(prefix + ".norm", params, buffers);
}

void ViTModel::set_keep_attn(bool keep) {
    for (auto& block : blocks) block.keep_attn = keep;
}

}  // namespace vitssp
