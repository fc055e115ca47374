#include <cmath>
#include <vector>

#include "doctest.h"
#include "vitssp/vit.hpp"

using namespace vitssp;

TEST_CASE("config validation") {
    ViTConfig cfg = ViTConfig::preset("vit-desk");
    CHECK_NOTHROW(cfg.validate());
    cfg.embed_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ViTConfig::preset("vit-desk");
    cfg.patch_size = 5;  // 28 % 5 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ViTConfig::preset("vit-desk");
    cfg.num_heads = 5;  // 64 % 5 != 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(ViTConfig::preset("vit-giant"), ConfigError);
}

TEST_CASE("28x28 with patch 7 gives 16 patches of length 49") {
    ViTConfig cfg = ViTConfig::preset("vit-desk");
    CHECK(cfg.num_patches() == 16);
    CHECK(cfg.tokens() == 17);
    CHECK(cfg.patch_len() == 49);

    Tensor images = Tensor::zeros({3, 1, 28, 28});
    Tensor p = patchify(images, 7);
    CHECK(p.shape() == Shape{3, 16, 49});
}

TEST_CASE("patchify rejects indivisible sizes") {
    Tensor images = Tensor::zeros({1, 1, 28, 28});
    CHECK_THROWS_AS(patchify(images, 5), ShapeError);
}

TEST_CASE("parameter_count closed form equals the collected tensor total") {
    for (const char* name : {"vit-desk", "vit-base"}) {
        ViTConfig cfg = ViTConfig::preset(name);
        if (cfg.embed_dim > 64) {
            // keep the big preset cheap to instantiate
            cfg.depth = 1;
        }
        Rng rng(1);
        ViTModel model(cfg, rng, DType::F64);
        NamedTensors params, buffers;
        model.collect("m", params, buffers);
        CHECK(params.total_numel() == cfg.parameter_count());
        CHECK(buffers.items.empty());
    }
}

TEST_CASE("desk preset parameter count is the documented constant") {
    CHECK(ViTConfig::preset("vit-desk").parameter_count() == 104448);
}

TEST_CASE("forward shape and eval determinism") {
    Rng rng(2);
    ViTModel model(ViTConfig::preset("vit-desk"), rng, DType::F64);
    Rng drng(3);
    Tensor images = Tensor::randn({4, 1, 28, 28}, drng);
    Fwd ctx{false, nullptr};
    Tensor a = model.forward(images, ctx);
    Tensor b = model.forward(images, ctx);
    CHECK(a.shape() == Shape{4, 64});
    CHECK(a.to_vector() == b.to_vector());
}

TEST_CASE("forward rejects mismatched images") {
    Rng rng(4);
    ViTModel model(ViTConfig::preset("vit-desk"), rng, DType::F64);
    Fwd ctx{false, nullptr};
    CHECK_THROWS_AS(model.forward(Tensor::zeros({2, 1, 14, 14}), ctx), ShapeError);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({2, 3, 28, 28}), ctx), ShapeError);
}

TEST_CASE("attention rows are a probability distribution") {
    Rng rng(5);
    ViTModel model(ViTConfig::preset("vit-desk"), rng, DType::F64);
    model.set_keep_attn(true);
    Rng drng(6);
    Tensor images = Tensor::randn({2, 1, 28, 28}, drng);
    Fwd ctx{false, nullptr};
    model.forward(images, ctx);
    const Tensor& attn = model.blocks.front().last_attn;
    REQUIRE(attn.defined());
    CHECK(attn.shape() == Shape{2, 4, 17, 17});
    const auto v = attn.to_vector();
    for (int64_t row = 0; row < 2 * 4 * 17; ++row) {
        double s = 0.0;
        for (int64_t j = 0; j < 17; ++j) {
            const double p = v[static_cast<size_t>(row * 17 + j)];
            CHECK(p >= 0.0);
            s += p;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("positions matter: permuting patches changes the embedding") {
    Rng rng(7);
    ViTModel model(ViTConfig::preset("vit-desk"), rng, DType::F64);
    Rng drng(8);
    Tensor images = Tensor::randn({1, 1, 28, 28}, drng);
    // Flip the image horizontally by building a mirrored copy.
    Tensor flipped = Tensor::zeros({1, 1, 28, 28});
    for (int64_t y = 0; y < 28; ++y)
        for (int64_t x = 0; x < 28; ++x)
            flipped.set(y * 28 + (27 - x), images.at(y * 28 + x));
    Fwd ctx{false, nullptr};
    const auto a = model.forward(images, ctx).to_vector();
    const auto b = model.forward(flipped, ctx).to_vector();
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("training-mode dropout changes activations when enabled") {
    ViTConfig cfg = ViTConfig::preset("vit-desk");
    cfg.drop_rate = 0.3;
    Rng rng(9);
    ViTModel model(cfg, rng, DType::F64);
    Rng drng(10);
    Tensor images = Tensor::randn({2, 1, 28, 28}, drng);
    Rng r1(11), r2(11), r3(12);
    Fwd train1{true, &r1}, train2{true, &r2}, train3{true, &r3};
    const auto a = model.forward(images, train1).to_vector();
    const auto b = model.forward(images, train2).to_vector();
    const auto c = model.forward(images, train3).to_vector();
    CHECK(a == b);   // same dropout stream -> identical
    CHECK(a != c);   // different stream -> different masks
}
