#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "vitssp/checkpoint.hpp"
#include "vitssp/config.hpp"

using namespace vitssp;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / name;
}

void expect_config_error(const std::string& text, const std::string& needle) {
    try {
        parse_config(text);
        FAIL("expected ConfigError for: ", text);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK_MESSAGE(msg.find(needle) != std::string::npos,
                      "message '", msg, "' lacks '", needle, "'");
    }
}

NamedTensors sample_tensors(DType dt) {
    Rng rng(9);
    NamedTensors nts;
    nts.add("enc.weight", Tensor::randn({3, 4}, rng, 1.0, dt));
    nts.add("enc.bias", Tensor::randn({4}, rng, 1.0, dt));
    nts.add("head.scale", Tensor::randn({2, 2, 2}, rng, 1.0, dt));
    return nts;
}

Checkpoint sample_checkpoint(DType dt) {
    Checkpoint ck;
    ck.stage = CheckpointStage::Pretrain;
    ck.dt = dt;
    ck.rng_key = 0xDEADBEEFCAFEF00Dull;
    ck.rng_counter = 77;
    ck.config_echo = "[data]\nseed = 5\n";
    ck.meta = "{\"epochs\":3}";
    ck.tensors = sample_tensors(dt);
    return ck;
}

}  // namespace

TEST_CASE("default run configuration matches the documented training recipe") {
    RunConfig cfg;
    CHECK(cfg.pretrain.batch_size == 128);
    CHECK(cfg.pretrain.lr == 1e-4);
    CHECK(cfg.pretrain.momentum == 0.999);
    CHECK(cfg.pretrain.epochs == 50);
    CHECK(cfg.pretrain.accumulation_steps == 4);
    CHECK_FALSE(cfg.pretrain.symmetric);

    CHECK(cfg.finetune.batch_size == 16);
    CHECK(cfg.finetune.lr == 1e-4);
    CHECK(cfg.finetune.epochs == 50);
    CHECK(cfg.finetune.dropout == 0.5);
    CHECK(cfg.finetune.weight_decay == 1e-4);
    CHECK(cfg.finetune.folds == 10);
    CHECK(cfg.finetune.early_stop_patience == 3);
    CHECK(cfg.finetune.scheduler.factor == 0.5);
    CHECK(cfg.finetune.scheduler.patience == 2);
    CHECK(cfg.finetune.scheduler.min_lr == 1e-6);
    CHECK(cfg.finetune.head_hidden == 128);
    CHECK_FALSE(cfg.finetune.freeze_backbone);

    CHECK(cfg.model.embed_dim == 768);
    CHECK(cfg.model.depth == 12);
    CHECK(cfg.model.num_heads == 12);

    CHECK(cfg.augment_pretrain.rotation_deg == 15.0);
    CHECK(cfg.augment_pretrain.hflip_prob == 0.5);
    CHECK(cfg.augment_pretrain.vflip_prob == 0.5);
    CHECK(cfg.augment_pretrain.brightness == 0.2);
    CHECK(cfg.augment_pretrain.contrast == 0.2);
    CHECK(cfg.augment_pretrain.grayscale_prob == 0.2);
    CHECK(cfg.augment_pretrain.normalize);
    CHECK(cfg.augment_pretrain.norm_mean == 0.5);
    CHECK(cfg.augment_pretrain.norm_std == 0.5);
    CHECK(cfg.augment_pretrain.resize_to == 0);

    CHECK(cfg.augment_finetune.resize_to == 28);
    CHECK(cfg.augment_finetune.rotation_deg == 15.0);
    CHECK(cfg.augment_finetune.hflip_prob == 0.5);
    CHECK(cfg.augment_finetune.vflip_prob == 0.5);
    CHECK(cfg.augment_finetune.brightness == 0.2);
    CHECK(cfg.augment_finetune.contrast == 0.2);
    CHECK(cfg.augment_finetune.grayscale_prob == 0.0);
    CHECK(cfg.augment_finetune.normalize);

    CHECK(cfg.seed == 42);
    CHECK(cfg.precision == DType::F64);
    CHECK(cfg.label_fraction == 0.0);
    CHECK(cfg.out_dir == "out");

    // An empty file yields the defaults, with the global seed pushed down.
    RunConfig parsed = parse_config("");
    CHECK(parsed.pretrain.seed == parsed.seed);
    CHECK(parsed.finetune.seed == parsed.seed);
    CHECK(parsed.pretrain.batch_size == 128);
}

TEST_CASE("parse -> serialize -> parse is the identity") {
    RunConfig cfg;
    cfg.pretrain.batch_size = 32;
    cfg.pretrain.lr = 0.1;  // not exactly representable; %.17g must round-trip
    cfg.pretrain.momentum = 0.997;
    cfg.pretrain.epochs = 7;
    cfg.pretrain.accumulation_steps = 2;
    cfg.pretrain.symmetric = true;
    cfg.finetune.dropout = 0.3;
    cfg.finetune.scheduler.factor = 0.25;
    cfg.finetune.head_hidden = 48;
    cfg.finetune.freeze_backbone = true;
    cfg.augment_pretrain.rotation_deg = 7.5;
    cfg.augment_finetune.resize_to = 32;
    cfg.model = ViTConfig::preset("vit-desk");
    cfg.model.drop_rate = 0.1;
    cfg.train_path = "data/train.octb";
    cfg.test_path = "data/test.octb";
    cfg.out_dir = "runs/exp1";
    cfg.seed = 1234567890123456789ull;
    cfg.precision = DType::F32;
    cfg.label_fraction = 0.05129;
    cfg.finalize();

    const std::string text = serialize_config(cfg);
    RunConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);

    CHECK(back.pretrain.batch_size == cfg.pretrain.batch_size);
    CHECK(back.pretrain.lr == cfg.pretrain.lr);
    CHECK(back.pretrain.momentum == cfg.pretrain.momentum);
    CHECK(back.pretrain.symmetric == cfg.pretrain.symmetric);
    CHECK(back.finetune.dropout == cfg.finetune.dropout);
    CHECK(back.finetune.scheduler.factor == cfg.finetune.scheduler.factor);
    CHECK(back.finetune.freeze_backbone == cfg.finetune.freeze_backbone);
    CHECK(back.augment_pretrain.rotation_deg == cfg.augment_pretrain.rotation_deg);
    CHECK(back.augment_finetune.resize_to == cfg.augment_finetune.resize_to);
    CHECK(back.model.embed_dim == cfg.model.embed_dim);
    CHECK(back.model.depth == cfg.model.depth);
    CHECK(back.model.drop_rate == cfg.model.drop_rate);
    CHECK(back.train_path == cfg.train_path);
    CHECK(back.seed == cfg.seed);
    CHECK(back.precision == cfg.precision);
    CHECK(back.label_fraction == cfg.label_fraction);
}

TEST_CASE("config text tolerates comments and whitespace") {
    const std::string text =
        "# leading comment\n"
        "\n"
        "[pretrain]\n"
        "; another comment style\n"
        "  batch_size   =   64  \n"
        "[data]\n"
        "seed = 7\n";
    RunConfig cfg = parse_config(text);
    CHECK(cfg.pretrain.batch_size == 64);
    CHECK(cfg.seed == 7);
    CHECK(cfg.pretrain.seed == 7);
}

TEST_CASE("unknown sections, keys, and malformed lines are named in errors") {
    expect_config_error("[warp]\nspeed = 9\n", "unknown section [warp]");
    expect_config_error("[pretrain]\nbogus = 1\n", "[pretrain] bogus");
    expect_config_error("[augment.pretrain]\nsharpen = 1\n", "sharpen");
    expect_config_error("[pretrain]\nbatch_size\n", "expected key = value");
    expect_config_error("batch_size = 4\n", "outside any section");
    expect_config_error("[pretrain\nbatch_size = 4\n", "unterminated");
    expect_config_error("[pretrain]\nbatch_size = four\n", "expected an integer");
    expect_config_error("[pretrain]\nbatch_size = 4x\n", "expected an integer");
    expect_config_error("[pretrain]\nmomentum = fast\n", "expected a number");
    expect_config_error("[pretrain]\nsymmetric = maybe\n", "expected true/false");
    expect_config_error("[data]\nprecision = f16\n", "f32 or f64");
}

TEST_CASE("out-of-range values fail finalize with the offending key") {
    expect_config_error("[pretrain]\nmomentum = 1.5\n", "[pretrain] momentum");
    expect_config_error("[pretrain]\nlearning_rate = 0\n", "learning_rate");
    expect_config_error("[data]\nlabel_fraction = 1.5\n", "label_fraction");
    expect_config_error("[augment.pretrain]\nhflip_prob = 1.2\n", "hflip_prob");
    expect_config_error("[augment.finetune]\nnorm_std = 0\n", "norm_std");
    expect_config_error("[finetune]\ndropout = 1\n", "dropout");
    expect_config_error("[finetune]\nfolds = 1\n", "folds");
    expect_config_error("[model]\nembed_dim = 0\n", "embed");
}

TEST_CASE("model preset applies first so explicit keys win in any order") {
    RunConfig a = parse_config("[model]\nembed_dim = 32\npreset = vit-desk\n");
    CHECK(a.model.embed_dim == 32);  // explicit key survives a later preset line
    CHECK(a.model.depth == 2);
    CHECK(a.model.num_heads == 4);

    RunConfig b = parse_config("[model]\npreset = vit-desk\nembed_dim = 32\n");
    CHECK(b.model.embed_dim == 32);
    CHECK(b.model.depth == 2);

    RunConfig plain = parse_config("[model]\npreset = vit-desk\n");
    CHECK(plain.model.embed_dim == 64);
    CHECK(plain.model.depth == 2);
    CHECK(plain.model.num_heads == 4);

    CHECK_THROWS_AS(parse_config("[model]\npreset = vit-giant\n"), ConfigError);
}

TEST_CASE("precision names round trip") {
    CHECK(parse_precision("f32") == DType::F32);
    CHECK(parse_precision("f64") == DType::F64);
    CHECK(precision_name(DType::F32) == "f32");
    CHECK(precision_name(DType::F64) == "f64");
    CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
}

TEST_CASE("checkpoint round trip preserves header and payload bitwise") {
    for (const DType dt : {DType::F64, DType::F32}) {
        CAPTURE(static_cast<int>(dt));
        const auto path = temp_file("roundtrip.vspc");
        Checkpoint ck = sample_checkpoint(dt);
        save_checkpoint(path.string(), ck);
        Checkpoint back = load_checkpoint(path.string());

        CHECK(back.stage == ck.stage);
        CHECK(back.dt == ck.dt);
        CHECK(back.rng_key == ck.rng_key);
        CHECK(back.rng_counter == ck.rng_counter);
        CHECK(back.config_echo == ck.config_echo);
        CHECK(back.meta == ck.meta);
        REQUIRE(back.tensors.items.size() == ck.tensors.items.size());
        for (size_t i = 0; i < ck.tensors.items.size(); ++i) {
            CHECK(back.tensors.items[i].first == ck.tensors.items[i].first);
            Tensor& a = back.tensors.items[i].second;
            Tensor& b = ck.tensors.items[i].second;
            CHECK(a.shape() == b.shape());
            CHECK(a.dtype() == b.dtype());
            if (dt == DType::F64)
                CHECK(a.raw<double>() == b.raw<double>());
            else
                CHECK(a.raw<float>() == b.raw<float>());
        }
        fs::remove(path);
    }
}

TEST_CASE("checkpoint rejects corruption, truncation, and foreign files") {
    const auto path = temp_file("damage.vspc");
    save_checkpoint(path.string(), sample_checkpoint(DType::F64));
    const auto size = fs::file_size(path);

    SUBCASE("mid-file byte flip") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        const auto pos = static_cast<std::streamoff>(size / 2);
        f.seekg(pos);
        char b;
        f.get(b);
        f.seekp(pos);
        f.put(static_cast<char>(b ^ 0x01));
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
    }
    SUBCASE("truncation") {
        fs::resize_file(path, size - 5);
        CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
    }
    SUBCASE("trailing garbage") {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f << "junk";
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
    }
    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path.string()), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.vspc"), DataError);
    }
    fs::remove(path);
}

TEST_CASE("save refuses tensors whose dtype disagrees with the header") {
    Checkpoint ck = sample_checkpoint(DType::F32);
    ck.dt = DType::F64;  // header says f64, payload is f32
    CHECK_THROWS_AS(save_checkpoint(temp_file("mixed.vspc").string(), ck), ContractError);
}

TEST_CASE("load_into demands an exact tensor set") {
    const auto path = temp_file("strict.vspc");
    Checkpoint ck = sample_checkpoint(DType::F64);
    save_checkpoint(path.string(), ck);
    Checkpoint loaded = load_checkpoint(path.string());

    SUBCASE("matching set copies values") {
        NamedTensors dst = sample_tensors(DType::F64);
        for (auto& [name, t] : dst.items) fill_(t, 0.0);
        load_into(dst, loaded);
        for (size_t i = 0; i < dst.items.size(); ++i)
            CHECK(dst.items[i].second.to_vector() ==
                  ck.tensors.items[i].second.to_vector());
    }
    SUBCASE("destination entry missing from the checkpoint") {
        NamedTensors dst = sample_tensors(DType::F64);
        Rng rng(1);
        dst.add("extra.weight", Tensor::randn({2}, rng));
        CHECK_THROWS_AS(load_into(dst, loaded), DataError);
    }
    SUBCASE("checkpoint tensor with no destination") {
        NamedTensors dst;
        Rng rng(1);
        dst.add("enc.weight", Tensor::randn({3, 4}, rng));
        dst.add("enc.bias", Tensor::randn({4}, rng));
        CHECK_THROWS_AS(load_into(dst, loaded), DataError);
    }
    SUBCASE("shape mismatch") {
        NamedTensors dst = sample_tensors(DType::F64);
        Rng rng(1);
        dst.items[0].second = Tensor::randn({4, 3}, rng);
        CHECK_THROWS_AS(load_into(dst, loaded), DataError);
    }
    SUBCASE("dtype mismatch") {
        NamedTensors dst = sample_tensors(DType::F64);
        Rng rng(1);
        dst.items[0].second = Tensor::randn({3, 4}, rng, 1.0, DType::F32);
        CHECK_THROWS_AS(load_into(dst, loaded), DataError);
    }
    fs::remove(path);
}

TEST_CASE("a reloaded model forwards bit-identically") {
    ViTConfig vcfg;
    vcfg.image_size = 14;
    vcfg.patch_size = 7;
    vcfg.in_channels = 1;
    vcfg.embed_dim = 16;
    vcfg.depth = 1;
    vcfg.num_heads = 2;
    vcfg.mlp_ratio = 2;

    Rng rng(4);
    ViTModel model(vcfg, rng);
    Tensor x = Tensor::randn({2, 1, 14, 14}, rng);
    Fwd eval{false, nullptr};
    const auto before = model.forward(x, eval).to_vector();

    Checkpoint ck;
    ck.stage = CheckpointStage::Pretrain;
    ck.dt = DType::F64;
    NamedTensors params, buffers;
    model.collect("model", params, buffers);
    for (auto& [name, t] : params.items) ck.tensors.add(name, t);
    for (auto& [name, t] : buffers.items) ck.tensors.add(name, t);
    const auto path = temp_file("forward.vspc");
    save_checkpoint(path.string(), ck);

    Rng other(999);  // deliberately different initialization
    ViTModel fresh(vcfg, other);
    NamedTensors fp, fb, all;
    fresh.collect("model", fp, fb);
    for (auto& [name, t] : fp.items) all.add(name, t);
    for (auto& [name, t] : fb.items) all.add(name, t);
    load_into(all, load_checkpoint(path.string()));

    CHECK(fresh.forward(x, eval).to_vector() == before);
    fs::remove(path);
}
