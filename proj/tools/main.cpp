// Command-line driver: pretrain / finetune / evaluate / convert / synth /
// report, all reading one INI run configuration plus a handful of global
// flag overrides. Every run writes its artifacts under --out together with
// a manifest.json describing exactly what produced them.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vitssp/checkpoint.hpp"
#include "vitssp/config.hpp"
#include "vitssp/finetune.hpp"
#include "vitssp/metrics.hpp"
#include "vitssp/ssp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vitssp;

namespace {

std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t hash_file(const std::string& path, uint64_t h) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return h;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    return h;
}

std::string hex64(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw DataError("write failed for '" + path.string() + "'");
}

ImageDataset require_dataset(const std::string& path, const char* which) {
    if (path.empty())
        throw DataError(std::string("no ") + which +
                        " dataset configured ([data] " + which + "_path)");
    return load_octb(path);
}

// All learnable state of the dual-stream pretrainer under stable names.
NamedTensors ssp_state_tensors(DualStreamState& state) {
    NamedTensors params, buffers;
    state.online_backbone.collect("online.backbone", params, buffers);
    state.online_projector.collect("online.projector", params, buffers);
    state.predictor.collect("online.predictor", params, buffers);
    state.target_backbone.collect("target.backbone", params, buffers);
    state.target_projector.collect("target.projector", params, buffers);
    NamedTensors all = std::move(params);
    for (auto& item : buffers.items) all.items.push_back(std::move(item));
    return all;
}

NamedTensors classifier_tensors(Classifier& model) {
    NamedTensors params, buffers;
    model.collect("model", params, buffers);
    NamedTensors all = std::move(params);
    for (auto& item : buffers.items) all.items.push_back(std::move(item));
    return all;
}

struct Globals {
    std::string config_path, out_dir, preset, precision;
    uint64_t seed = 0;
    CLI::Option *config_o = nullptr, *seed_o = nullptr, *out_o = nullptr,
                *preset_o = nullptr, *precision_o = nullptr, *freeze_o = nullptr,
                *symmetric_o = nullptr;

    RunConfig resolve() const {
        RunConfig rc;
        if (config_o->count()) rc = load_config(config_path);
        if (seed_o->count()) rc.seed = seed;
        if (out_o->count()) rc.out_dir = out_dir;
        if (preset_o->count()) rc.model = ViTConfig::preset(preset);
        if (precision_o->count()) rc.precision = parse_precision(precision);
        if (freeze_o->count()) rc.finetune.freeze_backbone = true;
        if (symmetric_o->count()) rc.pretrain.symmetric = true;
        rc.finalize();
        return rc;
    }
};

void write_manifest(const RunConfig& rc, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double wall_ms,
                    json extra = json::object()) {
    const std::string echo = serialize_config(rc);
    uint64_t h = fnv1a64(echo.data(), echo.size());
    for (const auto& in : inputs) h = hash_file(in, h);
    json m = {
        {"command", command},
        {"seed", rc.seed},
        {"config", echo},
        {"content_hash", hex64(h)},
        {"inputs", inputs},
        {"outputs", outputs},
        {"wall_time_ms", wall_ms},
    };
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text(fs::path(rc.out_dir) / "manifest.json", m.dump(2) + "\n");
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int cmd_pretrain(const Globals& g) {
    const auto t0 = Clock::now();
    RunConfig rc = g.resolve();
    set_default_dtype(rc.precision);
    ImageDataset train = require_dataset(rc.train_path, "train");
    fs::create_directories(rc.out_dir);

    Rng init_rng(Rng::derive(rc.seed, 0xB002ull));
    DualStreamState state(rc.model, SspHeadConfig{}, rc.pretrain.momentum, init_rng,
                          rc.precision);
    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    PretrainResult res =
        pretrain(state, train, rc.pretrain, rc.augment_pretrain,
                 [&](int64_t epoch, double loss) {
                     csv << epoch << "," << g17(loss) << "\n";
                     std::cout << "epoch " << epoch << " mean_loss " << g17(loss)
                               << "\n";
                 });
    write_text(fs::path(rc.out_dir) / "pretrain_loss.csv", csv.str());

    Checkpoint ck;
    ck.stage = CheckpointStage::Pretrain;
    ck.dt = rc.precision;
    ck.rng_key = rc.seed;
    ck.rng_counter = static_cast<uint64_t>(res.substeps);
    ck.config_echo = serialize_config(rc);
    ck.meta = json{{"stage", "pretrain"},
                   {"epochs", rc.pretrain.epochs},
                   {"updates", res.updates},
                   {"dataset_n", train.n},
                   {"final_loss", res.epoch_losses.empty() ? 0.0
                                                           : res.epoch_losses.back()}}
                  .dump();
    ck.tensors = ssp_state_tensors(state);
    const std::string ck_path = (fs::path(rc.out_dir) / "pretrain.ckpt").string();
    save_checkpoint(ck_path, ck);

    write_manifest(rc, "pretrain", {rc.train_path},
                   {"pretrain.ckpt", "pretrain_loss.csv"}, ms_since(t0),
                   {{"epochs", rc.pretrain.epochs}, {"updates", res.updates}});
    std::cout << "checkpoint " << ck_path << "\n";
    return 0;
}

ViTModel backbone_from_checkpoint(const std::string& path, const RunConfig& rc) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.stage != CheckpointStage::Pretrain)
        throw ConfigError("finetune: '" + path + "' is not a pretraining checkpoint");
    if (ck.dt != rc.precision)
        throw ConfigError("finetune: checkpoint precision " + precision_name(ck.dt) +
                          " differs from configured " + precision_name(rc.precision));
    RunConfig ckrc = parse_config(ck.config_echo);
    Rng scratch(0);
    DualStreamState state(ckrc.model, SspHeadConfig{}, ckrc.pretrain.momentum, scratch,
                          ck.dt);
    NamedTensors all = ssp_state_tensors(state);
    load_into(all, ck);
    return state.online_backbone;
}

int cmd_finetune(const Globals& g, const std::string& ckpt_path) {
    const auto t0 = Clock::now();
    RunConfig rc = g.resolve();
    set_default_dtype(rc.precision);
    ImageDataset labeled = require_dataset(rc.train_path, "train");
    if (!labeled.has_labels) throw DataError("finetune: dataset has no labels");
    fs::create_directories(rc.out_dir);

    int64_t full_n = labeled.n;
    if (rc.label_fraction > 0.0) {
        labeled = stratified_subsample(labeled, rc.label_fraction, rc.seed);
        std::cout << "subset size " << labeled.n << " of " << full_n << "\n";
    }

    ViTModel backbone = ckpt_path.empty()
                            ? [&] {
                                  Rng init_rng(Rng::derive(rc.seed, 0xB002ull));
                                  return ViTModel(rc.model, init_rng, rc.precision);
                              }()
                            : backbone_from_checkpoint(ckpt_path, rc);

    FoldPlan plan = stratified_kfold(labeled.labels, rc.finetune.folds, rc.seed);
    std::vector<FoldResult> results;
    std::vector<std::string> outputs;
    for (size_t f = 0; f < plan.folds.size(); ++f) {
        FoldResult fr = finetune_fold(backbone, labeled, plan.folds[f], rc.finetune,
                                      rc.augment_finetune, static_cast<int>(f));
        std::ostringstream csv;
        csv << "epoch,train_loss,val_loss,val_auc,lr\n";
        for (const EpochStats& row : fr.history)
            csv << row.epoch << "," << g17(row.train_loss) << "," << g17(row.val_loss)
                << "," << g17(row.val_auc) << "," << g17(row.lr) << "\n";
        const std::string name = "fold_" + std::to_string(f) + ".csv";
        write_text(fs::path(rc.out_dir) / name, csv.str());
        outputs.push_back(name);
        std::cout << "fold " << f << " best_epoch " << fr.best_epoch << " val_mauc "
                  << g17(fr.val_auc) << "\n";
        results.push_back(std::move(fr));
    }

    const size_t best = select_best(results);
    json summary;
    summary["folds"] = json::array();
    for (const FoldResult& fr : results)
        summary["folds"].push_back({{"fold", fr.fold_index},
                                    {"val_mauc", fr.val_auc},
                                    {"val_loss", fr.val_loss},
                                    {"best_epoch", fr.best_epoch}});
    summary["best_fold"] = results[best].fold_index;
    write_text(fs::path(rc.out_dir) / "cv_summary.json", summary.dump(2) + "\n");
    outputs.push_back("cv_summary.json");

    Checkpoint ck;
    ck.stage = CheckpointStage::Finetune;
    ck.dt = rc.precision;
    ck.rng_key = rc.seed;
    ck.rng_counter = 0;
    ck.config_echo = serialize_config(rc);
    ck.meta = json{{"stage", "finetune"},
                   {"num_classes", labeled.num_classes},
                   {"fold", results[best].fold_index},
                   {"best_epoch", results[best].best_epoch},
                   {"val_mauc", results[best].val_auc}}
                  .dump();
    ck.tensors = classifier_tensors(results[best].model);
    save_checkpoint((fs::path(rc.out_dir) / "finetune_best.ckpt").string(), ck);
    outputs.push_back("finetune_best.ckpt");

    std::vector<std::string> inputs = {rc.train_path};
    if (!ckpt_path.empty()) inputs.push_back(ckpt_path);
    write_manifest(rc, "finetune", inputs, outputs, ms_since(t0),
                   {{"best_fold", results[best].fold_index},
                    {"subset_n", labeled.n},
                    {"folds", rc.finetune.folds}});
    std::cout << "best fold " << results[best].fold_index << "\n";
    return 0;
}

int cmd_evaluate(const Globals& g, const std::string& ckpt_path, bool on_train) {
    const auto t0 = Clock::now();
    RunConfig rc = g.resolve();
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.stage != CheckpointStage::Finetune)
        throw ConfigError("evaluate: '" + ckpt_path +
                          "' is not a fine-tuned model checkpoint");
    set_default_dtype(ck.dt);
    RunConfig ckrc = parse_config(ck.config_echo);
    const json meta = json::parse(ck.meta);
    const int64_t k = meta.at("num_classes").get<int64_t>();

    Classifier model;
    {
        Rng scratch(0);
        model.backbone = ViTModel(ckrc.model, scratch, ck.dt);
        model.head = ClassifierHead(ckrc.model.embed_dim, ckrc.finetune.head_hidden, k,
                                    ckrc.finetune.dropout, scratch, ck.dt);
    }
    NamedTensors all = classifier_tensors(model);
    load_into(all, ck);

    const std::string data_path = on_train ? rc.train_path : rc.test_path;
    ImageDataset test = require_dataset(data_path, on_train ? "train" : "test");
    if (!test.has_labels) throw DataError("evaluate: dataset has no labels");
    const AugmentSpec espec = eval_spec_of(ckrc.augment_finetune);
    const int64_t eval_hw = espec.resize_to > 0 ? espec.resize_to : test.h;
    if (test.c != ckrc.model.in_channels || eval_hw != ckrc.model.image_size)
        throw ShapeError("evaluate: dataset images " + std::to_string(test.c) + "x" +
                         std::to_string(test.h) + "x" + std::to_string(test.w) +
                         " do not match model input " +
                         std::to_string(ckrc.model.in_channels) + "x" +
                         std::to_string(ckrc.model.image_size) + "x" +
                         std::to_string(ckrc.model.image_size));

    fs::create_directories(rc.out_dir);
    Predictions pr = predict(model, test, {}, espec);
    MetricsReport report = compute_report(pr.probs, pr.n, k, pr.labels);
    for (const std::string& w : report.auc.warnings) std::cerr << "warning: " << w << "\n";

    write_text(fs::path(rc.out_dir) / "metrics.json", report_json(report));
    write_text(fs::path(rc.out_dir) / "report.csv", report_csv(report));
    write_text(fs::path(rc.out_dir) / "roc_points.csv", roc_points_csv(report));
    write_text(fs::path(rc.out_dir) / "confusion.csv", confusion_csv(report));

    write_manifest(rc, "evaluate", {ckpt_path, data_path},
                   {"metrics.json", "report.csv", "roc_points.csv", "confusion.csv"},
                   ms_since(t0),
                   {{"mauc", report.auc.mauc}, {"accuracy", report.scores.accuracy}});
    std::cout << "mauc " << g17(report.auc.mauc) << " accuracy "
              << g17(report.scores.accuracy) << "\n";
    return 0;
}

int cmd_convert(const std::string& images_csv, const std::string& labels_csv,
                const std::string& out_path, int64_t c, int64_t h, int64_t w,
                int64_t classes) {
    ImageDataset ds = import_csv(images_csv, c, h, w, 0, false);
    if (!labels_csv.empty()) {
        std::ifstream f(labels_csv);
        if (!f) throw DataError("convert: cannot open labels '" + labels_csv + "'");
        std::vector<uint8_t> labels;
        std::string line;
        int64_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                size_t used = 0;
                const long v = std::stol(line, &used);
                if (v < 0 || v > 255) throw std::out_of_range("label");
                labels.push_back(static_cast<uint8_t>(v));
            } catch (const std::exception&) {
                throw DataError("convert: bad label at " + labels_csv + ":" +
                                std::to_string(lineno));
            }
        }
        if (static_cast<int64_t>(labels.size()) != ds.n)
            throw DataError("convert: " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(ds.n) + " images");
        ds.labels = std::move(labels);
        ds.has_labels = true;
        int64_t maxl = -1;
        for (const uint8_t l : ds.labels) maxl = std::max<int64_t>(maxl, l);
        ds.num_classes = classes > 0 ? classes : maxl + 1;
        if (maxl >= ds.num_classes)
            throw DataError("convert: label " + std::to_string(maxl) +
                            " exceeds class count " + std::to_string(ds.num_classes));
    }
    ds.validate();
    save_octb(ds, out_path);
    std::cout << "wrote " << out_path << " n=" << ds.n
              << (ds.has_labels ? " labeled" : " unlabeled") << "\n";
    return 0;
}

int cmd_synth(const SyntheticSpec& spec, uint64_t seed, const std::string& out_path) {
    ImageDataset ds = synth_generate(spec, seed);
    save_octb(ds, out_path);
    std::cout << "wrote " << out_path << " n=" << ds.n << " classes=" << ds.num_classes
              << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    auto read_json = [&](const char* name) -> json {
        std::ifstream f(fs::path(run_dir) / name);
        if (!f) return nullptr;
        try {
            return json::parse(f);
        } catch (const json::exception&) {
            throw DataError(std::string("report: malformed ") + name + " in '" +
                            run_dir + "'");
        }
    };
    json combined = {{"manifest", read_json("manifest.json")},
                     {"cv_summary", read_json("cv_summary.json")},
                     {"metrics", read_json("metrics.json")}};
    if (combined["manifest"].is_null() && combined["cv_summary"].is_null() &&
        combined["metrics"].is_null())
        throw DataError("report: no run artifacts found in '" + run_dir + "'");
    const fs::path out = fs::path(run_dir) / "report.json";
    write_text(out, combined.dump(2) + "\n");
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-stream self-supervised pretraining and fine-tuning for "
                 "28x28 grayscale image classification"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    g.config_o = app.add_option("--config", g.config_path, "Run configuration INI");
    g.seed_o = app.add_option("--seed", g.seed, "Global seed override");
    g.out_o = app.add_option("--out", g.out_dir, "Output directory override");
    g.preset_o = app.add_option("--preset", g.preset, "Model preset")
                     ->check(CLI::IsMember({"vit-base", "vit-desk"}));
    g.precision_o = app.add_option("--precision", g.precision, "Scalar precision")
                        ->check(CLI::IsMember({"f32", "f64"}));
    g.freeze_o = app.add_flag("--freeze-backbone",
                              "Train the classifier head only (linear probe)");
    g.symmetric_o =
        app.add_flag("--symmetric", "Average the swapped-view loss direction too");

    auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");

    std::string ft_ckpt;
    auto* fin = app.add_subcommand("finetune", "Cross-validated fine-tuning");
    fin->add_option("--checkpoint", ft_ckpt,
                    "Pretraining checkpoint (omit to train from scratch)");

    std::string ev_ckpt;
    bool ev_on_train = false;
    auto* ev = app.add_subcommand("evaluate", "Test-set metrics for a model");
    ev->add_option("--checkpoint", ev_ckpt, "Fine-tuned model checkpoint")
        ->required();
    ev->add_flag("--on-train", ev_on_train,
                 "Evaluate on the training split (sanity mode)");

    std::string cv_images, cv_labels, cv_out;
    int64_t cv_c = 1, cv_h = 28, cv_w = 28, cv_k = 0;
    auto* cv = app.add_subcommand("convert", "CSV pixels (+ optional labels) to OCTB");
    cv->add_option("images_csv", cv_images, "Pixel rows, one image per line")
        ->required();
    cv->add_option("out_octb", cv_out, "Destination OCTB file")->required();
    cv->add_option("--labels", cv_labels, "One integer label per line");
    cv->add_option("--channels", cv_c, "Image channels");
    cv->add_option("--height", cv_h, "Image height");
    cv->add_option("--width", cv_w, "Image width");
    cv->add_option("--classes", cv_k, "Class count (default: max label + 1)");

    SyntheticSpec sy_spec;
    uint64_t sy_seed = 42;
    std::string sy_out;
    auto* sy = app.add_subcommand("synth", "Generate a synthetic OCTB dataset");
    sy->add_option("out_octb", sy_out, "Destination OCTB file")->required();
    sy->add_option("--per-class", sy_spec.per_class, "Images per class");
    sy->add_option("--size", sy_spec.image_size, "Square image size");
    sy->add_option("--classes", sy_spec.classes, "Number of classes (<= 4)");
    sy->add_option("--noise", sy_spec.noise, "Gaussian pixel noise sigma");
    sy->add_option("--synth-seed", sy_seed, "Generator seed");

    std::string rp_dir;
    auto* rp = app.add_subcommand("report", "Consolidate a run directory");
    rp->add_option("run_dir", rp_dir, "Directory written by earlier commands")
        ->required();

    try {
        app.parse(argc, argv);
        if (pre->parsed()) return cmd_pretrain(g);
        if (fin->parsed()) return cmd_finetune(g, ft_ckpt);
        if (ev->parsed()) return cmd_evaluate(g, ev_ckpt, ev_on_train);
        if (cv->parsed())
            return cmd_convert(cv_images, cv_labels, cv_out, cv_c, cv_h, cv_w, cv_k);
        if (sy->parsed()) {
            if (g.seed_o->count()) sy_seed = g.seed;
            return cmd_synth(sy_spec, sy_seed, sy_out);
        }
        if (rp->parsed()) return cmd_report(rp_dir);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
