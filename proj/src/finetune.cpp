#include "vitssp/finetune.hpp"

#include <algorithm>

#include "vitssp/metrics.hpp"

namespace vitssp {

ClassifierHead::ClassifierHead(int64_t embed, int64_t hidden, int64_t classes,
                               double drop_rate, Rng& rng, DType dt)
    : fc1(embed, hidden, rng, dt),
      bn(hidden, dt),
      drop{drop_rate},
      fc2(hidden, classes, rng, dt) {}

Tensor ClassifierHead::forward(const Tensor& x, const Fwd& ctx) {
    return fc2.forward(drop.forward(relu(bn.forward(fc1.forward(x), ctx)), ctx));
}

void ClassifierHead::collect(const std::string& prefix, NamedTensors& params,
                             NamedTensors& buffers) {
    fc1.collect(prefix + ".fc1", params, buffers);
    bn.collect(prefix + ".bn", params, buffers);
    fc2.collect(prefix + ".fc2", params, buffers);
}

Tensor Classifier::forward(const Tensor& images, const Fwd& ctx) {
    Tensor h;
    if (frozen) {
        NoGradGuard guard;
        h = backbone.forward(images, ctx);
    } else {
        h = backbone.forward(images, ctx);
    }
    return head.forward(h, ctx);
}

void Classifier::collect(const std::string& prefix, NamedTensors& params,
                         NamedTensors& buffers) {
    backbone.collect(prefix + ".backbone", params, buffers);
    head.collect(prefix + ".head", params, buffers);
}

NamedTensors Classifier::trainable_params() {
    NamedTensors params, buffers;
    if (!frozen) backbone.collect("backbone", params, buffers);
    head.collect("head", params, buffers);
    return params;
}

NamedTensors Classifier::all_params() {
    NamedTensors params, buffers;
    collect("model", params, buffers);
    return params;
}

NamedTensors Classifier::all_buffers() {
    NamedTensors params, buffers;
    collect("model", params, buffers);
    return buffers;
}

void FinetuneConfig::validate() const {
    if (folds < 2) throw ConfigError("finetune: folds must be >= 2");
    if (early_stop_patience < 1 || scheduler.patience < 1)
        throw ConfigError("finetune: patience must be >= 1");
    if (scheduler.factor <= 0.0 || scheduler.factor >= 1.0)
        throw ConfigError("finetune: scheduler factor must be in (0,1)");
    if (batch_size < 2)
        throw ConfigError("finetune: batch size must be >= 2");
    if (epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("finetune: dropout must be in [0,1)");
    if (lr <= 0.0 || weight_decay < 0.0)
        throw ConfigError("finetune: learning rate must be positive");
    if (head_hidden < 1) throw ConfigError("finetune: head hidden width must be >= 1");
}

std::vector<double> class_weights(const std::vector<int>& labels, int64_t num_classes) {
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    for (const int l : labels) {
        if (l < 0 || l >= num_classes)
            throw DataError("class_weights: label " + std::to_string(l) + " out of range");
        counts[static_cast<size_t>(l)]++;
    }
    for (int64_t c = 0; c < num_classes; ++c)
        if (counts[static_cast<size_t>(c)] == 0)
            throw ConfigError("class_weights: class " + std::to_string(c) +
                              " has no samples");
    std::vector<double> w(static_cast<size_t>(num_classes));
    const double total = static_cast<double>(labels.size());
    for (int64_t c = 0; c < num_classes; ++c)
        w[static_cast<size_t>(c)] =
            total / (static_cast<double>(num_classes) *
                     static_cast<double>(counts[static_cast<size_t>(c)]));
    return w;
}

FoldPlan stratified_kfold(const std::vector<uint8_t>& labels, int64_t k, uint64_t seed) {
    if (k < 2) throw ConfigError("kfold: k must be >= 2");
    int64_t num_classes = 0;
    for (const uint8_t l : labels) num_classes = std::max<int64_t>(num_classes, l + 1);
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(num_classes));
    for (size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int64_t>(i));
    for (int64_t c = 0; c < num_classes; ++c)
        if (static_cast<int64_t>(by_class[static_cast<size_t>(c)].size()) < k)
            throw ConfigError("kfold: class " + std::to_string(c) + " has only " +
                              std::to_string(by_class[static_cast<size_t>(c)].size()) +
                              " members, fewer than k=" + std::to_string(k));
    // Shuffle each class once, deal members round-robin into validation folds.
    std::vector<std::vector<int64_t>> val(static_cast<size_t>(k));
    for (int64_t c = 0; c < num_classes; ++c) {
        auto& members = by_class[static_cast<size_t>(c)];
        Rng rng(Rng::derive(seed, 0xF01D5ull + static_cast<uint64_t>(c)));
        rng.shuffle(members.begin(), members.end());
        for (size_t j = 0; j < members.size(); ++j)
            val[j % static_cast<size_t>(k)].push_back(members[j]);
    }
    FoldPlan plan;
    plan.folds.resize(static_cast<size_t>(k));
    std::vector<int64_t> fold_of(labels.size(), -1);
    for (int64_t f = 0; f < k; ++f)
        for (const int64_t i : val[static_cast<size_t>(f)])
            fold_of[static_cast<size_t>(i)] = f;
    for (int64_t f = 0; f < k; ++f) {
        auto& fold = plan.folds[static_cast<size_t>(f)];
        fold.val = val[static_cast<size_t>(f)];
        std::sort(fold.val.begin(), fold.val.end());
        for (size_t i = 0; i < labels.size(); ++i)
            if (fold_of[i] != f) fold.train.push_back(static_cast<int64_t>(i));
    }
    return plan;
}

namespace {

DType model_dtype(ViTModel& model) { return model.cls_token.dtype(); }

ViTModel copy_backbone(ViTModel& src) {
    Rng scratch(0);
    ViTModel dst(src.cfg, scratch, model_dtype(src));
    NamedTensors sp, sb, dp, db;
    src.collect("b", sp, sb);
    dst.collect("b", dp, db);
    for (size_t i = 0; i < sp.items.size(); ++i)
        copy_(dp.items[i].second, sp.items[i].second);
    for (size_t i = 0; i < sb.items.size(); ++i)
        copy_(db.items[i].second, sb.items[i].second);
    return dst;
}

std::vector<std::vector<double>> snapshot(NamedTensors& tensors) {
    std::vector<std::vector<double>> out;
    out.reserve(tensors.items.size());
    for (auto& [name, t] : tensors.items) out.push_back(t.to_vector());
    return out;
}

void restore(NamedTensors& tensors, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < tensors.items.size(); ++i) {
        Tensor& t = tensors.items[i].second;
        const auto& v = snap[i];
        for (int64_t j = 0; j < t.numel(); ++j) t.set(j, v[static_cast<size_t>(j)]);
    }
}

}  // namespace

Classifier make_classifier(ViTModel& pretrained_backbone, int64_t num_classes,
                           const FinetuneConfig& cfg) {
    Classifier model;
    model.backbone = copy_backbone(pretrained_backbone);
    Rng head_rng(Rng::derive(cfg.seed, 0x6EADull));
    model.head = ClassifierHead(pretrained_backbone.cfg.embed_dim, cfg.head_hidden,
                                num_classes, cfg.dropout, head_rng,
                                model_dtype(pretrained_backbone));
    model.frozen = cfg.freeze_backbone;
    if (model.frozen) {
        NamedTensors params, buffers;
        model.backbone.collect("backbone", params, buffers);
        for (auto& [name, t] : params.items) t.set_requires_grad(false);
    }
    return model;
}

AugmentSpec eval_spec_of(const AugmentSpec& train_spec) {
    AugmentSpec s = train_spec;
    s.rotation_deg = 0.0;
    s.hflip_prob = 0.0;
    s.vflip_prob = 0.0;
    s.brightness = 0.0;
    s.contrast = 0.0;
    s.grayscale_prob = 0.0;
    return s;
}

Predictions predict(Classifier& model, const ImageDataset& data,
                    const std::vector<int64_t>& indices, const AugmentSpec& eval_spec) {
    std::vector<int64_t> idx = indices;
    if (idx.empty()) {
        idx.resize(static_cast<size_t>(data.n));
        for (int64_t i = 0; i < data.n; ++i) idx[static_cast<size_t>(i)] = i;
    }
    Predictions out;
    out.n = static_cast<int64_t>(idx.size());
    Rng unused(0);
    Fwd ctx{false, nullptr};
    const int64_t chunk = 128;
    for (int64_t start = 0; start < out.n; start += chunk) {
        const int64_t len = std::min<int64_t>(chunk, out.n - start);
        std::vector<Image> imgs;
        imgs.reserve(static_cast<size_t>(len));
        for (int64_t j = 0; j < len; ++j)
            imgs.push_back(apply_augment(data.image(idx[static_cast<size_t>(start + j)]),
                                         eval_spec, unused));
        NoGradGuard guard;
        Tensor logits = model.forward(to_tensor(imgs, model_dtype(model.backbone)), ctx);
        Tensor probs = softmax(logits);
        out.k = logits.dim(1);
        const auto lv = logits.to_vector();
        const auto pv = probs.to_vector();
        out.logits.insert(out.logits.end(), lv.begin(), lv.end());
        out.probs.insert(out.probs.end(), pv.begin(), pv.end());
    }
    if (data.has_labels)
        for (const int64_t i : idx) out.labels.push_back(data.label(i));
    return out;
}

FoldResult finetune_fold(ViTModel& pretrained_backbone, const ImageDataset& data,
                         const Fold& fold, const FinetuneConfig& cfg,
                         const AugmentSpec& aug, int fold_index) {
    cfg.validate();
    if (!data.has_labels) throw DataError("finetune: dataset has no labels");
    if (fold.train.empty() || fold.val.empty())
        throw ContractError("finetune: empty fold split");

    FoldResult result;
    result.fold_index = fold_index;
    result.model = make_classifier(pretrained_backbone, data.num_classes, cfg);
    Classifier& model = result.model;

    std::vector<int> train_labels;
    train_labels.reserve(fold.train.size());
    for (const int64_t i : fold.train) train_labels.push_back(data.label(i));
    const std::vector<double> weights = class_weights(train_labels, data.num_classes);

    Adam opt(model.trainable_params(),
             AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    ReduceLROnPlateau sched(cfg.scheduler.factor, cfg.scheduler.patience,
                            cfg.scheduler.min_lr);
    EarlyStopper stopper(cfg.early_stop_patience);
    const AugmentSpec eval_spec = eval_spec_of(aug);

    NamedTensors all_params = model.all_params();
    NamedTensors all_buffers = model.all_buffers();
    std::vector<std::vector<double>> best_params, best_buffers;

    Rng model_rng(Rng::derive(cfg.seed, 0xD0120ull + static_cast<uint64_t>(fold_index)));
    std::vector<int64_t> order = fold.train;
    const int64_t batches = static_cast<int64_t>(order.size()) / cfg.batch_size;
    if (batches == 0)
        throw DataError("finetune: fold train split smaller than one batch");

    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(
            Rng::derive(cfg.seed, 0x0F01Dull + static_cast<uint64_t>(fold_index)),
            static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        double train_loss = 0.0;
        const double lr_used = opt.lr();
        for (int64_t b = 0; b < batches; ++b) {
            std::vector<Image> imgs;
            std::vector<int> labels;
            imgs.reserve(static_cast<size_t>(cfg.batch_size));
            for (int64_t j = 0; j < cfg.batch_size; ++j) {
                const int64_t idx = order[static_cast<size_t>(b * cfg.batch_size + j)];
                Rng aug_rng(Rng::derive(
                    Rng::derive(cfg.seed, (static_cast<uint64_t>(fold_index) << 32) ^
                                              static_cast<uint64_t>(epoch)),
                    static_cast<uint64_t>(idx)));
                imgs.push_back(apply_augment(data.image(idx), aug, aug_rng));
                labels.push_back(data.label(idx));
            }
            Fwd ctx{true, &model_rng};
            Tensor logits =
                model.forward(to_tensor(imgs, model_dtype(model.backbone)), ctx);
            Tensor loss = cross_entropy_weighted(logits, labels, weights);
            assert_finite(loss, "finetune loss");
            train_loss += loss.item();
            loss.backward();
            opt.step();
            opt.zero_grad();
        }
        train_loss /= static_cast<double>(batches);

        Predictions val = predict(model, data, fold.val, eval_spec);
        double val_loss;
        {
            NoGradGuard guard;
            Tensor logits = Tensor::from_vector({val.n, val.k}, val.logits);
            val_loss = cross_entropy_weighted(logits, val.labels, weights).item();
        }
        const AucResult auc = roc_auc_ovr(val.probs, val.n, val.k, val.labels);
        result.history.push_back({epoch, train_loss, val_loss, auc.mauc, lr_used});

        const bool stop = stopper.update(val_loss, static_cast<int>(epoch));
        if (stopper.improved_last()) {
            best_params = snapshot(all_params);
            best_buffers = snapshot(all_buffers);
            result.best_epoch = epoch;
            result.val_loss = val_loss;
            result.val_auc = auc.mauc;
        }
        opt.set_lr(sched.update(val_loss, opt.lr()));
        if (stop) break;
    }

    if (!best_params.empty()) {
        restore(all_params, best_params);
        restore(all_buffers, best_buffers);
    }
    return result;
}

size_t select_best(const std::vector<FoldResult>& results) {
    if (results.empty()) throw ContractError("select_best: no fold results");
    size_t best = 0;
    for (size_t i = 1; i < results.size(); ++i) {
        const FoldResult& a = results[i];
        const FoldResult& b = results[best];
        if (a.val_auc > b.val_auc ||
            (a.val_auc == b.val_auc && a.val_loss < b.val_loss) ||
            (a.val_auc == b.val_auc && a.val_loss == b.val_loss &&
             a.fold_index < b.fold_index))
            best = i;
    }
    return best;
}

}  // namespace vitssp
