#pragma once

#include "vitssp/augment.hpp"
#include "vitssp/dataset.hpp"
#include "vitssp/optim.hpp"
#include "vitssp/vit.hpp"

namespace vitssp {

// fc -> batch-norm -> ReLU -> dropout -> logits.
struct ClassifierHead {
    Linear fc1;
    BatchNorm1d bn;
    Dropout drop;
    Linear fc2;

    ClassifierHead() = default;
    ClassifierHead(int64_t embed, int64_t hidden, int64_t classes, double drop_rate,
                   Rng& rng, DType dt = default_dtype());
    Tensor forward(const Tensor& x, const Fwd& ctx);
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

struct Classifier {
    ViTModel backbone;
    ClassifierHead head;
    bool frozen = false;  // linear-probe mode: backbone excluded from training

    Tensor forward(const Tensor& images, const Fwd& ctx);  // logits [n, K]
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
    NamedTensors trainable_params();
    NamedTensors all_params();
    NamedTensors all_buffers();
};

struct SchedulerConfig {
    double factor = 0.5;
    int patience = 2;
    double min_lr = 1e-6;
};

struct FinetuneConfig {
    int64_t batch_size = 16;
    double lr = 1e-4;
    int64_t epochs = 50;
    double dropout = 0.5;
    double weight_decay = 1e-4;
    int64_t folds = 10;
    int early_stop_patience = 3;
    SchedulerConfig scheduler;
    uint64_t seed = 42;
    int64_t head_hidden = 128;
    bool freeze_backbone = false;

    void validate() const;
};

// w_c = n_total / (K * n_c); every class must appear.
std::vector<double> class_weights(const std::vector<int>& labels, int64_t num_classes);

struct Fold {
    std::vector<int64_t> train, val;
};
struct FoldPlan {
    std::vector<Fold> folds;
};

// Per-class shuffle, then deal members round-robin into k validation folds;
// per-class validation counts across folds differ by at most one.
FoldPlan stratified_kfold(const std::vector<uint8_t>& labels, int64_t k, uint64_t seed);

struct EpochStats {
    int64_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_auc = 0.0;
    double lr = 0.0;
};

struct FoldResult {
    int fold_index = 0;
    Classifier model;
    int64_t best_epoch = 0;  // 1-based
    double val_auc = 0.0;    // at best epoch
    double val_loss = 0.0;   // at best epoch
    std::vector<EpochStats> history;
};

// Deep copy of weights into a fresh model (same config, no shared storage).
Classifier make_classifier(ViTModel& pretrained_backbone, int64_t num_classes,
                           const FinetuneConfig& cfg);

// Batched eval-mode class probabilities; empty `indices` means all rows.
struct Predictions {
    int64_t n = 0, k = 0;
    std::vector<double> probs;   // [n, k] softmax rows
    std::vector<double> logits;  // [n, k]
    std::vector<int> labels;     // present when the dataset is labeled
};
Predictions predict(Classifier& model, const ImageDataset& data,
                    const std::vector<int64_t>& indices, const AugmentSpec& eval_spec);

// Deterministic eval variant of a train-time augmentation spec: stochastic
// stages stripped, geometry/normalization kept.
AugmentSpec eval_spec_of(const AugmentSpec& train_spec);

// Trains backbone+head on the fold's train split, validates each epoch,
// drives the plateau scheduler and early stopping from validation loss, and
// restores the best-epoch weights (parameters and buffers) before returning.
FoldResult finetune_fold(ViTModel& pretrained_backbone, const ImageDataset& data,
                         const Fold& fold, const FinetuneConfig& cfg,
                         const AugmentSpec& aug, int fold_index);

// Argmax of validation mAUC; ties fall to lower validation loss, then lower
// fold index.
size_t select_best(const std::vector<FoldResult>& results);

}  // namespace vitssp
