#pragma once

#include <functional>

#include "vitssp/augment.hpp"
#include "vitssp/dataset.hpp"
#include "vitssp/optim.hpp"
#include "vitssp/vit.hpp"

namespace vitssp {

struct SspHeadConfig {
    int64_t proj_hidden = 256;
    int64_t proj_dim = 128;
    int64_t pred_hidden = 64;
};

// embed -> hidden -> proj, batch-normed ReLU after the first layer.
struct ProjectionHead {
    Linear fc1;
    BatchNorm1d bn;
    Linear fc2;

    ProjectionHead() = default;
    ProjectionHead(int64_t in, int64_t hidden, int64_t out, Rng& rng,
                   DType dt = default_dtype());
    Tensor forward(const Tensor& x, const Fwd& ctx);
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

// proj -> hidden -> proj by default; identity() swaps in a single linear
// layer preloaded with the identity map (useful for tied-weights checks).
struct PredictionHead {
    bool single_layer = false;
    Linear fc1;
    BatchNorm1d bn;
    Linear fc2;

    PredictionHead() = default;
    PredictionHead(int64_t dim, int64_t hidden, Rng& rng, DType dt = default_dtype());
    static PredictionHead identity(int64_t dim, DType dt = default_dtype());
    Tensor forward(const Tensor& x, const Fwd& ctx);
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

// Online stream (backbone, projector, predictor) trains by gradient; the
// twin target stream (backbone, projector) only ever moves by EMA and its
// parameters are structurally excluded from autodiff.
struct DualStreamState {
    ViTModel online_backbone;
    ProjectionHead online_projector;
    PredictionHead predictor;
    ViTModel target_backbone;
    ProjectionHead target_projector;
    double momentum = 0.999;

    DualStreamState() = default;
    DualStreamState(const ViTConfig& vit_cfg, const SspHeadConfig& heads, double m,
                    Rng& rng, DType dt = default_dtype());

    NamedTensors online_params();
    NamedTensors online_buffers();
    NamedTensors target_params();
    NamedTensors target_buffers();

    void tie_target_to_online();
    // target <- m*target + (1-m)*online over parameters and running buffers.
    void ema_update();

    Tensor online_forward(const Tensor& images, const Fwd& ctx);  // [n, proj_dim]
    Tensor target_forward(const Tensor& images, const Fwd& ctx);  // no grad
};

// -cos(p, z) for a single pair of vectors; z is taken as a constant.
Tensor pair_loss(const Tensor& p, const Tensor& z);
// Mean of -cos over rows of [n, d]; z is detached inside.
Tensor batch_loss(const Tensor& p, const Tensor& z);

struct PretrainConfig {
    int64_t batch_size = 128;
    double lr = 1e-4;
    double momentum = 0.999;
    int64_t epochs = 50;
    int64_t accumulation_steps = 4;
    uint64_t seed = 42;
    bool symmetric = false;
    double drop_rate = 0.0;
};

// Owns the optimizer and the accumulation counter. Each step() backpropagates
// one sub-batch loss scaled by 1/S; every S-th step applies one optimizer
// update followed by one EMA update.
class Pretrainer {
public:
    Pretrainer(DualStreamState& state, const PretrainConfig& cfg);

    double step(const Tensor& view1, const Tensor& view2);
    int64_t substeps() const { return substep_; }
    int64_t updates_applied() const { return updates_; }
    Adam& optimizer() { return opt_; }

    // Called with detached (P, Z) of every sub-batch, before backward.
    std::function<void(const Tensor& p, const Tensor& z)> projection_logger;

private:
    DualStreamState& state_;
    PretrainConfig cfg_;
    Adam opt_;
    Rng model_rng_;
    int64_t substep_ = 0;
    int64_t updates_ = 0;
};

struct PretrainResult {
    std::vector<double> epoch_losses;
    int64_t substeps = 0;
    int64_t updates = 0;
};

// Full loop: ties the target to the online weights first, then runs
// epochs x floor(n/batch) sub-batches of dual views; partial tail batches
// are dropped. Augmentation seeds derive from (seed, epoch, index).
PretrainResult pretrain(DualStreamState& state, const ImageDataset& data,
                        const PretrainConfig& cfg, const AugmentSpec& aug,
                        const std::function<void(int64_t, double)>& on_epoch = {},
                        const std::function<void(const Tensor&, const Tensor&)>&
                            projection_logger = {});

}  // namespace vitssp
