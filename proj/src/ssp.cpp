#include "vitssp/ssp.hpp"

namespace vitssp {

ProjectionHead::ProjectionHead(int64_t in, int64_t hidden, int64_t out, Rng& rng,
                               DType dt)
    : fc1(in, hidden, rng, dt), bn(hidden, dt), fc2(hidden, out, rng, dt) {}

Tensor ProjectionHead::forward(const Tensor& x, const Fwd& ctx) {
    return fc2.forward(relu(bn.forward(fc1.forward(x), ctx)));
}

void ProjectionHead::collect(const std::string& prefix, NamedTensors& params,
                             NamedTensors& buffers) {
    fc1.collect(prefix + ".fc1", params, buffers);
    bn.collect(prefix + ".bn", params, buffers);
    fc2.collect(prefix + ".fc2", params, buffers);
}

PredictionHead::PredictionHead(int64_t dim, int64_t hidden, Rng& rng, DType dt)
    : fc1(dim, hidden, rng, dt), bn(hidden, dt), fc2(hidden, dim, rng, dt) {}

PredictionHead PredictionHead::identity(int64_t dim, DType dt) {
    PredictionHead head;
    head.single_layer = true;
    Rng dummy(0);
    head.fc1 = Linear(dim, dim, dummy, dt);
    fill_(head.fc1.weight, 0.0);
    for (int64_t i = 0; i < dim; ++i) head.fc1.weight.set(i * dim + i, 1.0);
    fill_(head.fc1.bias, 0.0);
    return head;
}

Tensor PredictionHead::forward(const Tensor& x, const Fwd& ctx) {
    if (single_layer) return fc1.forward(x);
    return fc2.forward(relu(bn.forward(fc1.forward(x), ctx)));
}

void PredictionHead::collect(const std::string& prefix, NamedTensors& params,
                             NamedTensors& buffers) {
    fc1.collect(prefix + ".fc1", params, buffers);
    if (single_layer) return;
    bn.collect(prefix + ".bn", params, buffers);
    fc2.collect(prefix + ".fc2", params, buffers);
}

DualStreamState::DualStreamState(const ViTConfig& vit_cfg, const SspHeadConfig& heads,
                                 double m, Rng& rng, DType dt)
    : online_backbone(vit_cfg, rng, dt),
      online_projector(vit_cfg.embed_dim, heads.proj_hidden, heads.proj_dim, rng, dt),
      predictor(heads.proj_dim, heads.pred_hidden, rng, dt),
      target_backbone(vit_cfg, rng, dt),
      target_projector(vit_cfg.embed_dim, heads.proj_hidden, heads.proj_dim, rng, dt),
      momentum(m) {
    if (m < 0.0 || m >= 1.0)
        throw ConfigError("dual stream: momentum must be in [0,1), got " +
                          std::to_string(m));
    tie_target_to_online();
    NamedTensors tp, tb;
    target_backbone.collect("backbone", tp, tb);
    target_projector.collect("projector", tp, tb);
    for (auto& [name, t] : tp.items) t.set_requires_grad(false);
}

NamedTensors DualStreamState::online_params() {
    NamedTensors params, buffers;
    online_backbone.collect("backbone", params, buffers);
    online_projector.collect("projector", params, buffers);
    predictor.collect("predictor", params, buffers);
    return params;
}

NamedTensors DualStreamState::online_buffers() {
    NamedTensors params, buffers;
    online_backbone.collect("backbone", params, buffers);
    online_projector.collect("projector", params, buffers);
    predictor.collect("predictor", params, buffers);
    return buffers;
}

NamedTensors DualStreamState::target_params() {
    NamedTensors params, buffers;
    target_backbone.collect("backbone", params, buffers);
    target_projector.collect("projector", params, buffers);
    return params;
}

NamedTensors DualStreamState::target_buffers() {
    NamedTensors params, buffers;
    target_backbone.collect("backbone", params, buffers);
    target_projector.collect("projector", params, buffers);
    return buffers;
}

namespace {
// Pairs target tensors with their online twins by name; the predictor has no
// twin and is skipped.
void for_each_twin(DualStreamState& state,
                   const std::function<void(Tensor&, const Tensor&)>& fn) {
    NamedTensors op, ob, tp, tb;
    state.online_backbone.collect("backbone", op, ob);
    state.online_projector.collect("projector", op, ob);
    state.target_backbone.collect("backbone", tp, tb);
    state.target_projector.collect("projector", tp, tb);
    for (auto& [name, target] : tp.items) {
        Tensor* online = op.find(name);
        if (!online)
            throw ContractError("dual stream: no online twin for '" + name + "'");
        fn(target, *online);
    }
    for (auto& [name, target] : tb.items) {
        Tensor* online = ob.find(name);
        if (!online)
            throw ContractError("dual stream: no online twin for buffer '" + name + "'");
        fn(target, *online);
    }
}
}  // namespace

void DualStreamState::tie_target_to_online() {
    for_each_twin(*this, [](Tensor& target, const Tensor& online) {
        copy_(target, online);
    });
}

void DualStreamState::ema_update() {
    const double m = momentum;
    for_each_twin(*this, [m](Tensor& target, const Tensor& online) {
        ema_(target, online, m);
    });
}

Tensor DualStreamState::online_forward(const Tensor& images, const Fwd& ctx) {
    Tensor h = online_backbone.forward(images, ctx);
    Tensor z = online_projector.forward(h, ctx);
    return predictor.forward(z, ctx);
}

Tensor DualStreamState::target_forward(const Tensor& images, const Fwd& ctx) {
    NoGradGuard guard;
    Tensor h = target_backbone.forward(images, ctx);
    return target_projector.forward(h, ctx);
}

Tensor pair_loss(const Tensor& p, const Tensor& z) {
    Tensor p2 = p.ndim() == 1 ? reshape(p, {1, p.numel()}) : p;
    Tensor z2 = z.ndim() == 1 ? reshape(z, {1, z.numel()}) : z;
    return batch_loss(p2, z2);
}

Tensor batch_loss(const Tensor& p, const Tensor& z) {
    if (p.ndim() != 2 || z.ndim() != 2 || p.shape() != z.shape())
        throw ShapeError("batch_loss: expected matching [n,d], got " +
                         shape_str(p.shape()) + " and " + shape_str(z.shape()));
    Tensor zd = detach(z);
    Tensor cos = sum_axis(mul(l2_normalize(p), l2_normalize(zd)), 1);  // [n]
    return neg(mean_all(cos));
}

Pretrainer::Pretrainer(DualStreamState& state, const PretrainConfig& cfg)
    : state_(state),
      cfg_(cfg),
      opt_(state.online_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0}),
      model_rng_(Rng::derive(cfg.seed, 0xD20Full)) {
    if (cfg.accumulation_steps < 1)
        throw ConfigError("pretrain: accumulation steps must be >= 1");
}

double Pretrainer::step(const Tensor& view1, const Tensor& view2) {
    Fwd ctx{true, &model_rng_};
    Tensor p = state_.online_forward(view1, ctx);
    Tensor z = state_.target_forward(view2, ctx);
    Tensor loss = batch_loss(p, z);
    if (cfg_.symmetric) {
        Tensor p2 = state_.online_forward(view2, ctx);
        Tensor z2 = state_.target_forward(view1, ctx);
        loss = mul_scalar(add(loss, batch_loss(p2, z2)), 0.5);
    }
    assert_finite(loss, "pretrain loss");
    const double value = loss.item();
    if (projection_logger) projection_logger(detach(p), detach(z));
    Tensor scaled = mul_scalar(loss, 1.0 / static_cast<double>(cfg_.accumulation_steps));
    scaled.backward();
    ++substep_;
    if (substep_ % cfg_.accumulation_steps == 0) {
        opt_.step();
        opt_.zero_grad();
        state_.ema_update();
        ++updates_;
    }
    return value;
}

PretrainResult pretrain(DualStreamState& state, const ImageDataset& data,
                        const PretrainConfig& cfg, const AugmentSpec& aug,
                        const std::function<void(int64_t, double)>& on_epoch,
                        const std::function<void(const Tensor&, const Tensor&)>&
                            projection_logger) {
    if (cfg.batch_size < 2)
        throw ConfigError("pretrain: batch size must be >= 2");
    if (data.n < cfg.batch_size)
        throw DataError("pretrain: dataset smaller than one batch");
    state.momentum = cfg.momentum;
    state.tie_target_to_online();
    Pretrainer trainer(state, cfg);
    trainer.projection_logger = projection_logger;

    PretrainResult result;
    const int64_t batches = data.n / cfg.batch_size;
    std::vector<int64_t> order(static_cast<size_t>(data.n));
    for (int64_t i = 0; i < data.n; ++i) order[static_cast<size_t>(i)] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(Rng::derive(cfg.seed, 0x0DE2ull), static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        for (int64_t b = 0; b < batches; ++b) {
            std::vector<Image> v1, v2;
            v1.reserve(static_cast<size_t>(cfg.batch_size));
            v2.reserve(static_cast<size_t>(cfg.batch_size));
            for (int64_t j = 0; j < cfg.batch_size; ++j) {
                const int64_t idx = order[static_cast<size_t>(b * cfg.batch_size + j)];
                const uint64_t view_seed = Rng::derive(
                    Rng::derive(cfg.seed, 0xA3Dull + static_cast<uint64_t>(epoch)),
                    static_cast<uint64_t>(idx));
                auto views = dual_view(data.image(idx), aug, view_seed);
                v1.push_back(std::move(views.first));
                v2.push_back(std::move(views.second));
            }
            epoch_loss += trainer.step(to_tensor(v1), to_tensor(v2));
        }
        epoch_loss /= static_cast<double>(batches);
        result.epoch_losses.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    result.substeps = trainer.substeps();
    result.updates = trainer.updates_applied();
    return result;
}

}  // namespace vitssp
