#include "vitssp/optim.hpp"

#include <cmath>

namespace vitssp {

Adam::Adam(NamedTensors params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
    m_.resize(params_.items.size());
    v_.resize(params_.items.size());
    for (size_t i = 0; i < params_.items.size(); ++i) {
        const size_t n = static_cast<size_t>(params_.items[i].second.numel());
        m_[i].assign(n, 0.0);
        v_[i].assign(n, 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double shrink = 1.0 - lr_ * cfg_.weight_decay;
    for (size_t pi = 0; pi < params_.items.size(); ++pi) {
        Tensor& p = params_.items[pi].second;
        if (!p.has_grad()) continue;
        auto& m = m_[pi];
        auto& v = v_[pi];
        auto update = [&](auto& data, const auto& grad) {
            using T = std::decay_t<decltype(data[0])>;
            for (size_t i = 0; i < data.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                double theta = static_cast<double>(data[i]);
                if (cfg_.weight_decay != 0.0) theta *= shrink;
                theta -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
                data[i] = static_cast<T>(theta);
            }
        };
        if (p.dtype() == DType::F32)
            update(p.raw<float>(), p.raw_grad<float>());
        else
            update(p.raw<double>(), p.raw_grad<double>());
    }
}

void Adam::zero_grad() {
    for (auto& [name, p] : params_.items) p.zero_grad();
}

double ReduceLROnPlateau::update(double metric, double current_lr) {
    if (best_ - metric > threshold_) {
        best_ = metric;
        bad_ = 0;
        return current_lr;
    }
    ++bad_;
    if (bad_ >= patience_) {
        bad_ = 0;
        return std::max(current_lr * factor_, min_lr_);
    }
    return current_lr;
}

bool EarlyStopper::update(double metric, int epoch) {
    if (metric < best_ - min_delta_) {
        best_ = metric;
        best_epoch_ = epoch;
        bad_ = 0;
        improved_last_ = true;
        return false;
    }
    improved_last_ = false;
    ++bad_;
    return bad_ >= patience_;
}

}  // namespace vitssp
