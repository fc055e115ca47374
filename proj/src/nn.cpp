#include "vitssp/nn.hpp"

namespace vitssp {

void NamedTensors::add(std::string name, const Tensor& t) {
    items.emplace_back(std::move(name), t);
}

Tensor* NamedTensors::find(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

const Tensor* NamedTensors::find(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return &t;
    return nullptr;
}

int64_t NamedTensors::total_numel() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
}

Linear::Linear(int64_t in_dim, int64_t out_dim, Rng& rng, DType dt)
    : weight(Tensor::trunc_normal({in_dim, out_dim}, rng, 0.02, dt)),
      bias(Tensor::zeros({out_dim}, dt)),
      in(in_dim),
      out(out_dim) {
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.dim(x.ndim() - 1) != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(in));
    const bool flat = x.ndim() == 2;
    Tensor x2 = flat ? x : reshape(x, {x.numel() / in, in});
    Tensor y = add(matmul(x2, weight), bias);
    if (flat) return y;
    Shape out_shape = x.shape();
    out_shape.back() = out;
    return reshape(y, out_shape);
}

void Linear::collect(const std::string& prefix, NamedTensors& params, NamedTensors&) {
    params.add(prefix + ".weight", weight);
    params.add(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int64_t d, DType dt)
    : gain(Tensor::ones({d}, dt)), bias(Tensor::zeros({d}, dt)) {
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, NamedTensors& params, NamedTensors&) {
    params.add(prefix + ".gain", gain);
    params.add(prefix + ".bias", bias);
}

BatchNorm1d::BatchNorm1d(int64_t d, DType dt)
    : gamma(Tensor::ones({d}, dt)),
      beta(Tensor::zeros({d}, dt)),
      running_mean(Tensor::zeros({d}, dt)),
      running_var(Tensor::ones({d}, dt)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
}

Tensor BatchNorm1d::forward(const Tensor& x, const Fwd& ctx) {
    if (x.ndim() != 2) throw ShapeError("batch_norm: expected [n,d], got " + shape_str(x.shape()));
    if (ctx.training) {
        const int64_t n = x.dim(0);
        if (n < 2)
            throw ContractError("batch_norm: training batch must have at least 2 rows");
        Tensor m = mean_axis(x, 0);
        Tensor xc = sub(x, m);
        Tensor v = mean_axis(mul(xc, xc), 0);
        Tensor y = add(mul(div(xc, sqrt_op(add_scalar(v, eps))), gamma), beta);
        // Running stats track the batch statistics outside the graph; variance
        // is stored unbiased.
        Tensor m_det = detach(m);
        Tensor v_det = detach(v);
        scale_(v_det, static_cast<double>(n) / static_cast<double>(n - 1));
        ema_(running_mean, m_det, 1.0 - momentum);
        ema_(running_var, v_det, 1.0 - momentum);
        return y;
    }
    Tensor xc = sub(x, running_mean);
    Tensor denom = sqrt_op(add_scalar(running_var, eps));
    return add(mul(div(xc, denom), gamma), beta);
}

void BatchNorm1d::collect(const std::string& prefix, NamedTensors& params,
                          NamedTensors& buffers) {
    params.add(prefix + ".gamma", gamma);
    params.add(prefix + ".beta", beta);
    buffers.add(prefix + ".running_mean", running_mean);
    buffers.add(prefix + ".running_var", running_var);
}

Tensor Dropout::forward(const Tensor& x, const Fwd& ctx) const {
    if (!ctx.training || rate == 0.0) return x;
    if (!ctx.rng) throw ContractError("dropout: training forward needs an rng");
    return dropout(x, rate, *ctx.rng, true);
}

}  // namespace vitssp
