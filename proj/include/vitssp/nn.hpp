#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vitssp/tensor.hpp"

namespace vitssp {

// Flat named view over a model's tensors so optimizers, EMA coupling and
// checkpoints all address the same storage.
struct NamedTensors {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(std::string name, const Tensor& t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    int64_t total_numel() const;
};

// Per-forward call context.
struct Fwd {
    bool training = false;
    Rng* rng = nullptr;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    int64_t in = 0, out = 0;

    Linear() = default;
    Linear(int64_t in_dim, int64_t out_dim, Rng& rng, DType dt = default_dtype());
    Tensor forward(const Tensor& x) const;  // [..., in] -> [..., out]
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

struct LayerNorm {
    Tensor gain, bias;
    double eps = 1e-5;

    LayerNorm() = default;
    LayerNorm(int64_t d, DType dt = default_dtype());
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

// 1d batch norm over [n, d]. Training uses the batch statistics of the call
// and refreshes the running estimates; eval normalizes with the running ones.
struct BatchNorm1d {
    Tensor gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    BatchNorm1d() = default;
    BatchNorm1d(int64_t d, DType dt = default_dtype());
    Tensor forward(const Tensor& x, const Fwd& ctx);
    void collect(const std::string& prefix, NamedTensors& params, NamedTensors& buffers);
};

struct Dropout {
    double rate = 0.0;

    Tensor forward(const Tensor& x, const Fwd& ctx) const;
};

}  // namespace vitssp
