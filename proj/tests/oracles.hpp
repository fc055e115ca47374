// Shared independent oracles for the test suite: a central-finite-difference
// gradient checker, brute-force pairwise AUC, and small numeric helpers. Kept
// header-only so the unit tests and the acceptance runner use the exact same
// reference implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "vitssp/rng.hpp"
#include "vitssp/tensor.hpp"

namespace oracles {

// Relative when the gradients have magnitude, absolute once both sides are
// essentially zero (a pure ratio would amplify finite-difference noise).
inline double grad_err(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    if (denom < 1e-6) return std::abs(analytic - numeric);
    return std::abs(analytic - numeric) / denom;
}

// Checks d(sum(f(inputs) * r))/d(input) for every input that requires grad,
// where r is a fixed random projection drawn once. Returns the worst error
// over all checked coordinates; `sample_coords` > 0 limits the check to that
// many randomly chosen coordinates per input (for big models).
inline double gradcheck(
    const std::function<vitssp::Tensor(const std::vector<vitssp::Tensor>&)>& fn,
    std::vector<vitssp::Tensor>& inputs, vitssp::Rng& rng, double h = 1e-5,
    int64_t sample_coords = 0) {
    using vitssp::NoGradGuard;
    using vitssp::Tensor;

    Tensor probe = fn(inputs);
    std::vector<double> r(static_cast<size_t>(probe.numel()));
    for (auto& v : r) v = rng.uniform(-1.0, 1.0);

    const auto loss_value = [&]() {
        NoGradGuard guard;
        const std::vector<double> out = fn(inputs).to_vector();
        double s = 0.0;
        for (size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
        return s;
    };

    for (auto& t : inputs) t.zero_grad();
    {
        Tensor out = fn(inputs);
        Tensor rt = Tensor::from_vector(out.shape(), r, out.dtype());
        vitssp::sum_all(vitssp::mul(out, rt)).backward();
    }

    double worst = 0.0;
    for (auto& t : inputs) {
        if (!t.requires_grad()) continue;
        const std::vector<double> analytic = t.grad_to_vector();
        std::vector<int64_t> coords;
        if (sample_coords > 0 && t.numel() > sample_coords) {
            for (int64_t i = 0; i < sample_coords; ++i)
                coords.push_back(rng.uniform_int(t.numel()));
        } else {
            coords.resize(static_cast<size_t>(t.numel()));
            for (int64_t i = 0; i < t.numel(); ++i) coords[static_cast<size_t>(i)] = i;
        }
        for (const int64_t j : coords) {
            const double orig = t.at(j);
            t.set(j, orig + h);
            const double lp = loss_value();
            t.set(j, orig - h);
            const double lm = loss_value();
            t.set(j, orig);
            const double numeric = (lp - lm) / (2.0 * h);
            worst = std::max(worst, grad_err(analytic[static_cast<size_t>(j)], numeric));
        }
    }
    return worst;
}

// Mann-Whitney AUC by exhaustive pair enumeration: wins + half ties over all
// (positive, negative) pairs. The production code computes this via a sorted
// sweep; this O(n^2) form is the oracle.
inline double auc_pairwise(const std::vector<double>& scores,
                           const std::vector<int>& is_positive) {
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!is_positive[i]) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (is_positive[j]) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return pairs == 0 ? 0.5 : wins / static_cast<double>(pairs);
}

inline vitssp::Tensor randn_tensor(const vitssp::Shape& shape, vitssp::Rng& rng,
                                   bool requires_grad = true) {
    vitssp::Tensor t = vitssp::Tensor::randn(shape, rng);
    t.set_requires_grad(requires_grad);
    return t;
}

}  // namespace oracles
