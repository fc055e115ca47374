#pragma once

#include <vector>

#include "vitssp/nn.hpp"

namespace vitssp {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; shrinks the weight before the step
};

// Adam with decoupled weight decay. Moments are kept in f64 regardless of the
// parameter dtype. Parameters whose grad was never produced are skipped.
class Adam {
public:
    Adam(NamedTensors params, AdamConfig cfg);

    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int64_t steps_taken() const { return t_; }

private:
    NamedTensors params_;
    AdamConfig cfg_;
    double lr_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Halves the lr once a monitored loss has gone `patience` epochs past its
// best without improving by more than `threshold`; never drops below min_lr.
class ReduceLROnPlateau {
public:
    ReduceLROnPlateau(double factor = 0.5, int patience = 2, double min_lr = 1e-6,
                      double threshold = 1e-4)
        : factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {}

    double update(double metric, double current_lr);
    int bad_epochs() const { return bad_; }
    double best() const { return best_; }

private:
    double factor_;
    int patience_;
    double min_lr_;
    double threshold_;
    double best_ = 1e300;
    int bad_ = 0;
};

// Signals stop after `patience` epochs without an improvement stronger than
// min_delta (strict); remembers which epoch was best so callers can restore
// that snapshot.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience = 3, double min_delta = 1e-4)
        : patience_(patience), min_delta_(min_delta) {}

    bool update(double metric, int epoch);
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }
    bool improved_last() const { return improved_last_; }

private:
    int patience_;
    double min_delta_;
    double best_ = 1e300;
    int best_epoch_ = -1;
    int bad_ = 0;
    bool improved_last_ = false;
};

}  // namespace vitssp
