#pragma once

#include <cstdint>
#include <vector>

#include "vitcn/model.hpp"

namespace vitcn {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01; // decoupled
};

struct AdamWState {
    AdamWConfig hp;
    int64_t step_count = 0;
    // Moment buffers aligned one-to-one with the parameter list they were
    // initialized from.
    std::vector<std::vector<double>> m, v;
};

AdamWState init_adamw(const std::vector<NamedTensor>& params, AdamWConfig hp = {});

// One decoupled-weight-decay update:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
// A parameter with no populated gradient is treated as g = 0.
void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, double lr);

void zero_gradients(std::vector<NamedTensor>& params);

// Step schedule: base_lr halved once per period.
double lr_at(int64_t epoch, double base_lr, int64_t halving_period_epochs);

} // namespace vitcn
