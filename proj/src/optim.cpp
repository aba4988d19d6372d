#include "vitcn/optim.hpp"

#include <cmath>

namespace vitcn {

AdamWState init_adamw(const std::vector<NamedTensor>& params, AdamWConfig hp) {
    AdamWState state;
    state.hp = hp;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const NamedTensor& p : params) {
        state.m.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
        state.v.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
    return state;
}

void adamw_step(std::vector<NamedTensor>& params, AdamWState& state, double lr) {
    if (lr < 0.0) throw contract_error("adamw_step: negative learning rate");
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw contract_error("adamw_step: optimizer state holds " +
                             std::to_string(state.m.size()) + " buffers for " +
                             std::to_string(params.size()) + " parameters");
    state.step_count += 1;
    const double b1 = state.hp.beta1, b2 = state.hp.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& t = params[k].tensor;
        std::vector<double>& m = state.m[k];
        std::vector<double>& v = state.v[k];
        if (m.size() != static_cast<size_t>(t.numel()))
            throw contract_error("adamw_step: moment shape mismatch for " + params[k].name);
        std::span<double> theta = t.data();
        const bool has_grad = t.has_grad();
        std::span<const double> g =
            has_grad ? std::span<const double>(std::as_const(t).grad()) : std::span<const double>();
        for (size_t i = 0; i < theta.size(); ++i) {
            const double gi = has_grad ? g[i] : 0.0;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / bias1;
            const double vhat = v[i] / bias2;
            theta[i] -= lr * (mhat / (std::sqrt(vhat) + state.hp.eps) +
                              state.hp.weight_decay * theta[i]);
        }
    }
}

void zero_gradients(std::vector<NamedTensor>& params) {
    for (NamedTensor& p : params) p.tensor.zero_grad();
}

double lr_at(int64_t epoch, double base_lr, int64_t halving_period_epochs) {
    if (epoch < 0) throw contract_error("lr_at: negative epoch");
    if (halving_period_epochs <= 0) throw config_error("lr_at: halving period must be positive");
    return base_lr * std::pow(0.5, static_cast<double>(epoch / halving_period_epochs));
}

} // namespace vitcn
