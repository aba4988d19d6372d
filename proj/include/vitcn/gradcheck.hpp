#pragma once

#include <functional>
#include <span>
#include <string>

#include "vitcn/model.hpp"
#include "vitcn/tensor.hpp"

namespace vitcn::gradcheck {

// |g_a - g_n| / max(1, |g_a|, |g_n|)
double relative_error(double analytic, double numeric);

// Central difference of `recompute` with respect to *coord.
double central_diff(const std::function<double()>& recompute, double* coord, double step);

struct Report {
    double max_rel_err = 0.0;
    int64_t checks = 0;
    std::string worst; // human-readable location of the worst coordinate

    void fold(double rel_err, const std::string& where);
};

// Compares tape gradients of scalarize(forward()) against central differences
// over every coordinate of every input; forward must be a pure function of
// the inputs' current data. Scalarization contracts the output with a fixed
// random weight tensor so all output elements receive gradient.
Report check_case(const std::string& name, std::span<Tensor> inputs,
                  const std::function<Tensor()>& forward, Rng& rng, double step = 1e-6);

// Per-op sweep: every differentiable op at `configs_per_op` random small
// configurations each.
Report check_ops(uint64_t seed, int configs_per_op = 100, double step = 1e-6);

// Whole-model sweep through patch embedding, the encoder stack, candidate
// assembly, the rule embedding, contrast, scoring and both loss variants.
// Each draw re-initializes parameters and inputs; finite differences probe
// `coords_per_tensor` coordinates of every named parameter.
Report check_model(const ModelConfig& cfg, uint64_t seed, int draws = 20,
                   int coords_per_tensor = 6, double step = 1e-6);

} // namespace vitcn::gradcheck
