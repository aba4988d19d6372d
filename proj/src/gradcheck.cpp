#include "vitcn/gradcheck.hpp"

#include <cmath>

namespace vitcn::gradcheck {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
}

double central_diff(const std::function<double()>& recompute, double* coord, double step) {
    const double saved = *coord;
    *coord = saved + step;
    const double up = recompute();
    *coord = saved - step;
    const double down = recompute();
    *coord = saved;
    return (up - down) / (2.0 * step);
}

void Report::fold(double rel_err, const std::string& where) {
    ++checks;
    if (rel_err > max_rel_err) {
        max_rel_err = rel_err;
        worst = where;
    }
}

namespace {

double weighted_sum(const Tensor& out, const Tensor& weights) {
    double s = 0.0;
    std::span<const double> o = out.data();
    std::span<const double> w = weights.data();
    for (size_t i = 0; i < o.size(); ++i) s += o[i] * w[i];
    return s;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

} // namespace

Report check_case(const std::string& name, std::span<Tensor> inputs,
                  const std::function<Tensor()>& forward, Rng& rng, double step) {
    for (Tensor& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor probe = forward(); // shape discovery, unrecorded
    Tensor weights = random_tensor(probe.shape(), rng);

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum_all(mul(forward(), weights));
        tape.backward(loss);
    }

    auto recompute = [&] { return weighted_sum(forward(), weights); };

    Report report;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = inputs[k];
        std::span<double> data = t.data();
        for (size_t i = 0; i < data.size(); ++i) {
            const double numeric = central_diff(recompute, &data[i], step);
            const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
            report.fold(relative_error(analytic, numeric),
                        name + " input " + std::to_string(k) + " coord " + std::to_string(i));
        }
        t.zero_grad();
    }
    return report;
}

namespace {

void merge(Report& total, const Report& part) {
    total.checks += part.checks;
    if (part.max_rel_err > total.max_rel_err) {
        total.max_rel_err = part.max_rel_err;
        total.worst = part.worst;
    }
}

} // namespace

Report check_ops(uint64_t seed, int configs_per_op, double step) {
    Rng rng(derive_seed(seed, "gradcheck/ops"));
    Report total;
    auto dim = [&rng] { return rng.uniform_int(1, 4); };

    for (int c = 0; c < configs_per_op; ++c) {
        {
            const int64_t m = dim(), k = dim(), n = dim();
            Tensor in[2] = {random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
            merge(total, check_case("matmul", in, [&] { return matmul(in[0], in[1]); }, rng, step));
        }
        {
            Tensor in[1] = {random_tensor({dim(), dim()}, rng)};
            merge(total, check_case("transpose", in, [&] { return transpose(in[0]); }, rng, step));
        }
        {
            const Shape s{dim(), dim()};
            Tensor in[2] = {random_tensor(s, rng), random_tensor(s, rng)};
            merge(total, check_case("add", in, [&] { return add(in[0], in[1]); }, rng, step));
            merge(total, check_case("sub", in, [&] { return sub(in[0], in[1]); }, rng, step));
            merge(total, check_case("mul", in, [&] { return mul(in[0], in[1]); }, rng, step));
        }
        {
            const double factor = -2.0 + 4.0 * rng.uniform();
            Tensor in[1] = {random_tensor({dim(), dim()}, rng)};
            merge(total, check_case("scale", in, [&] { return scale(in[0], factor); }, rng, step));
        }
        {
            const int64_t m = dim(), n = dim();
            Tensor in[2] = {random_tensor({m, n}, rng), random_tensor({1, n}, rng)};
            merge(total, check_case("add_row", in, [&] { return add_row(in[0], in[1]); }, rng, step));
        }
        {
            const int64_t m = dim(), n = dim();
            Tensor in[1] = {random_tensor({m, n}, rng)};
            merge(total,
                  check_case("reshape", in, [&] { return reshape(in[0], {m * n}); }, rng, step));
        }
        {
            const int64_t n = dim();
            Tensor in[2] = {random_tensor({dim(), n}, rng), random_tensor({dim(), n}, rng)};
            merge(total, check_case("concat_rows", in,
                                    [&] { return concat_rows({in[0], in[1]}); }, rng, step));
        }
        {
            const int64_t m = dim();
            Tensor in[2] = {random_tensor({m, dim()}, rng), random_tensor({m, dim()}, rng)};
            merge(total, check_case("concat_cols", in,
                                    [&] { return concat_cols({in[0], in[1]}); }, rng, step));
        }
        {
            const int64_t m = dim() + 1, n = dim();
            const int64_t begin = rng.uniform_int(0, m - 1);
            const int64_t count = rng.uniform_int(1, m - begin);
            Tensor in[1] = {random_tensor({m, n}, rng)};
            merge(total, check_case("slice_rows", in,
                                    [&] { return slice_rows(in[0], begin, count); }, rng, step));
        }
        {
            const int64_t m = dim(), n = dim() + 1;
            const int64_t begin = rng.uniform_int(0, n - 1);
            const int64_t count = rng.uniform_int(1, n - begin);
            Tensor in[1] = {random_tensor({m, n}, rng)};
            merge(total, check_case("slice_cols", in,
                                    [&] { return slice_cols(in[0], begin, count); }, rng, step));
        }
        {
            const int64_t m = dim(), n = dim();
            std::vector<int64_t> rows(static_cast<size_t>(dim() + 1));
            for (int64_t& r : rows) r = rng.uniform_int(0, m - 1); // repeats exercise accumulation
            Tensor in[1] = {random_tensor({m, n}, rng)};
            merge(total, check_case("gather_rows", in,
                                    [&] { return gather_rows(in[0], rows); }, rng, step));
        }
        {
            const int64_t times = rng.uniform_int(1, 3);
            Tensor in[1] = {random_tensor({dim(), dim()}, rng)};
            merge(total, check_case("tile_rows", in,
                                    [&] { return tile_rows(in[0], times); }, rng, step));
        }
        {
            const int64_t m = dim(), n = dim();
            const int64_t out_len = dim() * dim();
            std::vector<int64_t> map(static_cast<size_t>(out_len));
            for (int64_t& s : map) s = rng.uniform_int(0, m * n - 1);
            Tensor in[1] = {random_tensor({m, n}, rng)};
            merge(total, check_case("reindex", in,
                                    [&] { return reindex(in[0], map, {out_len}); }, rng, step));
        }
        {
            Tensor in[1] = {random_tensor({dim(), dim()}, rng)};
            merge(total, check_case("sum_rows", in, [&] { return sum_rows(in[0]); }, rng, step));
            merge(total, check_case("mean_rows", in, [&] { return mean_rows(in[0]); }, rng, step));
            merge(total, check_case("sum_all", in, [&] { return sum_all(in[0]); }, rng, step));
        }
        {
            const int64_t r = rng.uniform_int(1, 3);
            Shape shape;
            for (int64_t i = 0; i < r; ++i) shape.push_back(dim());
            const int64_t axis = rng.uniform_int(0, r - 1);
            Tensor in[1] = {random_tensor(shape, rng)};
            merge(total,
                  check_case("softmax", in, [&] { return softmax(in[0], axis); }, rng, step));
        }
        {
            const int64_t rows = dim(), d = dim() + 1;
            Tensor in[3] = {random_tensor({rows, d}, rng), random_tensor({d}, rng, 0.5, 1.5),
                            random_tensor({d}, rng)};
            merge(total, check_case("layer_norm", in,
                                    [&] { return layer_norm(in[0], in[1], in[2], 1e-5); }, rng,
                                    step));
        }
        {
            Tensor in[1] = {random_tensor({dim(), dim()}, rng, -3.0, 3.0)};
            merge(total, check_case("gelu", in, [&] { return gelu(in[0]); }, rng, step));
            merge(total, check_case("softplus", in, [&] { return softplus(in[0]); }, rng, step));
        }
        {
            Tensor in[1] = {random_tensor({dim() + 1}, rng, -2.0, 2.0)};
            merge(total, check_case("logsumexp", in, [&] { return logsumexp(in[0]); }, rng, step));
            const int64_t idx = rng.uniform_int(0, in[0].numel() - 1);
            merge(total, check_case("pick", in, [&] { return pick(in[0], idx); }, rng, step));
        }
        {
            const int64_t b = dim() + 1, f = dim();
            Tensor in[3] = {random_tensor({b, f}, rng), random_tensor({1, f}, rng, 0.5, 1.5),
                            random_tensor({1, f}, rng)};
            Tensor rm = Tensor::zeros({1, f});
            Tensor rv = Tensor::full({1, f}, 1.0);
            merge(total, check_case("batch_norm_train", in,
                                    [&] {
                                        return batch_norm_train(in[0], in[1], in[2], rm, rv, 0.1,
                                                                1e-5);
                                    },
                                    rng, step));
            merge(total, check_case("batch_norm_eval", in,
                                    [&] {
                                        return batch_norm_eval(in[0], in[1], in[2], rm, rv, 1e-5);
                                    },
                                    rng, step));
        }
    }
    return total;
}

namespace {

// Random panel bytes; the encoder only sees [0,1] pixels so any byte raster
// is a valid probe input.
std::vector<std::vector<uint8_t>> random_panels(const EncoderConfig& cfg, int64_t count,
                                                Rng& rng) {
    const size_t panel_size =
        static_cast<size_t>(cfg.channels * cfg.image_side * cfg.image_side);
    std::vector<std::vector<uint8_t>> panels(static_cast<size_t>(count));
    for (auto& p : panels) {
        p.resize(panel_size);
        for (uint8_t& v : p) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
    }
    return panels;
}

} // namespace

Report check_model(const ModelConfig& cfg, uint64_t seed, int draws, int coords_per_tensor,
                   double step) {
    cfg.validate();
    Report total;
    constexpr int64_t kBatch = 2; // batch statistics need more than one problem

    for (int draw = 0; draw < draws; ++draw) {
        Rng rng(derive_seed(seed, "gradcheck/model", static_cast<uint64_t>(draw)));
        ModelParams params = init_model_params(cfg, rng.next_u64());

        auto pixel_store = random_panels(cfg.encoder, kBatch * kPanelsPerProblem, rng);
        std::vector<ProblemPanels> batch(static_cast<size_t>(kBatch));
        for (int64_t p = 0; p < kBatch; ++p)
            for (int64_t i = 0; i < kPanelsPerProblem; ++i)
                batch[static_cast<size_t>(p)].panels[static_cast<size_t>(i)] =
                    pixel_store[static_cast<size_t>(p * kPanelsPerProblem + i)];

        std::vector<int64_t> answers(static_cast<size_t>(kBatch));
        for (int64_t& a : answers) a = rng.uniform_int(0, kNumCandidates - 1);

        const LossVariant variant =
            draw % 2 == 0 ? LossVariant::CrossEntropy : LossVariant::Contrast;
        // Freeze running statistics so the finite-difference recomputations
        // see the exact same function the tape saw.
        const Tensor rm0 = params.contrast.bn_running_mean.clone();
        const Tensor rv0 = params.contrast.bn_running_var.clone();
        auto loss_value = [&]() -> double {
            std::copy(rm0.data().begin(), rm0.data().end(),
                      params.contrast.bn_running_mean.data().begin());
            std::copy(rv0.data().begin(), rv0.data().end(),
                      params.contrast.bn_running_var.data().begin());
            std::vector<Tensor> scores = forward_scores(batch, params, cfg, /*training=*/true);
            return batch_loss(scores, answers, variant).item();
        };

        std::vector<NamedTensor> named = trainable_parameters(params);
        for (NamedTensor& nt : named) nt.tensor.zero_grad();

        Tape tape;
        {
            TapeScope scope(tape);
            std::vector<Tensor> scores = forward_scores(batch, params, cfg, /*training=*/true);
            tape.backward(batch_loss(scores, answers, variant));
        }

        for (NamedTensor& nt : named) {
            std::span<double> data = nt.tensor.data();
            const int64_t n = static_cast<int64_t>(data.size());
            for (int c = 0; c < coords_per_tensor; ++c) {
                const int64_t i = n <= coords_per_tensor ? c : rng.uniform_int(0, n - 1);
                if (i >= n) break;
                const double numeric =
                    central_diff(loss_value, &data[static_cast<size_t>(i)], step);
                const double analytic =
                    nt.tensor.has_grad() ? nt.tensor.grad()[static_cast<size_t>(i)] : 0.0;
                total.fold(relative_error(analytic, numeric),
                           "draw " + std::to_string(draw) + " (" + loss_variant_name(variant) +
                               ") " + nt.name + "[" + std::to_string(i) + "]");
            }
            nt.tensor.zero_grad();
        }
    }
    return total;
}

} // namespace vitcn::gradcheck
