#include "vitcn/contrast.hpp"

namespace vitcn {

void ContrastConfig::validate() const {
    if (feature_dim <= 0 || d_f <= 0 || rule_count <= 0 || score_hidden <= 0)
        throw config_error("contrast config: all dimensions must be positive");
    if (bn_eps <= 0.0) throw config_error("contrast config: bn_eps must be positive");
}

ContrastParams init_contrast_params(const ContrastConfig& cfg, Rng& rng) {
    cfg.validate();
    ContrastParams p;
    auto tn = [&rng](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        fill_trunc_normal(t, rng, 0.02);
        t.set_requires_grad(true);
        return t;
    };
    auto zeros = [](Shape shape) { return Tensor::zeros(std::move(shape)).set_requires_grad(true); };

    p.g_w = tn({(kNumContext + 1) * cfg.feature_dim, cfg.d_f});
    p.g_b = zeros({1, cfg.d_f});
    p.rule_codebook = tn({cfg.rule_count, cfg.d_f});
    p.rule_attn_w = tn({cfg.feature_dim, cfg.rule_count});
    p.rule_attn_b = zeros({1, cfg.rule_count});
    p.bn_gamma = Tensor::full({1, cfg.d_f}, 1.0).set_requires_grad(true);
    p.bn_beta = zeros({1, cfg.d_f});
    p.bn_running_mean = Tensor::zeros({1, cfg.d_f});
    p.bn_running_var = Tensor::full({1, cfg.d_f}, 1.0);
    p.bn_eps = cfg.bn_eps;
    p.bn_momentum = cfg.bn_momentum;
    p.h_w = tn({cfg.d_f, cfg.d_f});
    p.h_b = zeros({1, cfg.d_f});
    p.f_w1 = tn({cfg.d_f, cfg.score_hidden});
    p.f_b1 = zeros({1, cfg.score_hidden});
    p.f_w2 = tn({cfg.score_hidden, 1});
    p.f_b2 = zeros({1, 1});
    p.b_w1 = tn({cfg.d_f, cfg.score_hidden});
    p.b_b1 = zeros({1, cfg.score_hidden});
    p.b_w2 = tn({cfg.score_hidden, 1});
    p.b_b2 = zeros({1, 1});
    return p;
}

Tensor assemble_candidate_embeddings(const Tensor& context, const Tensor& candidates,
                                     const ContrastParams& params) {
    if (context.rank() != 2 || context.dim(0) != kNumContext)
        throw shape_error("assemble: context must be [8, feature_dim], got " +
                          shape_str(context.shape()));
    if (candidates.shape() != context.shape())
        throw shape_error("assemble: candidates " + shape_str(candidates.shape()) +
                          " do not match context " + shape_str(context.shape()));
    const int64_t fd = context.dim(1);
    Tensor context_flat = reshape(context, {1, kNumContext * fd});
    std::vector<Tensor> rows;
    rows.reserve(kNumCandidates);
    for (int64_t a = 0; a < kNumCandidates; ++a)
        rows.push_back(concat_cols({context_flat, slice_rows(candidates, a, 1)}));
    Tensor joined = concat_rows(rows); // [8, 9*feature_dim]
    return add_row(matmul(joined, params.g_w), params.g_b);
}

Tensor infer_rule_embedding(const Tensor& context, const ContrastParams& params) {
    Tensor pooled = mean_rows(context); // [1, feature_dim]
    Tensor logits = add_row(matmul(pooled, params.rule_attn_w), params.rule_attn_b);
    Tensor weights = softmax(logits, 1); // convex over the codebook
    return matmul(weights, params.rule_codebook);
}

Tensor candidate_aggregate(const Tensor& embeddings) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != kNumCandidates)
        throw shape_error("candidate_aggregate: expected [8, d_f], got " +
                          shape_str(embeddings.shape()));
    return sum_rows(embeddings);
}

Tensor apply_h(const Tensor& aggregates, ContrastParams& params, bool training) {
    Tensor normalized =
        training ? batch_norm_train(aggregates, params.bn_gamma, params.bn_beta,
                                    params.bn_running_mean, params.bn_running_var,
                                    params.bn_momentum, params.bn_eps)
                 : batch_norm_eval(aggregates, params.bn_gamma, params.bn_beta,
                                   params.bn_running_mean, params.bn_running_var, params.bn_eps);
    return add_row(matmul(normalized, params.h_w), params.h_b);
}

Tensor contrast_with(const Tensor& embeddings, const Tensor& h_row) {
    if (h_row.rank() != 2 || h_row.dim(0) != 1 || h_row.dim(1) != embeddings.dim(1))
        throw shape_error("contrast_with: h row " + shape_str(h_row.shape()) +
                          " does not match embeddings " + shape_str(embeddings.shape()));
    return add_row(embeddings, scale(h_row, -1.0));
}

Tensor contrast(const Tensor& embeddings, ContrastParams& params) {
    Tensor agg = candidate_aggregate(embeddings);
    Tensor h_row = apply_h(agg, params, /*training=*/false);
    return contrast_with(embeddings, h_row);
}

namespace {

Tensor mlp_head(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                const Tensor& b2) {
    Tensor hidden = gelu(add_row(matmul(x, w1), b1));
    return add_row(matmul(hidden, w2), b2); // [n, 1]
}

} // namespace

Tensor score_candidates(const Tensor& contrasted, const ContrastParams& params) {
    if (contrasted.rank() != 2 || contrasted.dim(0) != kNumCandidates)
        throw shape_error("score_candidates: expected [8, d_f], got " +
                          shape_str(contrasted.shape()));
    Tensor f = mlp_head(contrasted, params.f_w1, params.f_b1, params.f_w2, params.f_b2);
    Tensor b = mlp_head(contrasted, params.b_w1, params.b_b1, params.b_w2, params.b_b2);
    return reshape(sub(f, b), {kNumCandidates});
}

namespace {

void check_answer_index(const Tensor& scores, int64_t answer_index) {
    if (answer_index < 0 || answer_index >= scores.numel())
        throw contract_error("answer index " + std::to_string(answer_index) +
                             " outside [0, " + std::to_string(scores.numel()) + ")");
}

} // namespace

Tensor contrast_loss(const Tensor& scores, int64_t answer_index) {
    check_answer_index(scores, answer_index);
    // -log sigmoid(s) = softplus(-s); -log(1 - sigmoid(s)) = softplus(s).
    Tensor loss = softplus(scale(pick(scores, answer_index), -1.0));
    for (int64_t a = 0; a < scores.numel(); ++a) {
        if (a == answer_index) continue;
        loss = add(loss, softplus(pick(scores, a)));
    }
    return loss;
}

Tensor cross_entropy_loss(const Tensor& scores, int64_t answer_index) {
    check_answer_index(scores, answer_index);
    return sub(logsumexp(scores), pick(scores, answer_index));
}

int64_t predict(std::span<const double> scores) {
    int64_t best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = static_cast<int64_t>(i);
    return best;
}

int64_t predict(const Tensor& scores) { return predict(std::span<const double>(scores.data())); }

} // namespace vitcn
