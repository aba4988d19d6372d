#pragma once

#include <cstdint>
#include <span>

#include "vitcn/tensor.hpp"

namespace vitcn {

inline constexpr int64_t kNumCandidates = 8;
inline constexpr int64_t kNumContext = 8;

struct ContrastConfig {
    int64_t feature_dim = 64;  // panel feature length coming out of the encoder
    int64_t d_f = 64;          // reasoning feature width
    int64_t rule_count = 8;    // codebook rows, K
    int64_t score_hidden = 64; // hidden width of the f/b heads
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    void validate() const;
};

struct ContrastParams {
    // g: joint projection of (context_1..8, candidate) onto the reasoning space.
    Tensor g_w; // [9*feature_dim, d_f]
    Tensor g_b; // [1, d_f]

    // Inference branch: attention from pooled context onto a rule codebook.
    Tensor rule_codebook; // [K, d_f]
    Tensor rule_attn_w;   // [feature_dim, K]
    Tensor rule_attn_b;   // [1, K]

    // h = normalization then a square linear map, applied to the summed
    // candidate embeddings.
    Tensor bn_gamma, bn_beta;               // [1, d_f]
    Tensor bn_running_mean, bn_running_var; // state, not trained
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    Tensor h_w; // [d_f, d_f]
    Tensor h_b; // [1, d_f]

    // Perception score f and baseline score b, structurally identical MLPs.
    Tensor f_w1, f_b1, f_w2, f_b2; // [d_f,hidden],[1,hidden],[hidden,1],[1,1]
    Tensor b_w1, b_b1, b_w2, b_b2;
};

ContrastParams init_contrast_params(const ContrastConfig& cfg, Rng& rng);

// F_{O u a} per candidate: concat(context row-major, candidate_a) projected by
// g. context and candidates are [8, feature_dim]; result is [8, d_f].
Tensor assemble_candidate_embeddings(const Tensor& context, const Tensor& candidates,
                                     const ContrastParams& params);

// Inference branch: mean-pooled context -> attention over the codebook ->
// convex mixture of rule vectors, [1, d_f].
Tensor infer_rule_embedding(const Tensor& context, const ContrastParams& params);

// Sum over the candidate set, computed once per problem: [8, d_f] -> [1, d_f].
Tensor candidate_aggregate(const Tensor& embeddings);

// h applied to a batch of aggregates [B, d_f]. Training mode uses batch
// statistics (and updates the running buffers); eval mode uses the running
// buffers only.
Tensor apply_h(const Tensor& aggregates, ContrastParams& params, bool training);

// Per-candidate contrast: embeddings minus the (shared) transformed aggregate.
Tensor contrast_with(const Tensor& embeddings, const Tensor& h_row);

// Whole contrast op for a single problem in eval mode.
Tensor contrast(const Tensor& embeddings, ContrastParams& params);

// s_a = f(c_a) - b(c_a), per candidate; [8, d_f] -> [8].
Tensor score_candidates(const Tensor& contrasted, const ContrastParams& params);

// Negated Eq-style contrast objective: softplus(-s_star) + sum softplus(s_other).
Tensor contrast_loss(const Tensor& scores, int64_t answer_index);

// -log softmax(scores)[answer_index] in log-sum-exp form.
Tensor cross_entropy_loss(const Tensor& scores, int64_t answer_index);

// Argmax with ties broken toward the lowest index.
int64_t predict(std::span<const double> scores);
int64_t predict(const Tensor& scores);

} // namespace vitcn
