#include "vitcn/model.hpp"

namespace vitcn {

LossVariant loss_variant_from_name(const std::string& name) {
    if (name == "ce") return LossVariant::CrossEntropy;
    if (name == "contrast") return LossVariant::Contrast;
    throw config_error("unknown loss variant '" + name + "' (expected ce or contrast)");
}

std::string loss_variant_name(LossVariant v) {
    return v == LossVariant::CrossEntropy ? "ce" : "contrast";
}

void ModelConfig::validate() const {
    encoder.validate();
    contrast.validate();
    if (contrast.feature_dim != feature_dim(encoder, readout))
        throw config_error("model config: contrast feature_dim " +
                           std::to_string(contrast.feature_dim) +
                           " does not match encoder readout width " +
                           std::to_string(feature_dim(encoder, readout)));
}

ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.encoder.image_side = 96;
    cfg.encoder.patch_side = 16;
    cfg.encoder.channels = 1;
    cfg.encoder.embed_dim = 64;
    cfg.encoder.num_layers = 4;
    cfg.encoder.num_heads = 4;
    cfg.encoder.mlp_hidden = 128;
    cfg.readout = FeatureReadout::ClassToken;
    cfg.contrast.feature_dim = feature_dim(cfg.encoder, cfg.readout);
    cfg.contrast.d_f = 64;
    cfg.contrast.rule_count = 8;
    cfg.contrast.score_hidden = 64;
    cfg.preset = "desk";
    return cfg;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.encoder.image_side = 96;
    cfg.encoder.patch_side = 48; // 4 patches
    cfg.encoder.channels = 1;
    cfg.encoder.embed_dim = 16;
    cfg.encoder.num_layers = 2;
    cfg.encoder.num_heads = 2;
    cfg.encoder.mlp_hidden = 32;
    cfg.readout = FeatureReadout::ClassToken;
    cfg.contrast.feature_dim = feature_dim(cfg.encoder, cfg.readout);
    cfg.contrast.d_f = 16;
    cfg.contrast.rule_count = 4;
    cfg.contrast.score_hidden = 16;
    cfg.preset = "tiny";
    return cfg;
}

ModelConfig preset_config(const std::string& name) {
    if (name == "desk") return desk_config();
    if (name == "tiny") return tiny_config();
    throw config_error("unknown preset '" + name + "' (expected tiny or desk)");
}

ModelParams init_model_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    Rng enc_rng(derive_seed(seed, "init/encoder"));
    p.encoder = init_encoder_params(cfg.encoder, enc_rng);
    Rng con_rng(derive_seed(seed, "init/contrast"));
    p.contrast = init_contrast_params(cfg.contrast, con_rng);
    return p;
}

std::vector<NamedTensor> trainable_parameters(ModelParams& params) {
    std::vector<NamedTensor> out;
    out.push_back({"patch.proj", params.encoder.patch.proj});
    out.push_back({"patch.pos", params.encoder.patch.pos});
    out.push_back({"patch.cls", params.encoder.patch.cls});
    for (size_t i = 0; i < params.encoder.blocks.size(); ++i) {
        EncoderBlockParams& b = params.encoder.blocks[i];
        const std::string pre = "block" + std::to_string(i) + ".";
        out.push_back({pre + "ln1.gamma", b.ln1_gamma});
        out.push_back({pre + "ln1.beta", b.ln1_beta});
        out.push_back({pre + "wq", b.wq});
        out.push_back({pre + "bq", b.bq});
        out.push_back({pre + "wk", b.wk});
        out.push_back({pre + "bk", b.bk});
        out.push_back({pre + "wv", b.wv});
        out.push_back({pre + "bv", b.bv});
        out.push_back({pre + "wo", b.wo});
        out.push_back({pre + "bo", b.bo});
        out.push_back({pre + "ln2.gamma", b.ln2_gamma});
        out.push_back({pre + "ln2.beta", b.ln2_beta});
        out.push_back({pre + "mlp.w1", b.w1});
        out.push_back({pre + "mlp.b1", b.b1});
        out.push_back({pre + "mlp.w2", b.w2});
        out.push_back({pre + "mlp.b2", b.b2});
    }
    ContrastParams& c = params.contrast;
    out.push_back({"contrast.g.w", c.g_w});
    out.push_back({"contrast.g.b", c.g_b});
    out.push_back({"contrast.rule.codebook", c.rule_codebook});
    out.push_back({"contrast.rule.attn_w", c.rule_attn_w});
    out.push_back({"contrast.rule.attn_b", c.rule_attn_b});
    out.push_back({"contrast.bn.gamma", c.bn_gamma});
    out.push_back({"contrast.bn.beta", c.bn_beta});
    out.push_back({"contrast.h.w", c.h_w});
    out.push_back({"contrast.h.b", c.h_b});
    out.push_back({"contrast.f.w1", c.f_w1});
    out.push_back({"contrast.f.b1", c.f_b1});
    out.push_back({"contrast.f.w2", c.f_w2});
    out.push_back({"contrast.f.b2", c.f_b2});
    out.push_back({"contrast.b.w1", c.b_w1});
    out.push_back({"contrast.b.b1", c.b_b1});
    out.push_back({"contrast.b.w2", c.b_w2});
    out.push_back({"contrast.b.b2", c.b_b2});
    return out;
}

std::vector<NamedTensor> state_tensors(ModelParams& params) {
    return {
        {"contrast.bn.running_mean", params.contrast.bn_running_mean},
        {"contrast.bn.running_var", params.contrast.bn_running_var},
    };
}

int64_t parameter_count(ModelParams& params) {
    int64_t n = 0;
    for (const NamedTensor& p : trainable_parameters(params)) n += p.tensor.numel();
    return n;
}

namespace {

Tensor problem_token_tensor(const ProblemPanels& problem, const EncoderConfig& cfg) {
    std::vector<double> data;
    data.reserve(static_cast<size_t>(kPanelsPerProblem * cfg.tokens() * cfg.patch_len()));
    for (const auto& panel : problem.panels) append_panel_tokens(panel, cfg, data);
    return Tensor::from_data({kPanelsPerProblem * cfg.tokens(), cfg.patch_len()}, std::move(data));
}

} // namespace

std::vector<Tensor> forward_scores(const std::vector<ProblemPanels>& batch, ModelParams& params,
                                   const ModelConfig& cfg, bool training) {
    if (batch.empty()) throw contract_error("forward_scores: empty batch");
    const int64_t b = static_cast<int64_t>(batch.size());

    std::vector<Tensor> embeddings; // rule-augmented F_{O u a}, one [8, d_f] per problem
    embeddings.reserve(batch.size());
    std::vector<Tensor> aggregates;
    aggregates.reserve(batch.size());

    for (const ProblemPanels& problem : batch) {
        Tensor tokens = problem_token_tensor(problem, cfg.encoder);
        Tensor z = encode_tokens_packed(tokens, params.encoder, cfg.encoder, kPanelsPerProblem);
        Tensor features = readout_features(z, cfg.encoder, cfg.readout, kPanelsPerProblem);
        Tensor context = slice_rows(features, 0, kNumContext);
        Tensor candidates = slice_rows(features, kNumContext, kNumCandidates);
        Tensor emb = assemble_candidate_embeddings(context, candidates, params.contrast);
        Tensor rule = infer_rule_embedding(context, params.contrast);
        Tensor emb_rule = add_row(emb, rule); // inference branch feeds back
        embeddings.push_back(emb_rule);
        aggregates.push_back(candidate_aggregate(emb_rule));
    }

    Tensor agg_batch = b == 1 ? aggregates[0] : concat_rows(aggregates);
    Tensor h_rows = apply_h(agg_batch, params.contrast, training);

    std::vector<Tensor> scores;
    scores.reserve(batch.size());
    for (int64_t p = 0; p < b; ++p) {
        Tensor contrasted = contrast_with(embeddings[static_cast<size_t>(p)],
                                          b == 1 ? h_rows : slice_rows(h_rows, p, 1));
        scores.push_back(score_candidates(contrasted, params.contrast));
    }
    return scores;
}

Tensor batch_loss(const std::vector<Tensor>& scores, const std::vector<int64_t>& answers,
                  LossVariant variant) {
    if (scores.empty() || scores.size() != answers.size())
        throw contract_error("batch_loss: scores/answers size mismatch");
    Tensor total;
    for (size_t p = 0; p < scores.size(); ++p) {
        Tensor l = variant == LossVariant::CrossEntropy
                       ? cross_entropy_loss(scores[p], answers[p])
                       : contrast_loss(scores[p], answers[p]);
        total = p == 0 ? l : add(total, l);
    }
    return scale(total, 1.0 / static_cast<double>(scores.size()));
}

std::array<double, kNumCandidates> score_problem(const ProblemPanels& problem, ModelParams& params,
                                                 const ModelConfig& cfg) {
    std::vector<Tensor> scores = forward_scores({problem}, params, cfg, /*training=*/false);
    std::array<double, kNumCandidates> out{};
    for (int64_t a = 0; a < kNumCandidates; ++a)
        out[static_cast<size_t>(a)] = scores[0].data()[static_cast<size_t>(a)];
    return out;
}

} // namespace vitcn
