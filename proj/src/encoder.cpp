#include "vitcn/encoder.hpp"

#include <cmath>

namespace vitcn {

void EncoderConfig::validate() const {
    if (image_side <= 0 || patch_side <= 0 || channels <= 0 || embed_dim <= 0 ||
        num_layers <= 0 || num_heads <= 0 || mlp_hidden <= 0)
        throw config_error("encoder config: all dimensions must be positive");
    if (image_side % patch_side != 0)
        throw config_error("encoder config: image side " + std::to_string(image_side) +
                           " is not divisible by patch side " + std::to_string(patch_side));
    if (embed_dim % num_heads != 0)
        throw config_error("encoder config: embed dim " + std::to_string(embed_dim) +
                           " is not divisible by head count " + std::to_string(num_heads));
}

int64_t feature_dim(const EncoderConfig& cfg, FeatureReadout readout) {
    return readout == FeatureReadout::ClassToken ? cfg.embed_dim : cfg.seq_len() * cfg.embed_dim;
}

EncoderParams init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    const int64_t d = cfg.embed_dim;
    auto tn = [&rng](Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        fill_trunc_normal(t, rng, 0.02);
        t.set_requires_grad(true);
        return t;
    };
    auto zeros = [](Shape shape) { return Tensor::zeros(std::move(shape)).set_requires_grad(true); };
    auto ones = [](Shape shape) {
        return Tensor::full(std::move(shape), 1.0).set_requires_grad(true);
    };

    p.patch.proj = tn({cfg.patch_len(), d});
    p.patch.pos = tn({cfg.seq_len(), d});
    p.patch.cls = tn({1, d});

    p.blocks.reserve(static_cast<size_t>(cfg.num_layers));
    for (int64_t l = 0; l < cfg.num_layers; ++l) {
        EncoderBlockParams b;
        b.ln1_gamma = ones({d});
        b.ln1_beta = zeros({d});
        b.wq = tn({d, d});
        b.bq = zeros({1, d});
        b.wk = tn({d, d});
        b.bk = zeros({1, d});
        b.wv = tn({d, d});
        b.bv = zeros({1, d});
        b.wo = tn({d, d});
        b.bo = zeros({1, d});
        b.ln2_gamma = ones({d});
        b.ln2_beta = zeros({d});
        b.w1 = tn({d, cfg.mlp_hidden});
        b.b1 = zeros({1, cfg.mlp_hidden});
        b.w2 = tn({cfg.mlp_hidden, d});
        b.b2 = zeros({1, d});
        p.blocks.push_back(std::move(b));
    }
    return p;
}

std::vector<int64_t> patch_index_map(const EncoderConfig& cfg) {
    const int64_t w = cfg.image_side, p = cfg.patch_side, c = cfg.channels;
    const int64_t g = cfg.grid_side();
    std::vector<int64_t> map;
    map.reserve(static_cast<size_t>(cfg.tokens() * cfg.patch_len()));
    for (int64_t pr = 0; pr < g; ++pr)
        for (int64_t pc = 0; pc < g; ++pc)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < p; ++i)
                    for (int64_t j = 0; j < p; ++j)
                        map.push_back(ch * w * w + (pr * p + i) * w + (pc * p + j));
    return map;
}

Tensor patchify(const Tensor& image, int64_t patch_side) {
    if (image.rank() != 3)
        throw shape_error("patchify expects a [C, W, W] image, got " + shape_str(image.shape()));
    EncoderConfig cfg;
    cfg.channels = image.dim(0);
    cfg.image_side = image.dim(1);
    cfg.patch_side = patch_side;
    if (image.dim(2) != cfg.image_side)
        throw shape_error("patchify expects a square image, got " + shape_str(image.shape()));
    if (cfg.image_side % patch_side != 0)
        throw config_error("patchify: image side " + std::to_string(cfg.image_side) +
                           " is not divisible by patch side " + std::to_string(patch_side));
    return reindex(image, patch_index_map(cfg), {cfg.tokens(), cfg.patch_len()});
}

Tensor unpatchify(const Tensor& tokens, const EncoderConfig& cfg) {
    if (tokens.shape() != Shape{cfg.tokens(), cfg.patch_len()})
        throw shape_error("unpatchify: token matrix " + shape_str(tokens.shape()) +
                          " does not match config " +
                          shape_str({cfg.tokens(), cfg.patch_len()}));
    const std::vector<int64_t> fwd = patch_index_map(cfg);
    std::vector<int64_t> inv(fwd.size());
    for (size_t i = 0; i < fwd.size(); ++i) inv[static_cast<size_t>(fwd[i])] = static_cast<int64_t>(i);
    return reindex(tokens, inv, {cfg.channels, cfg.image_side, cfg.image_side});
}

Tensor embed(const Tensor& tokens, const PatchEmbedParams& params) {
    if (tokens.rank() != 2 || tokens.dim(1) != params.proj.dim(0))
        throw shape_error("embed: tokens " + shape_str(tokens.shape()) +
                          " do not match projection " + shape_str(params.proj.shape()));
    Tensor projected = matmul(tokens, params.proj);
    Tensor stacked = concat_rows({params.cls, projected});
    return add(stacked, params.pos);
}

namespace {

// Attention for one sequence already sliced out of the packed tensor.
Tensor attend_sequence(const Tensor& q, const Tensor& k, const Tensor& v, int64_t num_heads) {
    const int64_t d = q.dim(1);
    const int64_t hd = d / num_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(num_heads));
    for (int64_t h = 0; h < num_heads; ++h) {
        Tensor qh = slice_cols(q, h * hd, hd);
        Tensor kh = slice_cols(k, h * hd, hd);
        Tensor vh = slice_cols(v, h * hd, hd);
        Tensor logits = scale(matmul(qh, transpose(kh)), inv_scale);
        Tensor attn = softmax(logits, 1); // rows sum to 1
        heads.push_back(matmul(attn, vh));
    }
    return num_heads == 1 ? heads[0] : concat_cols(heads);
}

} // namespace

Tensor msa_packed(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads,
                  int64_t seq_len) {
    const int64_t total = z.dim(0);
    if (total % seq_len != 0)
        throw shape_error("msa_packed: rows of " + shape_str(z.shape()) +
                          " are not a multiple of sequence length " + std::to_string(seq_len));
    const int64_t num_seqs = total / seq_len;
    Tensor q = add_row(matmul(z, params.wq), params.bq);
    Tensor k = add_row(matmul(z, params.wk), params.bk);
    Tensor v = add_row(matmul(z, params.wv), params.bv);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(num_seqs));
    for (int64_t s = 0; s < num_seqs; ++s) {
        Tensor qs = slice_rows(q, s * seq_len, seq_len);
        Tensor ks = slice_rows(k, s * seq_len, seq_len);
        Tensor vs = slice_rows(v, s * seq_len, seq_len);
        outs.push_back(attend_sequence(qs, ks, vs, num_heads));
    }
    Tensor merged = num_seqs == 1 ? outs[0] : concat_rows(outs);
    return add_row(matmul(merged, params.wo), params.bo);
}

Tensor msa(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads) {
    return msa_packed(z, params, num_heads, z.dim(0));
}

Tensor encoder_block_packed(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads,
                            int64_t seq_len) {
    Tensor attn_in = layer_norm(z, params.ln1_gamma, params.ln1_beta, 1e-6);
    Tensor z_mid = add(msa_packed(attn_in, params, num_heads, seq_len), z);
    Tensor mlp_in = layer_norm(z_mid, params.ln2_gamma, params.ln2_beta, 1e-6);
    Tensor hidden = gelu(add_row(matmul(mlp_in, params.w1), params.b1));
    Tensor mlp_out = add_row(matmul(hidden, params.w2), params.b2);
    return add(mlp_out, z_mid);
}

Tensor encoder_block(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads) {
    return encoder_block_packed(z, params, num_heads, z.dim(0));
}

void append_panel_tokens(std::span<const uint8_t> pixels, const EncoderConfig& cfg,
                         std::vector<double>& out) {
    const std::vector<int64_t> map = patch_index_map(cfg);
    if (static_cast<int64_t>(pixels.size()) != cfg.channels * cfg.image_side * cfg.image_side)
        throw shape_error("panel pixel count " + std::to_string(pixels.size()) +
                          " does not match config image size");
    out.reserve(out.size() + map.size());
    for (int64_t src : map) out.push_back(static_cast<double>(pixels[static_cast<size_t>(src)]) / 255.0);
}

Tensor encode_tokens_packed(const Tensor& tokens, const EncoderParams& params,
                            const EncoderConfig& cfg, int64_t num_panels) {
    if (tokens.rank() != 2 || tokens.dim(0) != num_panels * cfg.tokens() ||
        tokens.dim(1) != cfg.patch_len())
        throw shape_error("encode_tokens_packed: tokens " + shape_str(tokens.shape()) +
                          " do not match " + std::to_string(num_panels) + " panels of config");
    Tensor projected = matmul(tokens, params.patch.proj);
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(2 * num_panels));
    for (int64_t p = 0; p < num_panels; ++p) {
        rows.push_back(params.patch.cls);
        rows.push_back(slice_rows(projected, p * cfg.tokens(), cfg.tokens()));
    }
    Tensor stacked = concat_rows(rows);
    Tensor pos = num_panels == 1 ? params.patch.pos : tile_rows(params.patch.pos, num_panels);
    Tensor z = add(stacked, pos);
    for (const EncoderBlockParams& block : params.blocks)
        z = encoder_block_packed(z, block, cfg.num_heads, cfg.seq_len());
    return z;
}

Tensor readout_features(const Tensor& z_final, const EncoderConfig& cfg, FeatureReadout readout,
                        int64_t num_panels) {
    const int64_t s = cfg.seq_len();
    if (z_final.dim(0) != num_panels * s)
        throw shape_error("readout_features: " + shape_str(z_final.shape()) + " does not hold " +
                          std::to_string(num_panels) + " sequences of length " + std::to_string(s));
    if (readout == FeatureReadout::ClassToken) {
        std::vector<int64_t> cls_rows;
        cls_rows.reserve(static_cast<size_t>(num_panels));
        for (int64_t p = 0; p < num_panels; ++p) cls_rows.push_back(p * s);
        return gather_rows(z_final, cls_rows);
    }
    std::vector<Tensor> flat;
    flat.reserve(static_cast<size_t>(num_panels));
    for (int64_t p = 0; p < num_panels; ++p)
        flat.push_back(reshape(slice_rows(z_final, p * s, s), {1, s * cfg.embed_dim}));
    return num_panels == 1 ? flat[0] : concat_rows(flat);
}

Tensor encode_panel(const Tensor& image, const EncoderParams& params, const EncoderConfig& cfg,
                    FeatureReadout readout) {
    Tensor tokens = patchify(image, cfg.patch_side);
    Tensor z = encode_tokens_packed(tokens, params, cfg, 1);
    return readout_features(z, cfg, readout, 1);
}

} // namespace vitcn
