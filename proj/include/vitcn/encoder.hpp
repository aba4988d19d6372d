#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vitcn/tensor.hpp"

namespace vitcn {

// Static geometry of the panel encoder.
struct EncoderConfig {
    int64_t image_side = 96; // W
    int64_t patch_side = 16; // P
    int64_t channels = 1;    // C
    int64_t embed_dim = 64;  // D
    int64_t num_layers = 4;  // L
    int64_t num_heads = 4;   // H
    int64_t mlp_hidden = 128;

    void validate() const;
    int64_t grid_side() const { return image_side / patch_side; }
    int64_t tokens() const { return grid_side() * grid_side(); }     // (W/P)^2
    int64_t patch_len() const { return patch_side * patch_side * channels; }
    int64_t seq_len() const { return tokens() + 1; } // class token included
    int64_t head_dim() const { return embed_dim / num_heads; }
};

// How a panel feature vector is read out of the final token sequence.
enum class FeatureReadout : uint8_t {
    ClassToken = 0, // row 0 of z_L
    FlattenAll = 1, // all of z_L flattened to one row
};

int64_t feature_dim(const EncoderConfig& cfg, FeatureReadout readout);

struct PatchEmbedParams {
    Tensor proj; // [P^2*C, D]
    Tensor pos;  // [tokens+1, D]
    Tensor cls;  // [1, D]
};

struct EncoderBlockParams {
    Tensor ln1_gamma, ln1_beta; // [D]
    // Head h occupies the column block [h*head_dim, (h+1)*head_dim) of each
    // projection, so these are the per-head Q/K/V maps stored side by side.
    Tensor wq, bq; // [D, D], [1, D]
    Tensor wk, bk;
    Tensor wv, bv;
    Tensor wo, bo; // output projection
    Tensor ln2_gamma, ln2_beta;
    Tensor w1, b1; // [D, mlp_hidden]
    Tensor w2, b2; // [mlp_hidden, D]
};

struct EncoderParams {
    PatchEmbedParams patch;
    std::vector<EncoderBlockParams> blocks;
};

EncoderParams init_encoder_params(const EncoderConfig& cfg, Rng& rng);

// Flat source index per output element of the patch rearrangement; shared by
// patchify and the raw-pixel tokenizer.
std::vector<int64_t> patch_index_map(const EncoderConfig& cfg);

// [C, W, W] image -> [(W/P)^2, P^2*C] token matrix. Patches are ordered
// row-major over the patch grid, pixels row-major inside each patch
// (channel outermost), so the rearrangement is invertible.
Tensor patchify(const Tensor& image, int64_t patch_side);
Tensor unpatchify(const Tensor& tokens, const EncoderConfig& cfg);

// Eq-style patch embedding: row 0 is the class token, row i>0 is token_i *
// proj, all offset by the positional table.
Tensor embed(const Tensor& tokens, const PatchEmbedParams& params);

// Multi-headed self-attention over one token sequence [S, D].
Tensor msa(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads);

// Pre-norm residual block: z + MSA(LN(z)), then + MLP(LN(.)).
Tensor encoder_block(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads);

// Several independent sequences stacked as consecutive row blocks of length
// seq_len; attention never crosses a block boundary.
Tensor msa_packed(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads,
                  int64_t seq_len);
Tensor encoder_block_packed(const Tensor& z, const EncoderBlockParams& params, int64_t num_heads,
                            int64_t seq_len);

// Appends one panel's token matrix (pixels scaled to [0,1]) to `out`.
void append_panel_tokens(std::span<const uint8_t> pixels, const EncoderConfig& cfg,
                         std::vector<double>& out);

// Full encoder over `num_panels` panels packed into one token tensor
// [num_panels*tokens, P^2*C]; returns the final token sequences
// [num_panels*seq_len, D].
Tensor encode_tokens_packed(const Tensor& tokens, const EncoderParams& params,
                            const EncoderConfig& cfg, int64_t num_panels);

// Panel features [num_panels, feature_dim] read out of the packed encoding.
Tensor readout_features(const Tensor& z_final, const EncoderConfig& cfg, FeatureReadout readout,
                        int64_t num_panels);

// Single panel convenience: [C, W, W] image tensor -> [1, feature_dim].
Tensor encode_panel(const Tensor& image, const EncoderParams& params, const EncoderConfig& cfg,
                    FeatureReadout readout);

} // namespace vitcn
