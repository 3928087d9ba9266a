#pragma once

#include "diarkit/tensor.hpp"

#include <string>
#include <utility>

namespace diarkit {

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

struct LinearLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    // Xavier-uniform weight, zero bias.
    static LinearLayer create(int in, int out, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
    int in_dim() const { return weight.shape[0]; }
    int out_dim() const { return weight.shape[1]; }
};

// x [..., in] -> [..., out]
Tensor linear_forward(const Tensor& x, const LinearLayer& layer);

// ---------------------------------------------------------------------------
// LSTM cell / BLSTM
// ---------------------------------------------------------------------------

struct LstmCell {
    int input_size = 0;
    int hidden_size = 0;
    Tensor w_ih;  // [in, 4H], gate order (i, f, g, o)
    Tensor w_hh;  // [H, 4H], orthogonal per-gate blocks
    Tensor bias;  // [4H], forget-gate block initialized to 1

    static LstmCell create(int input_size, int hidden_size, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

// One step: x [B, in], h/c [B, H] -> (h', c') each [B, H].
std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                         const LstmCell& cell);

// Full scan from zero state: x [T, B, in] -> hidden sequence [T, B, H].
// reversed=true runs t = T..1 but still emits outputs in input order.
Tensor lstm_scan(const Tensor& x, const LstmCell& cell, bool reversed);

struct BlstmLayer {
    LstmCell fwd;
    LstmCell bwd;
    bool has_projection = false;
    LinearLayer proj;  // [2H, out] when present

    // proj_out == 0 leaves the raw [.., 2H] concatenation.
    static BlstmLayer create(int input_size, int hidden_size, int proj_out, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
    int out_dim() const { return has_projection ? proj.out_dim() : 2 * fwd.hidden_size; }
};

// x [T, in] -> [T, out]
Tensor blstm_forward(const Tensor& x, const BlstmLayer& layer);
// x [T, B, in] -> [T, B, out]; every batch lane is an independent sequence
Tensor blstm_forward_batched(const Tensor& x, const BlstmLayer& layer);
// pre-projection halves, x [T, in] -> [T, 2H] (forward half then backward half)
Tensor blstm_forward_noproj(const Tensor& x, const BlstmLayer& layer);

// ---------------------------------------------------------------------------
// Transformer encoder layer (pre-norm)
// ---------------------------------------------------------------------------

struct TransformerEncoderLayer {
    int heads = 1;
    int model_dim = 0;
    LinearLayer wq, wk, wv, wo;  // [d, d] attention projections
    LinearLayer ff1, ff2;        // [d, ffn] and [ffn, d]
    Tensor ln1_gain, ln1_bias;   // pre-attention norm
    Tensor ln2_gain, ln2_bias;   // pre-FFN norm
    bool use_positional_encoding = false;

    static TransformerEncoderLayer create(int heads, int model_dim, int ffn_dim,
                                          bool use_positional_encoding, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

// Constant table PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
Tensor sinusoidal_positional_encoding(int length, int dim);

// Scaled dot-product attention over the second-to-last axis.
// x [L, d] or [B, L, d] -> same shape.
Tensor mhsa_forward(const Tensor& x, const TransformerEncoderLayer& layer);

// Pre-norm residual block: y = x + MHSA(LN1(x)); out = y + FF(LN2(y)).
// With use_positional_encoding, sinusoidal encodings are added to x first.
Tensor transformer_layer_forward(const Tensor& x, const TransformerEncoderLayer& layer);

}  // namespace diarkit
