#include "diarkit/layers.hpp"

#include <cmath>

namespace diarkit {

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

namespace {

Tensor xavier_uniform(int in, int out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (in + out));
    return rand_uniform({in, out}, -limit, limit, rng, true);
}

// Orthonormalizes the columns of a random normal H x H block (modified
// Gram-Schmidt); recurrent weights start orthogonal per gate.
void write_orthogonal_block(Tensor& w_hh, int gate, int h, Rng& rng) {
    std::vector<double> q(static_cast<std::size_t>(h) * h);
    for (double& v : q) v = rng.normal();
    for (int j = 0; j < h; ++j) {
        for (int k = 0; k < j; ++k) {
            double r = 0.0;
            for (int i = 0; i < h; ++i) r += q[i * h + k] * q[i * h + j];
            for (int i = 0; i < h; ++i) q[i * h + j] -= r * q[i * h + k];
        }
        double norm = 0.0;
        for (int i = 0; i < h; ++i) norm += q[i * h + j] * q[i * h + j];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {  // essentially impossible for a normal draw
            q[j * h + j] = 1.0;
            norm = 1.0;
        }
        for (int i = 0; i < h; ++i) q[i * h + j] /= norm;
    }
    double* w = w_hh.data->data();
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < h; ++j) w[i * 4 * h + gate * h + j] = q[i * h + j];
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

LinearLayer LinearLayer::create(int in, int out, Rng& rng) {
    LinearLayer layer;
    layer.weight = xavier_uniform(in, out, rng);
    layer.bias = Tensor::zeros({out}, true);
    return layer;
}

void LinearLayer::collect(ParamList& params, const std::string& prefix) const {
    params.push_back({prefix + ".weight", weight});
    params.push_back({prefix + ".bias", bias});
}

Tensor linear_forward(const Tensor& x, const LinearLayer& layer) {
    if (x.dim(-1) != layer.in_dim()) {
        throw DimensionError("linear_forward: input " + shape_str(x.shape) + " vs weight " +
                             shape_str(layer.weight.shape));
    }
    if (x.rank() == 1) {
        Tensor row = reshape(x, {1, x.shape[0]});
        return reshape(add_rowvec(matmul(row, layer.weight), layer.bias), {layer.out_dim()});
    }
    return add_rowvec(matmul(x, layer.weight), layer.bias);
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

LstmCell LstmCell::create(int input_size, int hidden_size, Rng& rng) {
    LstmCell cell;
    cell.input_size = input_size;
    cell.hidden_size = hidden_size;
    cell.w_ih = xavier_uniform(input_size, 4 * hidden_size, rng);
    cell.w_hh = Tensor::zeros({hidden_size, 4 * hidden_size}, true);
    for (int gate = 0; gate < 4; ++gate) write_orthogonal_block(cell.w_hh, gate, hidden_size, rng);
    cell.bias = Tensor::zeros({4 * hidden_size}, true);
    for (int j = 0; j < hidden_size; ++j) (*cell.bias.data)[hidden_size + j] = 1.0;
    return cell;
}

void LstmCell::collect(ParamList& params, const std::string& prefix) const {
    params.push_back({prefix + ".w_ih", w_ih});
    params.push_back({prefix + ".w_hh", w_hh});
    params.push_back({prefix + ".bias", bias});
}

std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                         const LstmCell& cell) {
    const int batch = x.dim(0);
    Tensor gates = add_rowvec(matmul(x, cell.w_ih), cell.bias);
    Tensor xg = reshape(gates, {1, batch, 4 * cell.hidden_size});
    Tensor out = lstm_step(xg, 0, h, c, cell.w_hh);
    return {slice_lastdim(out, 0, cell.hidden_size),
            slice_lastdim(out, cell.hidden_size, cell.hidden_size)};
}

Tensor lstm_scan(const Tensor& x, const LstmCell& cell, bool reversed) {
    if (x.rank() != 3 || x.shape[2] != cell.input_size) {
        throw DimensionError("lstm_scan: expected [T,B," + std::to_string(cell.input_size) +
                             "], got " + shape_str(x.shape));
    }
    const int steps = x.shape[0], batch = x.shape[1];
    const int h_dim = cell.hidden_size;
    Tensor flat = reshape(x, {steps * batch, cell.input_size});
    Tensor xg = reshape(add_rowvec(matmul(flat, cell.w_ih), cell.bias),
                        {steps, batch, 4 * h_dim});
    Tensor h = Tensor::zeros({batch, h_dim});
    Tensor c = Tensor::zeros({batch, h_dim});
    std::vector<Tensor> outputs(steps);
    for (int s = 0; s < steps; ++s) {
        const int t = reversed ? steps - 1 - s : s;
        Tensor hc = lstm_step(xg, t, h, c, cell.w_hh);
        h = slice_lastdim(hc, 0, h_dim);
        c = slice_lastdim(hc, h_dim, h_dim);
        outputs[t] = h;
    }
    return stack_axis0(outputs);
}

// ---------------------------------------------------------------------------
// BLSTM
// ---------------------------------------------------------------------------

BlstmLayer BlstmLayer::create(int input_size, int hidden_size, int proj_out, Rng& rng) {
    BlstmLayer layer;
    layer.fwd = LstmCell::create(input_size, hidden_size, rng);
    layer.bwd = LstmCell::create(input_size, hidden_size, rng);
    if (proj_out > 0) {
        layer.has_projection = true;
        layer.proj = LinearLayer::create(2 * hidden_size, proj_out, rng);
    }
    return layer;
}

void BlstmLayer::collect(ParamList& params, const std::string& prefix) const {
    fwd.collect(params, prefix + ".fwd");
    bwd.collect(params, prefix + ".bwd");
    if (has_projection) proj.collect(params, prefix + ".proj");
}

Tensor blstm_forward_batched(const Tensor& x, const BlstmLayer& layer) {
    Tensor hf = lstm_scan(x, layer.fwd, false);
    Tensor hb = lstm_scan(x, layer.bwd, true);
    Tensor cat = concat_lastdim(hf, hb);
    return layer.has_projection ? linear_forward(cat, layer.proj) : cat;
}

Tensor blstm_forward(const Tensor& x, const BlstmLayer& layer) {
    const int steps = x.dim(0);
    Tensor out = blstm_forward_batched(reshape(x, {steps, 1, x.dim(1)}), layer);
    return reshape(out, {steps, out.dim(-1)});
}

Tensor blstm_forward_noproj(const Tensor& x, const BlstmLayer& layer) {
    const int steps = x.dim(0);
    Tensor x3 = reshape(x, {steps, 1, x.dim(1)});
    Tensor cat = concat_lastdim(lstm_scan(x3, layer.fwd, false), lstm_scan(x3, layer.bwd, true));
    return reshape(cat, {steps, 2 * layer.fwd.hidden_size});
}

// ---------------------------------------------------------------------------
// Transformer encoder layer
// ---------------------------------------------------------------------------

TransformerEncoderLayer TransformerEncoderLayer::create(int heads, int model_dim, int ffn_dim,
                                                        bool use_positional_encoding, Rng& rng) {
    if (heads < 1 || model_dim % heads != 0) {
        throw ContractError("transformer layer: model_dim " + std::to_string(model_dim) +
                            " not divisible by heads " + std::to_string(heads));
    }
    TransformerEncoderLayer layer;
    layer.heads = heads;
    layer.model_dim = model_dim;
    layer.wq = LinearLayer::create(model_dim, model_dim, rng);
    layer.wk = LinearLayer::create(model_dim, model_dim, rng);
    layer.wv = LinearLayer::create(model_dim, model_dim, rng);
    layer.wo = LinearLayer::create(model_dim, model_dim, rng);
    layer.ff1 = LinearLayer::create(model_dim, ffn_dim, rng);
    layer.ff2 = LinearLayer::create(ffn_dim, model_dim, rng);
    layer.ln1_gain = Tensor::full({model_dim}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({model_dim}, true);
    layer.ln2_gain = Tensor::full({model_dim}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({model_dim}, true);
    layer.use_positional_encoding = use_positional_encoding;
    return layer;
}

void TransformerEncoderLayer::collect(ParamList& params, const std::string& prefix) const {
    wq.collect(params, prefix + ".wq");
    wk.collect(params, prefix + ".wk");
    wv.collect(params, prefix + ".wv");
    wo.collect(params, prefix + ".wo");
    ff1.collect(params, prefix + ".ff1");
    ff2.collect(params, prefix + ".ff2");
    params.push_back({prefix + ".ln1.gain", ln1_gain});
    params.push_back({prefix + ".ln1.bias", ln1_bias});
    params.push_back({prefix + ".ln2.gain", ln2_gain});
    params.push_back({prefix + ".ln2.bias", ln2_bias});
}

Tensor sinusoidal_positional_encoding(int length, int dim) {
    Tensor pe = Tensor::zeros({length, dim});
    double* p = pe.data->data();
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; i < dim; ++i) {
            const double angle = pos / std::pow(10000.0, (2.0 * (i / 2)) / dim);
            p[static_cast<std::size_t>(pos) * dim + i] = (i % 2 == 0) ? std::sin(angle)
                                                                      : std::cos(angle);
        }
    }
    return pe;
}

Tensor mhsa_forward(const Tensor& x, const TransformerEncoderLayer& layer) {
    if (x.rank() != 2 && x.rank() != 3) {
        throw DimensionError("mhsa_forward: expected [L,d] or [B,L,d], got " + shape_str(x.shape));
    }
    if (x.dim(-1) != layer.model_dim) {
        throw DimensionError("mhsa_forward: last axis " + std::to_string(x.dim(-1)) +
                             " != model_dim " + std::to_string(layer.model_dim));
    }
    const bool flat = x.rank() == 2;
    const int batch = flat ? 1 : x.dim(0);
    const int len = x.dim(-2);
    const int d = layer.model_dim;
    const int heads = layer.heads;
    const int dh = d / heads;
    Tensor x3 = flat ? reshape(x, {1, len, d}) : x;

    auto split_heads = [&](const Tensor& t) {
        return permute(reshape(t, {batch, len, heads, dh}), {0, 2, 1, 3});  // [B,H,L,dh]
    };
    Tensor qh = split_heads(linear_forward(x3, layer.wq));
    Tensor kh = split_heads(linear_forward(x3, layer.wk));
    Tensor vh = split_heads(linear_forward(x3, layer.wv));

    Tensor scores = mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(double(dh)));
    Tensor attn = softmax(scores, -1);                       // [B,H,L,L]
    Tensor ctx = matmul(attn, vh);                           // [B,H,L,dh]
    Tensor merged = reshape(permute(ctx, {0, 2, 1, 3}), {batch, len, d});
    Tensor out = linear_forward(merged, layer.wo);
    return flat ? reshape(out, {len, d}) : out;
}

Tensor transformer_layer_forward(const Tensor& x, const TransformerEncoderLayer& layer) {
    Tensor inp = x;
    if (layer.use_positional_encoding) {
        const int len = x.dim(-2), d = x.dim(-1);
        Tensor pe = sinusoidal_positional_encoding(len, d);
        if (x.rank() == 2) {
            inp = add(x, pe);
        } else {
            const int batch = x.dim(0);
            inp = reshape(add_rowvec(reshape(x, {batch, len * d}), reshape(pe, {len * d})),
                          {batch, len, d});
        }
    }
    Tensor y = add(inp, mhsa_forward(layer_norm(inp, layer.ln1_gain, layer.ln1_bias), layer));
    Tensor normed = layer_norm(y, layer.ln2_gain, layer.ln2_bias);
    Tensor ff = linear_forward(gelu(linear_forward(normed, layer.ff1)), layer.ff2);
    return add(y, ff);
}

}  // namespace diarkit
