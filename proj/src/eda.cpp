#include "diarkit/eda.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "diarkit/assignment.hpp"

namespace diarkit {

// ---------------------------------------------------------------------------
// EEND encoder
// ---------------------------------------------------------------------------

EendDims EendDims::full() { return EendDims{}; }

EendDims EendDims::toy() {
    EendDims d;
    d.model_dim = 80;
    d.heads = 4;
    d.layers = 2;
    d.ffn_dim = 160;
    return d;
}

EendEncoder EendEncoder::create(const EendDims& dims, Rng& rng) {
    EendEncoder enc;
    enc.input_proj = LinearLayer::create(dims.input_dim, dims.model_dim, rng);
    for (int i = 0; i < dims.layers; ++i) {
        enc.layers.push_back(TransformerEncoderLayer::create(
            dims.heads, dims.model_dim, dims.ffn_dim, /*use_positional_encoding=*/false, rng));
    }
    return enc;
}

void EendEncoder::collect(ParamList& params, const std::string& prefix) const {
    input_proj.collect(params, prefix + ".input_proj");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(params, prefix + ".layer" + std::to_string(i));
    }
}

Tensor eend_encode(const Tensor& stacked_features, const EendEncoder& enc) {
    if (stacked_features.rank() != 2 || stacked_features.dim(1) != enc.input_proj.in_dim()) {
        throw DimensionError("eend_encode: expected [T," +
                             std::to_string(enc.input_proj.in_dim()) + "], got " +
                             shape_str(stacked_features.shape));
    }
    Tensor h = linear_forward(stacked_features, enc.input_proj);
    for (const TransformerEncoderLayer& layer : enc.layers) {
        h = transformer_layer_forward(h, layer);
    }
    return h;
}

Tensor shuffle_time(const Tensor& embeddings, std::uint64_t seed) {
    if (embeddings.rank() != 2) {
        throw DimensionError("shuffle_time: expected [T,d], got " + shape_str(embeddings.shape));
    }
    Rng rng(seed);
    return row_gather(embeddings, rng.permutation(embeddings.dim(0)));
}

// ---------------------------------------------------------------------------
// EDA
// ---------------------------------------------------------------------------

EdaModule EdaModule::create(int dim, Rng& rng) {
    EdaModule eda;
    eda.encoder = LstmCell::create(dim, dim, rng);
    eda.decoder = LstmCell::create(dim, dim, rng);
    eda.existence = LinearLayer::create(dim, 1, rng);
    return eda;
}

void EdaModule::collect(ParamList& params, const std::string& prefix) const {
    encoder.collect(params, prefix + ".encoder");
    decoder.collect(params, prefix + ".decoder");
    existence.collect(params, prefix + ".existence");
}

EdaExtraction eda_extract(const Tensor& embeddings, const EdaModule& eda, int decode_n) {
    if (embeddings.rank() != 2 || embeddings.dim(1) != eda.encoder.input_size) {
        throw DimensionError("eda_extract: expected [T," +
                             std::to_string(eda.encoder.input_size) + "], got " +
                             shape_str(embeddings.shape));
    }
    if (decode_n < 1) {
        throw ContractError("eda_extract: decode_n must be >= 1, got " +
                            std::to_string(decode_n));
    }
    const int t_len = embeddings.dim(0);
    const int d = eda.encoder.hidden_size;

    // Encoder scan (batch of one); gate inputs for every step in one matmul.
    Tensor xg = reshape(add_rowvec(matmul(embeddings, eda.encoder.w_ih), eda.encoder.bias),
                        {t_len, 1, 4 * d});
    Tensor h = Tensor::zeros({1, d});
    Tensor c = Tensor::zeros({1, d});
    for (int t = 0; t < t_len; ++t) {
        Tensor hc = lstm_step(xg, t, h, c, eda.encoder.w_hh);
        h = slice_lastdim(hc, 0, d);
        c = slice_lastdim(hc, d, d);
    }

    // Decoder: every step reads a zero input, so the gate input is the bias.
    Tensor ones = Tensor::full({decode_n, 1}, 1.0);
    Tensor dec_xg = reshape(matmul(ones, reshape(eda.decoder.bias, {1, 4 * d})),
                            {decode_n, 1, 4 * d});
    std::vector<Tensor> steps;
    for (int t = 0; t < decode_n; ++t) {
        Tensor hc = lstm_step(dec_xg, t, h, c, eda.decoder.w_hh);
        h = slice_lastdim(hc, 0, d);
        c = slice_lastdim(hc, d, d);
        steps.push_back(h);
    }
    EdaExtraction out;
    out.attractors = reshape(stack_axis0(steps), {decode_n, d});
    out.existence_probs =
        reshape(sigmoid(linear_forward(out.attractors, eda.existence)), {decode_n});
    return out;
}

SpeakerCount count_speakers(const std::vector<double>& probs, double tau) {
    SpeakerCount out;
    for (double p : probs) {
        if (p < tau) return out;
        ++out.count;
    }
    out.truncated = !probs.empty();
    return out;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

Tensor dot_match(const Tensor& embeddings, const Tensor& attractors) {
    if (embeddings.rank() != 2 || attractors.rank() != 2 ||
        embeddings.dim(1) != attractors.dim(1)) {
        throw DimensionError("dot_match: embeddings " + shape_str(embeddings.shape) +
                             " vs attractors " + shape_str(attractors.shape));
    }
    return sigmoid(matmul(embeddings, transpose_last2(attractors)));
}

TsVadMatcher TsVadMatcher::create(const TsVadDims& dims, Rng& rng) {
    TsVadMatcher m;
    m.isd = IsdModule::create(dims, rng);
    m.jsd = JsdModule::create(dims, JsdKind::BLSTM_TIME_TRANS_SPK, rng);
    m.head = LinearLayer::create(m.jsd.out_dim, 1, rng);
    return m;
}

void TsVadMatcher::collect(ParamList& params, const std::string& prefix) const {
    isd.collect(params, prefix + ".isd");
    jsd.collect(params, prefix + ".jsd");
    head.collect(params, prefix + ".head");
}

Tensor tsvad_match(const Tensor& embeddings, const Tensor& attractors,
                   const TsVadMatcher& matcher) {
    Tensor x = isd_forward(embeddings, attractors, matcher.isd);
    Tensor y = jsd_forward(x, matcher.jsd);
    Tensor logits = linear_forward(y, matcher.head);  // [T,S,1]
    return sigmoid(reshape(logits, {logits.dim(0), logits.dim(1)}));
}

// ---------------------------------------------------------------------------
// Composite model
// ---------------------------------------------------------------------------

EdaTsVadModel EdaTsVadModel::create(const EendDims& eend, const TsVadDims& matcher_dims,
                                    std::uint64_t seed) {
    Rng rng(seed);
    EdaTsVadModel model;
    model.eend_dims = eend;
    model.matcher_dims = matcher_dims;
    model.matcher_dims.embed_dim = eend.model_dim;
    model.matcher_dims.profile_dim = eend.model_dim;
    model.encoder = EendEncoder::create(eend, rng);
    model.eda = EdaModule::create(eend.model_dim, rng);
    model.matcher = TsVadMatcher::create(model.matcher_dims, rng);
    return model;
}

ParamList EdaTsVadModel::parameters() const {
    ParamList out;
    encoder.collect(out, "encoder");
    eda.collect(out, "eda");
    matcher.collect(out, "matcher");
    return out;
}

EdaTsVadOutput eda_tsvad_forward(const Tensor& stacked_features, const EdaTsVadModel& model) {
    Tensor emb = eend_encode(stacked_features, model.encoder);
    EdaExtraction ex = eda_extract(emb, model.eda, model.eda.max_attractors);
    EdaTsVadOutput out;
    out.attractors.existence_probs.assign(ex.existence_probs.values().begin(),
                                          ex.existence_probs.values().end());
    SpeakerCount sc = count_speakers(out.attractors.existence_probs, model.eda.tau);
    out.attractors.count = sc.count;
    out.attractors.truncated = sc.truncated;
    if (sc.count == 0) {
        out.attractors.attractors = Tensor::zeros({0, model.eda.encoder.hidden_size});
        out.activities = Tensor::zeros({emb.dim(0), 0});
        return out;
    }
    out.attractors.attractors = slice_axis0(ex.attractors, 0, sc.count).detach();
    out.activities = tsvad_match(emb, out.attractors.attractors, model.matcher);
    return out;
}

EdaTsVadOutput eda_dot_forward(const Tensor& stacked_features, const EdaTsVadModel& model) {
    Tensor emb = eend_encode(stacked_features, model.encoder);
    EdaExtraction ex = eda_extract(emb, model.eda, model.eda.max_attractors);
    EdaTsVadOutput out;
    out.attractors.existence_probs.assign(ex.existence_probs.values().begin(),
                                          ex.existence_probs.values().end());
    SpeakerCount sc = count_speakers(out.attractors.existence_probs, model.eda.tau);
    out.attractors.count = sc.count;
    out.attractors.truncated = sc.truncated;
    if (sc.count == 0) {
        out.attractors.attractors = Tensor::zeros({0, model.eda.encoder.hidden_size});
        out.activities = Tensor::zeros({emb.dim(0), 0});
        return out;
    }
    out.attractors.attractors = slice_axis0(ex.attractors, 0, sc.count).detach();
    out.activities = dot_match(emb, out.attractors.attractors);
    return out;
}

EdaTsVadTrainOutput eda_tsvad_forward_train(const Tensor& stacked_features,
                                            const EdaTsVadModel& model, int true_n,
                                            std::uint64_t shuffle_seed) {
    if (true_n < 1) {
        throw ContractError("eda_tsvad_forward_train: need at least one speaker, got " +
                            std::to_string(true_n));
    }
    Tensor emb = eend_encode(stacked_features, model.encoder);
    // Only the attractor branch sees the shuffled frames.
    EdaExtraction ex = eda_extract(shuffle_time(emb, shuffle_seed), model.eda, true_n + 1);
    EdaTsVadTrainOutput out;
    out.attractors = ex.attractors;
    out.existence_probs = ex.existence_probs;
    out.activities = tsvad_match(emb, slice_axis0(ex.attractors, 0, true_n), model.matcher);
    return out;
}

EdaTsVadTrainOutput eda_dot_forward_train(const Tensor& stacked_features,
                                          const EdaTsVadModel& model, int true_n,
                                          std::uint64_t shuffle_seed) {
    if (true_n < 1) {
        throw ContractError("eda_dot_forward_train: need at least one speaker, got " +
                            std::to_string(true_n));
    }
    Tensor emb = eend_encode(stacked_features, model.encoder);
    EdaExtraction ex = eda_extract(shuffle_time(emb, shuffle_seed), model.eda, true_n + 1);
    EdaTsVadTrainOutput out;
    out.attractors = ex.attractors;
    out.existence_probs = ex.existence_probs;
    out.activities = dot_match(emb, slice_axis0(ex.attractors, 0, true_n));
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor existence_loss(const Tensor& probs, int true_n) {
    if (true_n < 0) throw ContractError("existence_loss: negative speaker count");
    if (probs.rank() != 1 || probs.dim(0) != true_n + 1) {
        throw ContractError("existence_loss: expected " + std::to_string(true_n + 1) +
                            " probabilities, got " + shape_str(probs.shape));
    }
    const int n = probs.dim(0);
    std::vector<double> labels(static_cast<std::size_t>(n), 1.0);
    labels.back() = 0.0;
    // Mean BCE == bce_sum_loss on an [n,1] view with an all-ones mask.
    return bce_sum_loss(reshape(probs, {n, 1}),
                        Tensor::from_data({n, 1}, std::move(labels)), Tensor::full({n}, 1.0));
}

namespace {

constexpr double kClamp = 1e-12;

// Frame-masked mean BCE of one (pred column, target column) pair; mirrors
// bce_sum_loss element math so the assembled loss matches the cost exactly.
double column_cost(const Tensor& pred, const Tensor& target, const Tensor& mask, int i, int j,
                   double masked) {
    const int t_len = pred.dim(0);
    double sum = 0.0;
    for (int t = 0; t < t_len; ++t) {
        if (mask.at(t) == 0.0) continue;
        const double p = std::clamp(pred.at2(t, i), kClamp, 1.0 - kClamp);
        const double y = target.at2(t, j);
        sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return sum / masked;
}

}  // namespace

std::pair<Tensor, std::vector<int>> pit_bce_loss(const Tensor& pred, const Tensor& target,
                                                 const Tensor& mask) {
    if (pred.rank() != 2 || target.rank() != 2) {
        throw DimensionError("pit_bce_loss: pred and target must be [T,S]");
    }
    if (pred.dim(0) != target.dim(0)) {
        throw DimensionError("pit_bce_loss: frame counts differ: " + shape_str(pred.shape) +
                             " vs " + shape_str(target.shape));
    }
    if (pred.dim(1) != target.dim(1)) {
        throw ContractError("pit_bce_loss: speaker counts differ: " +
                            std::to_string(pred.dim(1)) + " vs " +
                            std::to_string(target.dim(1)));
    }
    const int s = pred.dim(1);
    const int t_len = pred.dim(0);
    if (mask.shape != Shape{t_len}) {
        throw DimensionError("pit_bce_loss: mask must be [" + std::to_string(t_len) + "]");
    }
    for (double v : target.values()) {
        if (v != 0.0 && v != 1.0) throw ContractError("pit_bce_loss: target must be binary");
    }
    double masked = 0.0;
    for (double v : mask.values()) {
        if (v != 0.0 && v != 1.0) throw ContractError("pit_bce_loss: mask must be binary");
        masked += v;
    }
    if (masked == 0.0) throw ContractError("pit_bce_loss: mask selects no frames");

    std::vector<std::vector<double>> cost(s, std::vector<double>(s));
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) cost[i][j] = column_cost(pred, target, mask, i, j, masked);
    }
    std::vector<int> perm = hungarian(cost);

    // Differentiable pass with the selection held fixed: permute the target
    // columns so column i faces target perm[i], then reuse bce_sum_loss
    // (whose normalization (masked T) * S equals the mean pair cost / S).
    std::vector<double> tv;
    tv.reserve(target.numel());
    for (int t = 0; t < t_len; ++t) {
        for (int i = 0; i < s; ++i) tv.push_back(target.at2(t, perm[i]));
    }
    Tensor permuted = Tensor::from_data({t_len, s}, std::move(tv));
    return {bce_sum_loss(pred, permuted, mask), std::move(perm)};
}

CombinedLoss combined_loss(const Tensor& activities, const Tensor& labels, const Tensor& mask,
                           const Tensor& probs, int true_n, double alpha) {
    if (alpha < 0.0) throw ContractError("combined_loss: alpha must be >= 0");
    auto [pit, perm] = pit_bce_loss(activities, labels, mask);
    CombinedLoss out;
    out.permutation = std::move(perm);
    if (alpha == 0.0) {
        out.loss = pit;
        return out;
    }
    out.loss = add(pit, mul_scalar(existence_loss(probs, true_n), alpha));
    return out;
}

}  // namespace diarkit
