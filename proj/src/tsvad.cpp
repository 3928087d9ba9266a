#include "diarkit/tsvad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace diarkit {

// ---------------------------------------------------------------------------
// Variant names
// ---------------------------------------------------------------------------

std::string jsd_kind_name(JsdKind kind) {
    switch (kind) {
        case JsdKind::CONCAT: return "concat";
        case JsdKind::BLSTM_BLSTM: return "blstm_blstm";
        case JsdKind::TRANS_TRANS: return "trans_trans";
        case JsdKind::BLSTM_TIME_TRANS_SPK: return "blstm_time_trans_spk";
    }
    throw ContractError("jsd_kind_name: unknown variant");
}

JsdKind jsd_kind_from_name(const std::string& name) {
    if (name == "concat") return JsdKind::CONCAT;
    if (name == "blstm_blstm") return JsdKind::BLSTM_BLSTM;
    if (name == "trans_trans") return JsdKind::TRANS_TRANS;
    if (name == "blstm_time_trans_spk") return JsdKind::BLSTM_TIME_TRANS_SPK;
    throw ContractError("jsd_kind_from_name: unknown variant '" + name + "'");
}

// ---------------------------------------------------------------------------
// Dimension presets
// ---------------------------------------------------------------------------

TsVadDims TsVadDims::full() { return TsVadDims{}; }

TsVadDims TsVadDims::toy() {
    TsVadDims d;
    d.frontend_channels = 32;
    d.embed_dim = 32;
    d.profile_dim = 32;
    d.isd_proj = 96;
    d.isd_hidden = 32;
    d.isd_out = 64;
    d.time_hidden = 40;
    d.time_proj = 40;
    d.spk_hidden = 40;
    d.spk_proj = 40;
    d.trans_ffn = 64;
    d.spk_trans_ffn = 40;
    d.concat_hidden = 64;
    d.concat_proj = 48;
    return d;
}

// ---------------------------------------------------------------------------
// Front end
// ---------------------------------------------------------------------------

namespace {

// Xavier-uniform for a [K, Cin, Cout] convolution kernel; zero bias.
Tensor conv_init(int k, int cin, int cout, Rng& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(k) * (cin + cout)));
    return rand_uniform({k, cin, cout}, -limit, limit, rng, true);
}

}  // namespace

FrontEnd FrontEnd::create(const TsVadDims& dims, Rng& rng) {
    FrontEnd fe;
    fe.stride1 = dims.frontend_stride1;
    fe.stride2 = dims.frontend_stride2;
    const int k = dims.frontend_kernel;
    const int c = dims.frontend_channels;
    fe.conv1_w = conv_init(k, dims.mel_bins, c, rng);
    fe.conv1_b = Tensor::zeros({c}, true);
    fe.conv2_w = conv_init(k, c, c, rng);
    fe.conv2_b = Tensor::zeros({c}, true);
    fe.out = LinearLayer::create(c, dims.embed_dim, rng);
    return fe;
}

void FrontEnd::collect(ParamList& params, const std::string& prefix) const {
    params.push_back({prefix + ".conv1.weight", conv1_w});
    params.push_back({prefix + ".conv1.bias", conv1_b});
    params.push_back({prefix + ".conv2.weight", conv2_w});
    params.push_back({prefix + ".conv2.bias", conv2_b});
    out.collect(params, prefix + ".out");
}

Tensor frontend_encode(const Tensor& features, const FrontEnd& fe) {
    if (features.rank() != 2) {
        throw DimensionError("frontend_encode: features must be rank 2, got " +
                             shape_str(features.shape));
    }
    if (features.dim(1) != fe.conv1_w.dim(1)) {
        throw DimensionError("frontend_encode: expected " + std::to_string(fe.conv1_w.dim(1)) +
                             " feature bins, got " + std::to_string(features.dim(1)));
    }
    if (features.dim(0) < fe.factor()) {
        throw ContractError("frontend_encode: need at least " + std::to_string(fe.factor()) +
                            " frames for one embedding, got " + std::to_string(features.dim(0)));
    }
    Tensor h = gelu(conv1d_stride(features, fe.conv1_w, fe.conv1_b, fe.stride1));
    h = gelu(conv1d_stride(h, fe.conv2_w, fe.conv2_b, fe.stride2));
    return linear_forward(h, fe.out);
}

// ---------------------------------------------------------------------------
// ISD
// ---------------------------------------------------------------------------

IsdModule IsdModule::create(const TsVadDims& dims, Rng& rng) {
    IsdModule isd;
    isd.input_proj = LinearLayer::create(dims.embed_dim + dims.profile_dim, dims.isd_proj, rng);
    isd.blstm1 = BlstmLayer::create(dims.isd_proj, dims.isd_hidden, dims.isd_out, rng);
    isd.blstm2 = BlstmLayer::create(dims.isd_out, dims.isd_hidden, dims.isd_out, rng);
    return isd;
}

void IsdModule::collect(ParamList& params, const std::string& prefix) const {
    input_proj.collect(params, prefix + ".input_proj");
    blstm1.collect(params, prefix + ".blstm1");
    blstm2.collect(params, prefix + ".blstm2");
}

Tensor isd_forward(const Tensor& embeddings, const Tensor& profiles, const IsdModule& isd) {
    if (embeddings.rank() != 2 || profiles.rank() != 2) {
        throw DimensionError("isd_forward: embeddings " + shape_str(embeddings.shape) +
                             " and profiles " + shape_str(profiles.shape) + " must be rank 2");
    }
    const int t = embeddings.dim(0);
    const int e = embeddings.dim(1);
    const int s = profiles.dim(0);
    const int p = profiles.dim(1);
    if (s < 1) throw DimensionError("isd_forward: need at least one profile");
    if (e + p != isd.input_proj.in_dim()) {
        throw DimensionError("isd_forward: embed+profile dims " + std::to_string(e) + "+" +
                             std::to_string(p) + " do not match projection input " +
                             std::to_string(isd.input_proj.in_dim()));
    }
    // Broadcast: E repeated across the speaker lane, each profile repeated
    // across time. Both paths stay differentiable (profiles may be trainable
    // attractors).
    std::vector<Tensor> copies(static_cast<std::size_t>(s), embeddings);
    Tensor e_rep = permute(stack_axis0(copies), {1, 0, 2});                   // [T,S,E]
    Tensor ones = Tensor::full({t, 1}, 1.0);
    Tensor p_rep = reshape(matmul(ones, reshape(profiles, {1, s * p})), {t, s, p});
    Tensor x = concat_lastdim(e_rep, p_rep);                                  // [T,S,E+P]
    Tensor h = linear_forward(x, isd.input_proj);
    h = blstm_forward_batched(h, isd.blstm1);  // lanes are independent, so the
    h = blstm_forward_batched(h, isd.blstm2);  // S slices never mix here
    return h;
}

// ---------------------------------------------------------------------------
// JSD
// ---------------------------------------------------------------------------

JsdModule JsdModule::create(const TsVadDims& dims, JsdKind kind, Rng& rng) {
    JsdModule jsd;
    jsd.kind = kind;
    jsd.max_speakers = dims.max_speakers;
    if (kind == JsdKind::CONCAT) {
        jsd.concat_blstm = BlstmLayer::create(dims.max_speakers * dims.isd_out,
                                              dims.concat_hidden, dims.concat_proj, rng);
        jsd.out_dim = dims.concat_proj;
        return jsd;
    }
    int dim = dims.isd_out;
    for (int b = 0; b < dims.jsd_blocks; ++b) {
        JsdBlock block;
        if (kind == JsdKind::TRANS_TRANS) {
            block.time_is_blstm = false;
            block.time_trans = TransformerEncoderLayer::create(
                dims.trans_heads, dim, dims.trans_ffn, dims.time_positional_encoding, rng);
        } else {
            block.time_is_blstm = true;
            block.time_blstm = BlstmLayer::create(dim, dims.time_hidden, dims.time_proj, rng);
            dim = dims.time_proj;
        }
        if (kind == JsdKind::BLSTM_BLSTM) {
            block.spk_is_blstm = true;
            block.spk_blstm = BlstmLayer::create(dim, dims.spk_hidden, dims.spk_proj, rng);
            dim = dims.spk_proj;
        } else {
            block.spk_is_blstm = false;
            const int ffn = (kind == JsdKind::TRANS_TRANS) ? dims.trans_ffn : dims.spk_trans_ffn;
            block.spk_trans = TransformerEncoderLayer::create(dims.trans_heads, dim, ffn,
                                                              /*use_positional_encoding=*/false,
                                                              rng);
        }
        jsd.blocks.push_back(std::move(block));
    }
    jsd.out_dim = dim;
    return jsd;
}

void JsdModule::collect(ParamList& params, const std::string& prefix) const {
    if (kind == JsdKind::CONCAT) {
        concat_blstm.collect(params, prefix + ".concat_blstm");
        return;
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string base = prefix + ".block" + std::to_string(b);
        const JsdBlock& block = blocks[b];
        if (block.time_is_blstm) {
            block.time_blstm.collect(params, base + ".time_blstm");
        } else {
            block.time_trans.collect(params, base + ".time_trans");
        }
        if (block.spk_is_blstm) {
            block.spk_blstm.collect(params, base + ".spk_blstm");
        } else {
            block.spk_trans.collect(params, base + ".spk_trans");
        }
    }
}

Tensor jsd_forward(const Tensor& x, const JsdModule& jsd) {
    if (x.rank() != 3) {
        throw DimensionError("jsd_forward: expected [T,S,F], got " + shape_str(x.shape));
    }
    const int t = x.dim(0);
    const int s = x.dim(1);
    const int f = x.dim(2);
    if (jsd.kind == JsdKind::CONCAT) {
        if (s != jsd.max_speakers) {
            throw ContractError("jsd_forward: concat variant requires exactly " +
                                std::to_string(jsd.max_speakers) + " speaker slices, got " +
                                std::to_string(s) + " (pad the profiles first)");
        }
        Tensor y = blstm_forward(reshape(x, {t, s * f}), jsd.concat_blstm);
        return reshape(y, {t, 1, jsd.out_dim});  // one joint slice
    }
    Tensor cur = x;
    for (const JsdBlock& block : jsd.blocks) {
        // Time axis: each speaker slice is an independent length-T sequence.
        if (block.time_is_blstm) {
            cur = blstm_forward_batched(cur, block.time_blstm);
        } else {
            cur = permute(transformer_layer_forward(permute(cur, {1, 0, 2}), block.time_trans),
                          {1, 0, 2});
        }
        // Speaker axis: each frame is an independent length-S sequence.
        if (block.spk_is_blstm) {
            cur = permute(blstm_forward_batched(permute(cur, {1, 0, 2}), block.spk_blstm),
                          {1, 0, 2});
        } else {
            cur = transformer_layer_forward(cur, block.spk_trans);
        }
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

TsVadModel TsVadModel::create(const TsVadDims& dims, JsdKind kind, std::uint64_t seed) {
    Rng rng(seed);
    TsVadModel model;
    model.dims = dims;
    model.frontend = FrontEnd::create(dims, rng);
    model.isd = IsdModule::create(dims, rng);
    model.jsd = JsdModule::create(dims, kind, rng);
    const int head_out = (kind == JsdKind::CONCAT) ? dims.max_speakers : 1;
    model.head = LinearLayer::create(model.jsd.out_dim, head_out, rng);
    return model;
}

ParamList TsVadModel::parameters() const {
    ParamList out;
    frontend.collect(out, "frontend");
    isd.collect(out, "isd");
    jsd.collect(out, "jsd");
    head.collect(out, "head");
    return out;
}

Tensor tsvad_forward_embedded(const Tensor& embeddings, const Tensor& profiles,
                              const TsVadModel& model) {
    Tensor x = isd_forward(embeddings, profiles, model.isd);
    Tensor y = jsd_forward(x, model.jsd);
    Tensor logits = linear_forward(y, model.head);  // [T,S,1] or [T,1,max_speakers]
    const int t = logits.dim(0);
    const int s = logits.dim(1) * logits.dim(2);
    return sigmoid(reshape(logits, {t, s}));
}

Tensor tsvad_forward(const Tensor& features, const Tensor& profiles, const TsVadModel& model) {
    return tsvad_forward_embedded(frontend_encode(features, model.frontend), profiles, model);
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

TrainingProfiles training_profiles(const Tensor& embeddings, const Tensor& labels) {
    if (embeddings.rank() != 2 || labels.rank() != 2 || embeddings.dim(0) != labels.dim(0)) {
        throw DimensionError("training_profiles: embeddings " + shape_str(embeddings.shape) +
                             " vs labels " + shape_str(labels.shape));
    }
    const int t = labels.dim(0);
    const int s = labels.dim(1);
    const int e = embeddings.dim(1);
    for (double v : labels.values()) {
        if (v != 0.0 && v != 1.0) {
            throw ContractError("training_profiles: labels must be binary");
        }
    }
    std::vector<int> row_sum(static_cast<std::size_t>(t), 0);
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < s; ++j) row_sum[i] += static_cast<int>(labels.at2(i, j));
    }
    TrainingProfiles out;
    std::vector<double> rows;
    for (int j = 0; j < s; ++j) {
        std::vector<double> mean(static_cast<std::size_t>(e), 0.0);
        int count = 0;
        // Preferred: frames where this speaker speaks alone.
        for (int i = 0; i < t; ++i) {
            if (labels.at2(i, j) == 1.0 && row_sum[i] == 1) {
                for (int k = 0; k < e; ++k) mean[k] += embeddings.at2(i, k);
                ++count;
            }
        }
        // Fallback: any frame where the speaker is active.
        if (count == 0) {
            for (int i = 0; i < t; ++i) {
                if (labels.at2(i, j) == 1.0) {
                    for (int k = 0; k < e; ++k) mean[k] += embeddings.at2(i, k);
                    ++count;
                }
            }
        }
        if (count == 0) {
            out.silent.push_back(j);
            continue;
        }
        for (double& v : mean) v /= count;
        rows.insert(rows.end(), mean.begin(), mean.end());
        out.kept.push_back(j);
    }
    const int kept_n = static_cast<int>(out.kept.size());
    out.profiles = Tensor::from_data({kept_n, e}, std::move(rows));
    return out;
}

PaddedProfiles pad_profiles_baseline(const Tensor& profiles, const std::vector<double>& durations,
                                     int n) {
    if (profiles.rank() != 2) {
        throw DimensionError("pad_profiles_baseline: profiles must be rank 2, got " +
                             shape_str(profiles.shape));
    }
    const int s = profiles.dim(0);
    const int p = profiles.dim(1);
    if (static_cast<int>(durations.size()) != s) {
        throw DimensionError("pad_profiles_baseline: " + std::to_string(durations.size()) +
                             " durations for " + std::to_string(s) + " profiles");
    }
    PaddedProfiles out;
    if (s <= n) {
        out.kept.resize(static_cast<std::size_t>(s));
        std::iota(out.kept.begin(), out.kept.end(), 0);
        std::vector<double> rows(profiles.values().begin(), profiles.values().end());
        rows.resize(static_cast<std::size_t>(n) * p, 0.0);  // zero rows appended
        out.profiles = Tensor::from_data({n, p}, std::move(rows));
        return out;
    }
    // Rank by speech duration (longest first; ties go to the lower index),
    // keep the top n in original index order.
    std::vector<int> order(static_cast<std::size_t>(s));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return durations[a] > durations[b]; });
    out.kept.assign(order.begin(), order.begin() + n);
    out.excluded.assign(order.begin() + n, order.end());
    std::sort(out.kept.begin(), out.kept.end());
    std::sort(out.excluded.begin(), out.excluded.end());
    std::vector<double> rows;
    rows.reserve(static_cast<std::size_t>(n) * p);
    for (int idx : out.kept) {
        for (int k = 0; k < p; ++k) rows.push_back(profiles.at2(idx, k));
    }
    out.profiles = Tensor::from_data({n, p}, std::move(rows));
    return out;
}

}  // namespace diarkit
