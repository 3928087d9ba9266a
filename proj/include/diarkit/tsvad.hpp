#pragma once

#include "diarkit/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diarkit {

// ---------------------------------------------------------------------------
// Joint-speaker-detection variants
// ---------------------------------------------------------------------------

// CONCAT: flatten speakers, one BLSTM (the original fixed-capacity design).
// BLSTM_BLSTM: BLSTM on both axes (order-sensitive across speakers).
// TRANS_TRANS: transformer on both axes.
// BLSTM_TIME_TRANS_SPK: BLSTM along time, transformer across speakers.
enum class JsdKind { CONCAT, BLSTM_BLSTM, TRANS_TRANS, BLSTM_TIME_TRANS_SPK };

std::string jsd_kind_name(JsdKind kind);
JsdKind jsd_kind_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Model dimensions
// ---------------------------------------------------------------------------

struct TsVadDims {
    int mel_bins = 80;
    int frontend_channels = 128;
    int frontend_kernel = 5;
    int frontend_stride1 = 4;  // product of the strides is the downsampling
    int frontend_stride2 = 2;  // factor (default 8)
    int embed_dim = 128;       // E: frame-embedding width
    int profile_dim = 128;     // P: speaker-profile width
    int isd_proj = 384;
    int isd_hidden = 128;
    int isd_out = 256;         // F: per-speaker feature width entering the JSD
    int jsd_blocks = 2;
    int time_hidden = 160;     // time-axis BLSTM
    int time_proj = 160;
    int spk_hidden = 160;      // speaker-axis BLSTM (BLSTM_BLSTM only)
    int spk_proj = 160;
    int trans_heads = 4;       // transformer layers (both axes)
    int trans_ffn = 256;       // feed-forward width for TRANS_TRANS
    int spk_trans_ffn = 160;   // feed-forward width for the speaker transformer
    int concat_hidden = 256;   // CONCAT-only BLSTM
    int concat_proj = 192;
    int max_speakers = 10;     // CONCAT capacity
    bool time_positional_encoding = false;

    static TsVadDims full();  // published sizes
    static TsVadDims toy();   // every width divided by 4 (tests/toy training)

    bool operator==(const TsVadDims&) const = default;
};

// ---------------------------------------------------------------------------
// Front end: two strided convolutions + GELU, then a linear to E.
// ---------------------------------------------------------------------------

struct FrontEnd {
    int stride1 = 4;
    int stride2 = 2;
    Tensor conv1_w, conv1_b;  // [K, mel, C], [C]
    Tensor conv2_w, conv2_b;  // [K, C, C], [C]
    LinearLayer out;          // C -> E

    static FrontEnd create(const TsVadDims& dims, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
    int factor() const { return stride1 * stride2; }
};

// features [T0, mel] -> embeddings [floor(T0/factor), E]
Tensor frontend_encode(const Tensor& features, const FrontEnd& fe);

// ---------------------------------------------------------------------------
// Independent speaker detection: per-profile encoder stack.
// ---------------------------------------------------------------------------

struct IsdModule {
    LinearLayer input_proj;  // E+P -> isd_proj
    BlstmLayer blstm1;       // isd_proj -> isd_out
    BlstmLayer blstm2;       // isd_out -> isd_out

    static IsdModule create(const TsVadDims& dims, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

// embeddings [T, E], profiles [S, P] -> [T, S, F]; slice s depends only on
// profile s (and the shared embeddings), so profile swaps swap slices exactly.
Tensor isd_forward(const Tensor& embeddings, const Tensor& profiles, const IsdModule& isd);

// ---------------------------------------------------------------------------
// Joint speaker detection
// ---------------------------------------------------------------------------

struct JsdBlock {
    bool time_is_blstm = true;
    BlstmLayer time_blstm;
    TransformerEncoderLayer time_trans;
    bool spk_is_blstm = false;
    BlstmLayer spk_blstm;
    TransformerEncoderLayer spk_trans;  // never uses positional encoding
};

struct JsdModule {
    JsdKind kind = JsdKind::BLSTM_TIME_TRANS_SPK;
    int max_speakers = 10;  // CONCAT capacity check
    BlstmLayer concat_blstm;
    std::vector<JsdBlock> blocks;
    int out_dim = 0;

    static JsdModule create(const TsVadDims& dims, JsdKind kind, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

// x [T, S, F] -> [T, S, F'] (CONCAT: [T, 1, concat_proj], one joint slice).
Tensor jsd_forward(const Tensor& x, const JsdModule& jsd);

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct TsVadModel {
    TsVadDims dims;
    FrontEnd frontend;
    IsdModule isd;
    JsdModule jsd;
    LinearLayer head;  // F' -> 1 per slice; CONCAT: concat_proj -> max_speakers

    static TsVadModel create(const TsVadDims& dims, JsdKind kind, std::uint64_t seed);
    ParamList parameters() const;
};

// features [T0, mel], profiles [S, P] -> activities in (0,1)^[T, S]
Tensor tsvad_forward(const Tensor& features, const Tensor& profiles, const TsVadModel& model);

// Same, starting from precomputed embeddings [T, E] (the front end is
// skipped; the attractor-matching path uses this entry point).
Tensor tsvad_forward_embedded(const Tensor& embeddings, const Tensor& profiles,
                              const TsVadModel& model);

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

struct TrainingProfiles {
    Tensor profiles;           // [kept, E], detached means
    std::vector<int> kept;     // label indices present in `profiles` row order
    std::vector<int> silent;   // label indices with no speech in the chunk
};

// Mean embedding over frames where the speaker is the sole active one;
// falls back to all frames where the speaker is active at all.
TrainingProfiles training_profiles(const Tensor& embeddings, const Tensor& labels);

struct PaddedProfiles {
    Tensor profiles;            // [n, P]
    std::vector<int> kept;      // original indices, ascending
    std::vector<int> excluded;  // dropped indices when S > n
};

// CONCAT baseline capacity rule: zero-pad up to n rows, or keep the top n
// profiles by source speech duration.
PaddedProfiles pad_profiles_baseline(const Tensor& profiles,
                                     const std::vector<double>& durations, int n = 10);

}  // namespace diarkit
