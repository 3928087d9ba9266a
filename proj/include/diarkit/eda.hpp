#pragma once

#include "diarkit/tsvad.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace diarkit {

// ---------------------------------------------------------------------------
// EEND encoder: linear projection + stacked transformer layers (no
// positional encoding).
// ---------------------------------------------------------------------------

struct EendDims {
    int input_dim = 600;  // 15 stacked frames x 40 mel bins
    int model_dim = 320;
    int heads = 10;
    int layers = 6;
    int ffn_dim = 1024;

    static EendDims full();
    static EendDims toy();  // narrow/shallow preset for tests and toy training

    bool operator==(const EendDims&) const = default;
};

struct EendEncoder {
    LinearLayer input_proj;
    std::vector<TransformerEncoderLayer> layers;

    static EendEncoder create(const EendDims& dims, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
    int out_dim() const { return input_proj.out_dim(); }
};

// stacked features [T, input_dim] -> frame embeddings [T, model_dim]
Tensor eend_encode(const Tensor& stacked_features, const EendEncoder& enc);

// Rows permuted by the seed-deterministic uniform permutation
// Rng(seed).permutation(T); differentiable (training-time augmentation).
Tensor shuffle_time(const Tensor& embeddings, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Encoder-decoder attractor extraction
// ---------------------------------------------------------------------------

struct EdaModule {
    LstmCell encoder;        // d -> d, scans the (shuffled) embeddings
    LstmCell decoder;        // d -> d, stepped on zero inputs
    LinearLayer existence;   // d -> 1, sigmoid on top
    double tau = 0.5;        // stop threshold on existence probabilities
    int max_attractors = 12;

    static EdaModule create(int dim, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

// Differentiable decode of exactly decode_n attractors.
struct EdaExtraction {
    Tensor attractors;       // [decode_n, d]
    Tensor existence_probs;  // [decode_n], each in (0,1)
};

// Encoder LSTM scans the embeddings; its final hidden/cell state initializes
// the decoder, which is stepped decode_n times on all-zero inputs. Every
// decoder hidden state is one attractor.
EdaExtraction eda_extract(const Tensor& embeddings, const EdaModule& eda, int decode_n);

struct SpeakerCount {
    int count = 0;
    // No decoded probability fell below tau: the attractor cap was reached
    // and more speakers may exist.
    bool truncated = false;
};

// First index whose probability falls below tau (monotone in tau).
SpeakerCount count_speakers(const std::vector<double>& probs, double tau);

// Inference-side result after thresholding.
struct AttractorSet {
    Tensor attractors;                    // [count, d]
    std::vector<double> existence_probs;  // all decoded probs
    int count = 0;
    bool truncated = false;
};

// ---------------------------------------------------------------------------
// Matching modules
// ---------------------------------------------------------------------------

// Baseline matcher: sigmoid(E . A^T).
Tensor dot_match(const Tensor& embeddings, const Tensor& attractors);

// TS-VAD matching stack (ISD + JSD + output head) without a front end; the
// attractors play the role of the speaker profiles.
struct TsVadMatcher {
    IsdModule isd;
    JsdModule jsd;  // always BLSTM_TIME_TRANS_SPK, 1 or 2 blocks
    LinearLayer head;

    static TsVadMatcher create(const TsVadDims& dims, Rng& rng);
    void collect(ParamList& params, const std::string& prefix) const;
};

Tensor tsvad_match(const Tensor& embeddings, const Tensor& attractors,
                   const TsVadMatcher& matcher);

// ---------------------------------------------------------------------------
// Composite model
// ---------------------------------------------------------------------------

struct EdaTsVadModel {
    EendDims eend_dims;
    TsVadDims matcher_dims;  // embed/profile widths forced to the encoder width
    EendEncoder encoder;
    EdaModule eda;
    TsVadMatcher matcher;

    static EdaTsVadModel create(const EendDims& eend, const TsVadDims& matcher_dims,
                                std::uint64_t seed);
    ParamList parameters() const;
};

struct EdaTsVadOutput {
    Tensor activities;  // [T, S] in (0,1); S = 0 gives an empty matrix
    AttractorSet attractors;
};

// Inference: encode, extract up to max_attractors, count, then match the
// decoded attractors against the unshuffled embeddings.
EdaTsVadOutput eda_tsvad_forward(const Tensor& stacked_features, const EdaTsVadModel& model);

// Same recipe with the baseline dot-product matcher in place of the TS-VAD
// matching stack (the eda_dot variant; the stored matcher is bypassed).
EdaTsVadOutput eda_dot_forward(const Tensor& stacked_features, const EdaTsVadModel& model);

// Training forward: the EDA branch sees time-shuffled embeddings and decodes
// true_n + 1 attractors for the existence loss; the matcher consumes the
// first true_n attractors and the original (unshuffled) embeddings.
struct EdaTsVadTrainOutput {
    Tensor activities;       // [T, true_n]
    Tensor existence_probs;  // [true_n + 1]
    Tensor attractors;       // [true_n + 1, d]
};

EdaTsVadTrainOutput eda_tsvad_forward_train(const Tensor& stacked_features,
                                            const EdaTsVadModel& model, int true_n,
                                            std::uint64_t shuffle_seed);

// Training forward for the eda_dot variant: identical attractor branch, dot
// matching for the activities.
EdaTsVadTrainOutput eda_dot_forward_train(const Tensor& stacked_features,
                                          const EdaTsVadModel& model, int true_n,
                                          std::uint64_t shuffle_seed);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean BCE of the decoded probabilities against [1,...,1, 0] (true_n ones).
Tensor existence_loss(const Tensor& probs, int true_n);

// Permutation-invariant BCE: cost[i][j] is the frame-masked mean BCE of
// prediction column i against target column j; the optimal assignment (exact,
// via hungarian) picks the loss. Returns the permutation for logging.
std::pair<Tensor, std::vector<int>> pit_bce_loss(const Tensor& pred, const Tensor& target,
                                                 const Tensor& mask);

struct CombinedLoss {
    Tensor loss;
    std::vector<int> permutation;
};

// pit_bce_loss + alpha * existence_loss.
CombinedLoss combined_loss(const Tensor& activities, const Tensor& labels, const Tensor& mask,
                           const Tensor& probs, int true_n, double alpha = 1.0);

}  // namespace diarkit
