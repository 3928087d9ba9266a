#pragma once

// Acoustic feature extraction: short-time log mel-filterbank energies and the
// stacked/subsampled variant used by the attractor-based model input.

#include "diarkit/tensor.hpp"

#include <vector>

namespace diarkit {

struct FeatureConfig {
    int sample_rate = 16000;
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int mel_bins = 80;
    double log_floor = 1e-10;

    int window_samples() const;
    int hop_samples() const;

    // 80-bin configuration feeding the target-speaker front end.
    static FeatureConfig target_speaker_path();
    // 40-bin configuration whose frames are stacked 15x and subsampled 10x.
    static FeatureConfig attractor_path();

    void validate() const;  // hop <= window, mel_bins >= 1, positive rates

    bool operator==(const FeatureConfig&) const = default;
};

// Mel scale (HTK convention) and its inverse.
double mel_scale(double hz);
double mel_inverse(double mel);

// Peak frequencies of the triangular filters spanning 0..Nyquist.
std::vector<double> mel_center_freqs(int mel_bins, int sample_rate);

// Triangular filters evaluated at the nfft/2+1 non-negative FFT bin
// frequencies; row m holds filter m, peak weight 1.
std::vector<std::vector<double>> mel_filterbank(int mel_bins, int nfft,
                                                int sample_rate);

// In-place iterative radix-2 FFT; both spans must have the same power-of-two
// length.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

// Smallest power of two >= n.
int next_pow2(int n);

// Log mel-filterbank energies: frames of `window` samples every `hop` samples
// (no centering, so T0 = (N - window)/hop + 1), periodic Hann window, power
// spectrum over the next-power-of-two FFT, triangular mel integration, then a
// floored natural log. Returns [T0, mel_bins].
Tensor logmel(const std::vector<double>& audio, const FeatureConfig& cfg);

// Output frame t concatenates `stack` consecutive input frames centered at
// t*factor (indices clamped to the valid range), keeping floor(T0/factor)
// frames. Input [T0, D] -> output [T0/factor, stack*D].
Tensor stack_subsample(const Tensor& frames, int stack = 15, int factor = 10);

}  // namespace diarkit
