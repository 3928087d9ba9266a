#include "diarkit/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace diarkit {

int FeatureConfig::window_samples() const {
    return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
}

int FeatureConfig::hop_samples() const {
    return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

FeatureConfig FeatureConfig::target_speaker_path() {
    FeatureConfig cfg;
    cfg.mel_bins = 80;
    return cfg;
}

FeatureConfig FeatureConfig::attractor_path() {
    FeatureConfig cfg;
    cfg.mel_bins = 40;
    return cfg;
}

void FeatureConfig::validate() const {
    if (sample_rate <= 0) throw ContractError("features: sample rate must be positive");
    if (window_ms <= 0 || hop_ms <= 0) {
        throw ContractError("features: window and hop must be positive");
    }
    if (hop_samples() > window_samples()) {
        throw ContractError("features: hop must not exceed window");
    }
    if (mel_bins < 1) throw ContractError("features: need at least one mel bin");
    if (log_floor <= 0) throw ContractError("features: log floor must be positive");
}

double mel_scale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_inverse(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

namespace {

// mel_bins + 2 edge frequencies equally spaced on the mel scale over
// [0, Nyquist]; filter m spans edges[m]..edges[m+2] peaking at edges[m+1].
std::vector<double> mel_edge_freqs(int mel_bins, int sample_rate) {
    const double lo = mel_scale(0.0);
    const double hi = mel_scale(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(mel_bins) + 2);
    for (int i = 0; i < mel_bins + 2; ++i) {
        edges[static_cast<std::size_t>(i)] =
            mel_inverse(lo + (hi - lo) * i / (mel_bins + 1));
    }
    return edges;
}

}  // namespace

std::vector<double> mel_center_freqs(int mel_bins, int sample_rate) {
    if (mel_bins < 1) throw ContractError("features: need at least one mel bin");
    std::vector<double> edges = mel_edge_freqs(mel_bins, sample_rate);
    return {edges.begin() + 1, edges.end() - 1};
}

std::vector<std::vector<double>> mel_filterbank(int mel_bins, int nfft,
                                                int sample_rate) {
    if (mel_bins < 1) throw ContractError("features: need at least one mel bin");
    if (nfft < 2) throw ContractError("features: nfft must be at least 2");
    std::vector<double> edges = mel_edge_freqs(mel_bins, sample_rate);
    const int n_bins = nfft / 2 + 1;
    std::vector<std::vector<double>> fb(
        static_cast<std::size_t>(mel_bins),
        std::vector<double>(static_cast<std::size_t>(n_bins), 0.0));
    for (int m = 0; m < mel_bins; ++m) {
        const double left = edges[static_cast<std::size_t>(m)];
        const double center = edges[static_cast<std::size_t>(m) + 1];
        const double right = edges[static_cast<std::size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / nfft;
            double w = 0.0;
            if (f >= left && f <= center && center > left) {
                w = (f - left) / (center - left);
            } else if (f > center && f <= right && right > center) {
                w = (right - f) / (right - center);
            }
            fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w;
        }
    }
    return fb;
}

int next_pow2(int n) {
    int p = 1;
    while (p < n) p *= 2;
    return p;
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = re.size();
    if (im.size() != n) throw ContractError("fft: mismatched buffer lengths");
    if (n == 0 || (n & (n - 1)) != 0) {
        throw ContractError("fft: length must be a power of two");
    }
    // Bit-reversal permutation.
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::size_t a = i + k, b = i + k + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

Tensor logmel(const std::vector<double>& audio, const FeatureConfig& cfg) {
    cfg.validate();
    const int win = cfg.window_samples();
    const int hop = cfg.hop_samples();
    if (audio.empty()) throw ContractError("logmel: empty audio");
    if (static_cast<int>(audio.size()) < win) {
        throw ContractError("logmel: audio shorter than one window");
    }
    const int t0 = (static_cast<int>(audio.size()) - win) / hop + 1;
    const int nfft = next_pow2(win);
    const int n_bins = nfft / 2 + 1;

    std::vector<double> hann(static_cast<std::size_t>(win));
    for (int i = 0; i < win; ++i) {
        hann[static_cast<std::size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
    }
    const auto fb = mel_filterbank(cfg.mel_bins, nfft, cfg.sample_rate);

    std::vector<double> out(static_cast<std::size_t>(t0) * cfg.mel_bins);
    std::vector<double> re(static_cast<std::size_t>(nfft));
    std::vector<double> im(static_cast<std::size_t>(nfft));
    for (int t = 0; t < t0; ++t) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        const std::size_t base = static_cast<std::size_t>(t) * hop;
        for (int i = 0; i < win; ++i) {
            re[static_cast<std::size_t>(i)] =
                audio[base + static_cast<std::size_t>(i)] * hann[static_cast<std::size_t>(i)];
        }
        fft_radix2(re, im);
        for (int m = 0; m < cfg.mel_bins; ++m) {
            double energy = 0.0;
            const auto& filt = fb[static_cast<std::size_t>(m)];
            for (int k = 0; k < n_bins; ++k) {
                const double power = re[static_cast<std::size_t>(k)] * re[static_cast<std::size_t>(k)] +
                                     im[static_cast<std::size_t>(k)] * im[static_cast<std::size_t>(k)];
                energy += filt[static_cast<std::size_t>(k)] * power;
            }
            out[static_cast<std::size_t>(t) * cfg.mel_bins + m] =
                std::log(std::max(energy, cfg.log_floor));
        }
    }
    return Tensor::from_data({t0, cfg.mel_bins}, std::move(out));
}

Tensor stack_subsample(const Tensor& frames, int stack, int factor) {
    if (frames.rank() != 2) throw ContractError("stack_subsample: expected [T0, D]");
    if (stack < 1 || stack % 2 == 0) {
        throw ContractError("stack_subsample: stack must be odd and positive");
    }
    if (factor < 1) throw ContractError("stack_subsample: factor must be positive");
    const int t0 = frames.dim(0);
    const int d = frames.dim(1);
    if (t0 < stack) throw ContractError("stack_subsample: input shorter than the stack");
    const int t_out = t0 / factor;
    if (t_out < 1) throw ContractError("stack_subsample: input shorter than one output frame");
    const int half = stack / 2;
    std::vector<double> out(static_cast<std::size_t>(t_out) * stack * d);
    const auto& in = *frames.data;
    for (int t = 0; t < t_out; ++t) {
        for (int j = -half; j <= half; ++j) {
            const int src = std::clamp(t * factor + j, 0, t0 - 1);
            const std::size_t src_off = static_cast<std::size_t>(src) * d;
            const std::size_t dst_off =
                (static_cast<std::size_t>(t) * stack + (j + half)) * static_cast<std::size_t>(d);
            std::copy(in.begin() + static_cast<std::ptrdiff_t>(src_off),
                      in.begin() + static_cast<std::ptrdiff_t>(src_off + static_cast<std::size_t>(d)),
                      out.begin() + static_cast<std::ptrdiff_t>(dst_off));
        }
    }
    return Tensor::from_data({t_out, stack * d}, std::move(out));
}

}  // namespace diarkit
