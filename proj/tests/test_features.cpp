#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diarkit/features.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace diarkit;

namespace {

// Quadratic-time DFT used as the oracle for the radix-2 implementation.
void naive_dft(const std::vector<double>& x, std::vector<double>& re,
               std::vector<double>& im) {
    const std::size_t n = x.size();
    re.assign(n, 0.0);
    im.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi *
                               static_cast<double>(k) * static_cast<double>(t) /
                               static_cast<double>(n);
            re[k] += x[t] * std::cos(ang);
            im[k] += x[t] * std::sin(ang);
        }
    }
}

double hz_to_mel_oracle(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz_oracle(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

TEST_CASE("radix-2 transform matches the quadratic DFT") {
    Rng rng(21);
    for (int n : {2, 8, 64, 256}) {
        std::vector<double> x(static_cast<std::size_t>(n));
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        std::vector<double> re(x), im(static_cast<std::size_t>(n), 0.0);
        fft_radix2(re, im);
        std::vector<double> ore, oim;
        naive_dft(x, ore, oim);
        for (int k = 0; k < n; ++k) {
            CHECK(std::abs(re[static_cast<std::size_t>(k)] - ore[static_cast<std::size_t>(k)]) <
                  1e-9 * n);
            CHECK(std::abs(im[static_cast<std::size_t>(k)] - oim[static_cast<std::size_t>(k)]) <
                  1e-9 * n);
        }
    }
}

TEST_CASE("an impulse transforms to a flat spectrum") {
    std::vector<double> re = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    std::vector<double> im(8, 0.0);
    fft_radix2(re, im);
    for (int k = 0; k < 8; ++k) {
        CHECK(re[static_cast<std::size_t>(k)] == doctest::Approx(1.0));
        CHECK(im[static_cast<std::size_t>(k)] == doctest::Approx(0.0));
    }
}

TEST_CASE("energy is conserved per Parseval") {
    Rng rng(22);
    std::vector<double> x(128);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    double time_energy = 0.0;
    for (double v : x) time_energy += v * v;
    std::vector<double> re(x), im(128, 0.0);
    fft_radix2(re, im);
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < 128; ++k) freq_energy += re[k] * re[k] + im[k] * im[k];
    CHECK(freq_energy / 128.0 == doctest::Approx(time_energy).epsilon(1e-10));
}

TEST_CASE("non-power-of-two lengths are rejected") {
    std::vector<double> re(6, 0.0), im(6, 0.0);
    CHECK_THROWS_AS(fft_radix2(re, im), ContractError);
    std::vector<double> re2(8, 0.0), im2(4, 0.0);
    CHECK_THROWS_AS(fft_radix2(re2, im2), ContractError);
    CHECK(next_pow2(400) == 512);
    CHECK(next_pow2(512) == 512);
    CHECK(next_pow2(1) == 1);
}

// ---------------------------------------------------------------------------
// Mel scale and filterbank
// ---------------------------------------------------------------------------

TEST_CASE("the mel scale hits its published anchor") {
    CHECK(mel_scale(0.0) == 0.0);
    CHECK(mel_scale(1000.0) == doctest::Approx(1000.0).epsilon(1e-4));
    for (double f : {55.0, 440.0, 3000.0, 7999.0}) {
        CHECK(mel_inverse(mel_scale(f)) == doctest::Approx(f).epsilon(1e-12));
        CHECK(mel_scale(f) == doctest::Approx(hz_to_mel_oracle(f)).epsilon(1e-12));
    }
    CHECK(mel_to_hz_oracle(hz_to_mel_oracle(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("filter centers are equally spaced in mel and strictly increasing") {
    auto centers = mel_center_freqs(40, 16000);
    REQUIRE(centers.size() == 40);
    const double step = hz_to_mel_oracle(8000.0) / 41.0;
    for (std::size_t m = 0; m < centers.size(); ++m) {
        CHECK(hz_to_mel_oracle(centers[m]) ==
              doctest::Approx(step * (static_cast<double>(m) + 1.0)).epsilon(1e-10));
        if (m > 0) CHECK(centers[m] > centers[m - 1]);
    }
}

TEST_CASE("filters are triangular with unit peak near their center") {
    const int nfft = 512, sr = 16000, bins = 24;
    auto fb = mel_filterbank(bins, nfft, sr);
    auto centers = mel_center_freqs(bins, sr);
    REQUIRE(fb.size() == static_cast<std::size_t>(bins));
    for (int m = 0; m < bins; ++m) {
        const auto& filt = fb[static_cast<std::size_t>(m)];
        REQUIRE(filt.size() == static_cast<std::size_t>(nfft / 2 + 1));
        double peak = 0.0;
        int peak_k = 0;
        for (int k = 0; k <= nfft / 2; ++k) {
            CHECK(filt[static_cast<std::size_t>(k)] >= 0.0);
            CHECK(filt[static_cast<std::size_t>(k)] <= 1.0 + 1e-12);
            if (filt[static_cast<std::size_t>(k)] > peak) {
                peak = filt[static_cast<std::size_t>(k)];
                peak_k = k;
            }
        }
        CHECK(peak > 0.0);
        // The best FFT bin sits within one bin width of the analytic center.
        const double bin_hz = static_cast<double>(sr) / nfft;
        CHECK(std::abs(peak_k * bin_hz - centers[static_cast<std::size_t>(m)]) <= bin_hz);
    }
}

TEST_CASE("filterbank weights match an independent triangle evaluation") {
    const int nfft = 64, sr = 2000, bins = 6;
    auto fb = mel_filterbank(bins, nfft, sr);
    const double hi = hz_to_mel_oracle(sr / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(bins) + 2);
    for (int i = 0; i < bins + 2; ++i) {
        edges[static_cast<std::size_t>(i)] = mel_to_hz_oracle(hi * i / (bins + 1));
    }
    for (int m = 0; m < bins; ++m) {
        for (int k = 0; k <= nfft / 2; ++k) {
            const double f = static_cast<double>(k) * sr / nfft;
            const double l = edges[static_cast<std::size_t>(m)];
            const double c = edges[static_cast<std::size_t>(m) + 1];
            const double r = edges[static_cast<std::size_t>(m) + 2];
            double expected = 0.0;
            if (f >= l && f <= c) {
                expected = (f - l) / (c - l);
            } else if (f > c && f <= r) {
                expected = (r - f) / (r - c);
            }
            CHECK(fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] ==
                  doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

// ---------------------------------------------------------------------------
// logmel
// ---------------------------------------------------------------------------

TEST_CASE("one second at 16 kHz yields 98 frames") {
    std::vector<double> audio(16000, 0.0);
    FeatureConfig cfg = FeatureConfig::target_speaker_path();
    Tensor feats = logmel(audio, cfg);
    CHECK((feats.shape == Shape{98, 80}));
    CHECK(cfg.window_samples() == 400);
    CHECK(cfg.hop_samples() == 160);
}

TEST_CASE("silence maps to the log of the floor everywhere") {
    std::vector<double> audio(8000, 0.0);
    FeatureConfig cfg = FeatureConfig::attractor_path();
    Tensor feats = logmel(audio, cfg);
    const double expected = std::log(1e-10);
    for (double v : feats.values()) CHECK(v == expected);
}

TEST_CASE("a pure 1 kHz tone peaks in the nearest-center mel bin") {
    FeatureConfig cfg = FeatureConfig::target_speaker_path();
    std::vector<double> audio(16000);
    for (std::size_t i = 0; i < audio.size(); ++i) {
        audio[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(i) / 16000.0);
    }
    Tensor feats = logmel(audio, cfg);

    // Independent nearest-center computation from the mel formula.
    const double hi = hz_to_mel_oracle(8000.0);
    int nearest = 0;
    double best = 1e300;
    for (int m = 0; m < 80; ++m) {
        const double center = mel_to_hz_oracle(hi * (m + 1) / 81.0);
        if (std::abs(center - 1000.0) < best) {
            best = std::abs(center - 1000.0);
            nearest = m;
        }
    }
    for (int t = 0; t < feats.dim(0); ++t) {
        int argmax = 0;
        double top = -1e300;
        for (int m = 0; m < 80; ++m) {
            if (feats.at2(t, m) > top) {
                top = feats.at2(t, m);
                argmax = m;
            }
        }
        CHECK(argmax == nearest);
    }
}

TEST_CASE("logmel matches a from-scratch reimplementation") {
    FeatureConfig cfg;
    cfg.sample_rate = 2000;
    cfg.window_ms = 16.0;  // 32 samples
    cfg.hop_ms = 8.0;      // 16 samples
    cfg.mel_bins = 6;
    Rng rng(31);
    std::vector<double> audio(200);
    for (double& v : audio) v = rng.uniform(-1.0, 1.0);
    Tensor feats = logmel(audio, cfg);
    REQUIRE((feats.shape == Shape{11, 6}));

    const int win = 32, hop = 16, nfft = 32;
    const double hi = hz_to_mel_oracle(1000.0);
    std::vector<double> edges(8);
    for (int i = 0; i < 8; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz_oracle(hi * i / 7.0);
    for (int t = 0; t < 11; ++t) {
        std::vector<double> frame(static_cast<std::size_t>(nfft), 0.0);
        for (int i = 0; i < win; ++i) {
            const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
            frame[static_cast<std::size_t>(i)] =
                audio[static_cast<std::size_t>(t * hop + i)] * w;
        }
        std::vector<double> re, im;
        naive_dft(frame, re, im);
        for (int m = 0; m < 6; ++m) {
            double energy = 0.0;
            for (int k = 0; k <= nfft / 2; ++k) {
                const double f = static_cast<double>(k) * 2000.0 / nfft;
                const double l = edges[static_cast<std::size_t>(m)];
                const double c = edges[static_cast<std::size_t>(m) + 1];
                const double r = edges[static_cast<std::size_t>(m) + 2];
                double weight = 0.0;
                if (f >= l && f <= c) {
                    weight = (f - l) / (c - l);
                } else if (f > c && f <= r) {
                    weight = (r - f) / (r - c);
                }
                energy += weight * (re[static_cast<std::size_t>(k)] * re[static_cast<std::size_t>(k)] +
                                    im[static_cast<std::size_t>(k)] * im[static_cast<std::size_t>(k)]);
            }
            const double expected = std::log(std::max(energy, 1e-10));
            CHECK(feats.at2(t, m) == doctest::Approx(expected).epsilon(1e-9));
        }
    }
}

TEST_CASE("feature preconditions are enforced") {
    FeatureConfig cfg;
    CHECK_THROWS_AS(logmel({}, cfg), ContractError);
    CHECK_THROWS_AS(logmel(std::vector<double>(100, 0.0), cfg), ContractError);  // < window
    FeatureConfig bad_hop = cfg;
    bad_hop.hop_ms = 30.0;  // hop > window
    CHECK_THROWS_AS(logmel(std::vector<double>(16000, 0.0), bad_hop), ContractError);
    FeatureConfig bad_mel = cfg;
    bad_mel.mel_bins = 0;
    CHECK_THROWS_AS(logmel(std::vector<double>(16000, 0.0), bad_mel), ContractError);
    FeatureConfig bad_floor = cfg;
    bad_floor.log_floor = 0.0;
    CHECK_THROWS_AS(logmel(std::vector<double>(16000, 0.0), bad_floor), ContractError);
}

// ---------------------------------------------------------------------------
// stack_subsample
// ---------------------------------------------------------------------------

TEST_CASE("fifteen 40-dim frames collapse to one 600-dim frame") {
    Rng rng(41);
    Tensor frames = Tensor::zeros({15, 40});
    for (double& v : frames.mutable_values()) v = rng.uniform(-1.0, 1.0);
    Tensor out = stack_subsample(frames, 15, 10);
    REQUIRE((out.shape == Shape{1, 600}));
    // Output frame 0 concatenates input rows clamp(0*10 + j) for j in [-7, 7].
    for (int j = -7; j <= 7; ++j) {
        const int src = std::max(0, std::min(14, j));
        for (int d = 0; d < 40; ++d) {
            CHECK(out.at2(0, (j + 7) * 40 + d) == frames.at2(src, d));
        }
    }
}

TEST_CASE("a hundred frames subsample to ten") {
    Tensor frames = Tensor::zeros({100, 4});
    for (int t = 0; t < 100; ++t) {
        for (int d = 0; d < 4; ++d) frames.mutable_values()[static_cast<std::size_t>(t * 4 + d)] = t;
    }
    Tensor out = stack_subsample(frames, 15, 10);
    REQUIRE((out.shape == Shape{10, 60}));
    // Interior frame 5 reads rows 43..57 in order, no clamping.
    for (int j = -7; j <= 7; ++j) {
        CHECK(out.at2(5, (j + 7) * 4) == doctest::Approx(50 + j));
    }
    // Edge frame 0 clamps all negative indices to row 0.
    CHECK(out.at2(0, 0) == 0.0);
    CHECK(out.at2(0, 7 * 4) == 0.0);
    CHECK(out.at2(0, 14 * 4) == 7.0);
}

TEST_CASE("constant rows stay constant") {
    Tensor frames = Tensor::full({40, 3}, 0.75);
    Tensor out = stack_subsample(frames, 15, 10);
    REQUIRE((out.shape == Shape{4, 45}));
    for (double v : out.values()) CHECK(v == 0.75);
}

TEST_CASE("stacking matches an index-arithmetic oracle on random input") {
    Rng rng(42);
    Tensor frames = Tensor::zeros({37, 5});
    for (double& v : frames.mutable_values()) v = rng.uniform(-2.0, 2.0);
    const int stack = 7, factor = 3;
    Tensor out = stack_subsample(frames, stack, factor);
    REQUIRE((out.shape == Shape{12, 35}));
    for (int t = 0; t < 12; ++t) {
        for (int j = -3; j <= 3; ++j) {
            const int src = std::max(0, std::min(36, t * factor + j));
            for (int d = 0; d < 5; ++d) {
                CHECK(out.at2(t, (j + 3) * 5 + d) == frames.at2(src, d));
            }
        }
    }
}

TEST_CASE("stacking preconditions are enforced") {
    Tensor frames = Tensor::zeros({14, 40});
    CHECK_THROWS_AS(stack_subsample(frames, 15, 10), ContractError);  // too short
    Tensor ok = Tensor::zeros({20, 40});
    CHECK_THROWS_AS(stack_subsample(ok, 14, 10), ContractError);  // even stack
    CHECK_THROWS_AS(stack_subsample(ok, 15, 0), ContractError);   // bad factor
    CHECK_THROWS_AS(stack_subsample(Tensor::zeros({2, 3, 4}), 3, 1), ContractError);
}
