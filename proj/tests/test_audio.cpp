#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diarkit/audio.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

using namespace diarkit;

namespace {

Wav make_wav(int sr, std::vector<double> samples) {
    Wav w;
    w.sample_rate = sr;
    w.samples = std::move(samples);
    return w;
}

}  // namespace

TEST_CASE("quantization clamps and rounds symmetrically") {
    CHECK(quantize_sample(0.0) == 0);
    CHECK(quantize_sample(0.5) == 16384);
    CHECK(quantize_sample(1.0 / 32768.0) == 1);
    CHECK(quantize_sample(-1.0) == -32768);
    CHECK(quantize_sample(1.0) == 32767);   // +1.0 saturates
    CHECK(quantize_sample(1.5) == 32767);
    CHECK(quantize_sample(-2.0) == -32768);
}

TEST_CASE("grid-aligned samples survive encode/decode exactly") {
    std::vector<double> samples;
    for (int k = -32768; k <= 32767; k += 1013) samples.push_back(k / 32768.0);
    Wav original = make_wav(16000, samples);
    Wav back = decode_wav(encode_wav(original));
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(back.samples[i] == samples[i]);
}

TEST_CASE("decode then encode reproduces the byte stream") {
    Rng rng(12);
    std::vector<double> samples;
    for (int i = 0; i < 777; ++i) samples.push_back(rng.uniform(-1.2, 1.2));
    auto bytes = encode_wav(make_wav(8000, samples));
    CHECK(encode_wav(decode_wav(bytes)) == bytes);
}

TEST_CASE("file round trip preserves rate and payload") {
    Rng rng(13);
    std::vector<double> samples;
    for (int i = 0; i < 321; ++i) samples.push_back(rng.uniform(-0.9, 0.9));
    const std::string path = "/tmp/diarkit_test_roundtrip.wav";
    Wav original = make_wav(22050, samples);
    write_wav(path, original);
    Wav back = read_wav(path);
    CHECK(back.sample_rate == 22050);
    REQUIRE(back.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(std::abs(back.samples[i] - samples[i]) <= 0.5 / 32768.0);  // half an LSB
    }
    std::remove(path.c_str());
}

TEST_CASE("unknown chunks before the data chunk are skipped") {
    auto bytes = encode_wav(make_wav(16000, {0.25, -0.25}));
    // Splice a LIST chunk between "fmt " (ends at offset 36) and "data".
    std::vector<std::uint8_t> extra = {'L', 'I', 'S', 'T', 4, 0, 0, 0, 'I', 'N', 'F', 'O'};
    bytes.insert(bytes.begin() + 36, extra.begin(), extra.end());
    Wav back = decode_wav(bytes);
    REQUIRE(back.samples.size() == 2);
    CHECK(back.samples[0] == 0.25);
}

TEST_CASE("malformed containers are rejected") {
    auto good = encode_wav(make_wav(16000, {0.1, 0.2, 0.3}));

    std::vector<std::uint8_t> truncated(good.begin(), good.begin() + 10);
    CHECK_THROWS_AS(decode_wav(truncated), ContractError);

    auto bad_magic = good;
    bad_magic[3] = 'X';  // RIFX
    CHECK_THROWS_AS(decode_wav(bad_magic), ContractError);

    auto stereo = good;
    stereo[22] = 2;  // num_channels
    CHECK_THROWS_AS(decode_wav(stereo), ContractError);

    auto eight_bit = good;
    eight_bit[34] = 8;  // bits per sample
    CHECK_THROWS_AS(decode_wav(eight_bit), ContractError);

    auto ieee_float = good;
    ieee_float[20] = 3;  // format tag
    CHECK_THROWS_AS(decode_wav(ieee_float), ContractError);

    std::vector<std::uint8_t> no_data(good.begin(), good.begin() + 36);
    CHECK_THROWS_AS(decode_wav(no_data), ContractError);

    CHECK_THROWS_AS(read_wav("/tmp/diarkit_does_not_exist.wav"), ContractError);
}

TEST_CASE("resampling at the same rate is the identity") {
    std::vector<double> x = {0.1, 0.2, 0.3, 0.4};
    CHECK(resample_nearest(x, 16000, 16000) == x);
    CHECK(resample_nearest({}, 8000, 16000).empty());
}

TEST_CASE("downsampling by two keeps every other sample") {
    std::vector<double> x;
    for (int i = 0; i < 10; ++i) x.push_back(i);
    auto y = resample_nearest(x, 16000, 8000);
    REQUIRE(y.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(y[static_cast<std::size_t>(i)] == 2 * i);
}

TEST_CASE("upsampling doubles the length and repeats neighbors") {
    std::vector<double> x = {0.0, 1.0, 2.0};
    auto y = resample_nearest(x, 8000, 16000);
    REQUIRE(y.size() == 6);
    for (double v : y) CHECK((v == 0.0 || v == 1.0 || v == 2.0));
    CHECK(y.front() == 0.0);
    CHECK(y.back() == 2.0);
    CHECK_THROWS_AS(resample_nearest(x, 0, 16000), ContractError);
    CHECK_THROWS_AS(resample_nearest(x, 16000, -1), ContractError);
}

TEST_CASE("duration reflects rate and length") {
    Wav w = make_wav(16000, std::vector<double>(8000, 0.0));
    CHECK(w.duration_s() == doctest::Approx(0.5));
}
