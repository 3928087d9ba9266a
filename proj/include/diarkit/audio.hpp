#pragma once

// WAV audio input/output. The on-disk format is 16-bit PCM mono RIFF/WAVE;
// in memory samples are doubles in [-1, 1) using the symmetric 1/32768 scale,
// so writing what was read reproduces the original bytes exactly.

#include "diarkit/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diarkit {

struct Wav {
    int sample_rate = 16000;
    std::vector<double> samples;

    double duration_s() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

// Quantization used by the writer: clamp to [-1, 1], scale by 32768, round to
// nearest. Exposed so callers can pre-quantize when exact round trips matter.
std::int16_t quantize_sample(double x);

// Parses a RIFF/WAVE file. Unknown chunks are skipped; the format must be
// 16-bit PCM with one channel. Throws ContractError on anything else.
Wav read_wav(const std::string& path);
Wav decode_wav(const std::vector<std::uint8_t>& bytes);

// Writes a canonical 44-byte-header WAV file.
void write_wav(const std::string& path, const Wav& wav);
std::vector<std::uint8_t> encode_wav(const Wav& wav);

// Nearest-neighbor rate conversion: output sample i copies input sample
// round(i * sr_in / sr_out), clamped to the valid range. Identity when the
// rates already match.
std::vector<double> resample_nearest(const std::vector<double>& samples, int sr_in,
                                     int sr_out);

}  // namespace diarkit
