#include "diarkit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace diarkit {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    put_u16(out, v & 0xffff);
    put_u16(out, v >> 16);
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
    out.insert(out.end(), tag, tag + 4);
}

struct ByteReader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw ContractError("wav: truncated file");
    }
    std::uint32_t u16() {
        need(2);
        std::uint32_t v = bytes[pos] | (std::uint32_t(bytes[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t lo = u16();
        return lo | (u16() << 16);
    }
    std::string tag() {
        need(4);
        std::string t(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4));
        pos += 4;
        return t;
    }
};

}  // namespace

std::int16_t quantize_sample(double x) {
    double clamped = std::clamp(x, -1.0, 1.0);
    long v = std::lrint(clamped * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    return static_cast<std::int16_t>(v);
}

std::vector<std::uint8_t> encode_wav(const Wav& wav) {
    if (wav.sample_rate <= 0) throw ContractError("wav: sample rate must be positive");
    const std::uint32_t data_size = static_cast<std::uint32_t>(wav.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_size);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_size);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(wav.sample_rate) * 2);  // byte rate
    put_u16(out, 2);   // block align
    put_u16(out, 16);  // bits per sample
    put_tag(out, "data");
    put_u32(out, data_size);
    for (double x : wav.samples) {
        put_u16(out, static_cast<std::uint16_t>(quantize_sample(x)));
    }
    return out;
}

Wav decode_wav(const std::vector<std::uint8_t>& bytes) {
    ByteReader r{bytes};
    if (r.tag() != "RIFF") throw ContractError("wav: missing RIFF header");
    r.u32();  // declared file size; trust the actual byte count instead
    if (r.tag() != "WAVE") throw ContractError("wav: not a WAVE file");

    bool have_fmt = false;
    std::uint32_t format = 0, channels = 0, bits = 0, rate = 0;
    Wav wav;
    bool have_data = false;
    while (r.pos + 8 <= bytes.size()) {
        std::string id = r.tag();
        std::uint32_t size = r.u32();
        if (id == "fmt ") {
            if (size < 16) throw ContractError("wav: fmt chunk too small");
            std::size_t next = r.pos + size;
            format = r.u16();
            channels = r.u16();
            rate = r.u32();
            r.u32();  // byte rate
            r.u16();  // block align
            bits = r.u16();
            have_fmt = true;
            r.pos = next;
        } else if (id == "data") {
            if (!have_fmt) throw ContractError("wav: data chunk before fmt chunk");
            r.need(size);
            const std::size_t n = size / 2;
            wav.samples.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t raw = bytes[r.pos + 2 * i] |
                                    (std::uint16_t(bytes[r.pos + 2 * i + 1]) << 8);
                wav.samples[i] = static_cast<std::int16_t>(raw) / 32768.0;
            }
            r.pos += size;
            have_data = true;
        } else {
            r.need(size);
            r.pos += size;
        }
        if (r.pos % 2 == 1 && r.pos < bytes.size()) ++r.pos;  // chunk padding
    }
    if (!have_fmt) throw ContractError("wav: missing fmt chunk");
    if (!have_data) throw ContractError("wav: missing data chunk");
    if (format != 1) throw ContractError("wav: only PCM (format 1) is supported");
    if (channels != 1) throw ContractError("wav: only mono audio is supported");
    if (bits != 16) throw ContractError("wav: only 16-bit samples are supported");
    if (rate == 0) throw ContractError("wav: sample rate must be positive");
    wav.sample_rate = static_cast<int>(rate);
    return wav;
}

Wav read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("wav: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

void write_wav(const std::string& path, const Wav& wav) {
    std::vector<std::uint8_t> bytes = encode_wav(wav);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("wav: cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("wav: write failed for " + path);
}

std::vector<double> resample_nearest(const std::vector<double>& samples, int sr_in,
                                     int sr_out) {
    if (sr_in <= 0 || sr_out <= 0) {
        throw ContractError("resample: sample rates must be positive");
    }
    if (sr_in == sr_out || samples.empty()) return samples;
    const auto n_in = static_cast<long long>(samples.size());
    const auto n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * sr_out / sr_in));
    std::vector<double> out(n_out);
    const double ratio = static_cast<double>(sr_in) / sr_out;
    for (std::size_t i = 0; i < n_out; ++i) {
        long long src = std::llround(static_cast<double>(i) * ratio);
        src = std::clamp(src, 0LL, n_in - 1);
        out[i] = samples[static_cast<std::size_t>(src)];
    }
    return out;
}

}  // namespace diarkit
