#include "diarkit/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <span>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace diarkit {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const char kMagic[9] = "DIARKIT1";
constexpr std::uint32_t kVersion = 1;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw ContractError("checkpoint: truncated entry data");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + std::size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + std::size_t(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    static const std::array<std::uint32_t, 256> table = make_crc_table();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < size; ++i) {
        c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> encode_checkpoint(const ParamList& params, const Config& config,
                                            CheckpointDtype dtype) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    const std::string snapshot = serialize_config(config);
    put_u64(out, snapshot.size());
    out.insert(out.end(), snapshot.begin(), snapshot.end());
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        put_u8(out, static_cast<std::uint8_t>(dtype));
        put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (int i = 0; i < p.tensor.rank(); ++i) {
            put_u32(out, static_cast<std::uint32_t>(p.tensor.dim(i)));
        }
        const std::span<const double> values = p.tensor.values();
        if (dtype == CheckpointDtype::F64) {
            const std::size_t base = out.size();
            out.resize(base + values.size() * 8);
            std::memcpy(out.data() + base, values.data(), values.size() * 8);
        } else {
            const std::size_t base = out.size();
            out.resize(base + values.size() * 4);
            for (std::size_t i = 0; i < values.size(); ++i) {
                const float f = static_cast<float>(values[i]);
                std::memcpy(out.data() + base + i * 4, &f, 4);
            }
        }
    }
    put_u32(out, crc32(out.data(), out.size()));
    return out;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw ContractError("checkpoint: magic mismatch (not a checkpoint file)");
    }
    if (bytes.size() < 16) {
        throw ContractError("checkpoint: checksum mismatch (file truncated)");
    }
    Reader header{bytes, 8};
    const std::uint32_t version = header.u32();
    if (version != kVersion) {
        throw ContractError("checkpoint: unsupported format version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kVersion) + ")");
    }
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data(), bytes.size() - 4) != stored) {
        throw ContractError("checkpoint: checksum mismatch (file truncated or corrupted)");
    }

    Reader r{bytes, 12};
    const std::uint64_t snapshot_len = r.u64();
    const std::string snapshot = r.str(static_cast<std::size_t>(snapshot_len));
    CheckpointData data;
    data.config = parse_config_text(snapshot);
    const std::uint32_t count = r.u32();
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        NamedParam p;
        p.name = r.str(name_len);
        const std::uint8_t dtype = r.u8();
        if (dtype != static_cast<std::uint8_t>(CheckpointDtype::F32) &&
            dtype != static_cast<std::uint8_t>(CheckpointDtype::F64)) {
            throw ContractError("checkpoint: entry '" + p.name + "' has unknown dtype code " +
                                std::to_string(dtype));
        }
        const std::uint32_t rank = r.u32();
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t d = r.u32();
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        std::vector<double> values(numel);
        if (dtype == static_cast<std::uint8_t>(CheckpointDtype::F64)) {
            r.need(numel * 8);
            std::memcpy(values.data(), bytes.data() + r.pos, numel * 8);
            r.pos += numel * 8;
        } else {
            r.need(numel * 4);
            for (std::size_t i = 0; i < numel; ++i) {
                float f = 0.0f;
                std::memcpy(&f, bytes.data() + r.pos + i * 4, 4);
                values[i] = static_cast<double>(f);
            }
            r.pos += numel * 4;
        }
        p.tensor = Tensor::from_data(shape, std::move(values));
        data.entries.push_back(std::move(p));
    }
    if (r.pos != bytes.size() - 4) {
        throw ContractError("checkpoint: trailing bytes after the last entry");
    }
    return data;
}

void save_checkpoint(const ParamList& params, const Config& config, const std::string& path,
                     CheckpointDtype dtype) {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(params, config, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

void load_into(ParamList& params, const CheckpointData& data) {
    std::map<std::string, const NamedParam*> by_name;
    for (const NamedParam& e : data.entries) {
        if (!by_name.emplace(e.name, &e).second) {
            throw ContractError("checkpoint: duplicate entry '" + e.name + "'");
        }
    }
    for (NamedParam& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            throw ContractError("checkpoint: missing entry for parameter '" + p.name + "'");
        }
        const Tensor& src = it->second->tensor;
        if (src.shape != p.tensor.shape) {
            throw ContractError("checkpoint: shape mismatch for parameter '" + p.name + "'");
        }
        const std::span<const double> from = src.values();
        const std::span<double> to = p.tensor.mutable_values();
        std::copy(from.begin(), from.end(), to.begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw ContractError("checkpoint: entry '" + by_name.begin()->first +
                            "' matches no model parameter");
    }
}

std::size_t checkpoint_size_bytes(const ParamList& params, const Config& config,
                                  CheckpointDtype dtype) {
    const std::size_t elem = dtype == CheckpointDtype::F64 ? 8 : 4;
    std::size_t size = 8 + 4;                                // magic + version
    size += 8 + serialize_config(config).size();             // config snapshot
    size += 4;                                               // entry count
    for (const NamedParam& p : params) {
        size += 4 + p.name.size();                           // name
        size += 1;                                           // dtype code
        size += 4 + 4 * static_cast<std::size_t>(p.tensor.rank());  // rank + dims
        size += elem * p.tensor.numel();                     // payload
    }
    return size + 4;                                         // checksum
}

}  // namespace diarkit
