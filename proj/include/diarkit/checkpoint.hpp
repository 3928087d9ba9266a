#pragma once

// Versioned binary checkpoint container.
//
// Layout (all integers little-endian):
//   8 bytes   magic "DIARKIT1"
//   u32       format version (currently 1)
//   u64       config snapshot length, then that many bytes of config text
//   u32       entry count
//   per entry:
//     u32     name length, then the name bytes
//     u8      dtype code (1 = f32, 2 = f64)
//     u32     rank, then rank u32 dims
//     payload row-major, 4 or 8 bytes per element
//   u32       CRC-32 of every preceding byte
//
// The default dtype is f64: save followed by load reproduces parameter values
// bit for bit, so forward outputs match exactly. f32 halves the file at the
// cost of rounding and exists for size-sensitive exports.

#include "diarkit/config.hpp"
#include "diarkit/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diarkit {

enum class CheckpointDtype : std::uint8_t { F32 = 1, F64 = 2 };

struct CheckpointData {
    Config config;
    ParamList entries;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

// Serialized forms; file variants wrap these with I/O. Save never mutates the
// model; load validates magic, version, and checksum before parsing entries
// (a truncated or bit-flipped file fails the checksum).
std::vector<std::uint8_t> encode_checkpoint(const ParamList& params, const Config& config,
                                            CheckpointDtype dtype = CheckpointDtype::F64);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParamList& params, const Config& config, const std::string& path,
                     CheckpointDtype dtype = CheckpointDtype::F64);
CheckpointData load_checkpoint(const std::string& path);

// Copies loaded entry values into an existing parameter list. Every parameter
// must be matched by name with an identical shape, and no entry may be left
// over; mismatches name the offending parameter.
void load_into(ParamList& params, const CheckpointData& data);

// Exact size in bytes encode_checkpoint would produce — the test oracle for
// the "sum of parameter payloads plus header" arithmetic.
std::size_t checkpoint_size_bytes(const ParamList& params, const Config& config,
                                  CheckpointDtype dtype);

}  // namespace diarkit
