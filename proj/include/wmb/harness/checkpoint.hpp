#pragma once

// Parameter checkpoints. Layout (all integers little-endian):
//   magic "WMBCKPT1", u32 version, u32 entry count,
//   entries: str name, u32 rows, u32 cols, u64 payload offset, u8 frozen,
//   u64 payload bytes, payload of f64 values (row-major per parameter).
// Strings are u32 length + bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "wmb/numcore/nn.hpp"

namespace wmb::harness {

struct ManifestEntry {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::uint64_t offset = 0;  // bytes into the payload
    bool frozen = false;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<Parameter>& params);
void save_checkpoint(const std::vector<Parameter>& params, const std::filesystem::path& path);

/// Manifest only; validates the header and payload length.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads values into the given parameters. Throws std::runtime_error on a
/// corrupt or truncated file (with the byte offset), on a shape mismatch
/// (naming the parameter), or when names do not match one to one.
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, std::vector<Parameter>& params);
void load_checkpoint(const std::filesystem::path& path, std::vector<Parameter>& params);

}  // namespace wmb::harness
