#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lorakit/tensor.hpp"

namespace lorakit {

// FNV-1a 64-bit digest, used for manifest input/output fingerprints.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string fnv1a64_hex(std::uint64_t digest);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// Versioned binary container for named matrices (checkpoints, adapters).
// Layout: 8-byte magic "LKTENSR\0", u32 LE version, u32 LE header length,
// header JSON (UTF-8), then each tensor's data as little-endian float64 in
// header order. The header carries `kind`, `meta`, and ordered tensor
// descriptors with shapes.
struct NamedTensorFile {
    std::string kind;
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const NamedTensorFile& file);
NamedTensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace lorakit
