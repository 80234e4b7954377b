#pragma once

// Tensor container shared by backbone and tuned-run checkpoints:
//
//   {"format_version", "config", "param_digest",
//    "tensors": [{"name", "shape", "data"}, ...], ...}
//
// "data" is base64 of little-endian float32 in row-major order and
// param_digest is SHA-256 over the concatenated blobs in manifest order.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unitprompt/tensor.hpp"

namespace unitprompt::container {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Nearest float32 value, widened back to double.
double round_f32(double x);
void round_f32(std::span<double> xs);
std::vector<std::uint8_t> f32_bytes(std::span<const double> xs);
std::vector<double> from_f32_bytes(std::span<const std::uint8_t> bytes);

std::string digest(const std::vector<NamedTensor>& tensors);

json tensors_to_json(const std::vector<NamedTensor>& tensors);
// Throws FormatError on malformed entries.
std::vector<NamedTensor> tensors_from_json(const json& entries);
const NamedTensor& find(const std::vector<NamedTensor>& tensors, std::string_view name);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
json read_json(const std::filesystem::path& path);
// Compact single-line dump, stable across runs.
std::string dump(const json& j);

}  // namespace unitprompt::container
