#include "unitprompt/container.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "unitprompt/error.hpp"

namespace unitprompt::container {

static_assert(std::endian::native == std::endian::little, "f32 blobs are written in host order");

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw FormatError("base64: invalid encoding");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

void round_f32(std::span<double> xs) {
  for (double& x : xs) x = round_f32(x);
}

std::vector<std::uint8_t> f32_bytes(std::span<const double> xs) {
  std::vector<std::uint8_t> out(xs.size() * sizeof(float));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const float f = static_cast<float>(xs[i]);
    std::memcpy(out.data() + i * sizeof(float), &f, sizeof(float));
  }
  return out;
}

std::vector<double> from_f32_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % sizeof(float) != 0) throw FormatError("tensor blob is not a whole number of float32");
  std::vector<double> out(bytes.size() / sizeof(float));
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    out[i] = f;
  }
  return out;
}

std::string digest(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> all;
  for (const auto& t : tensors) {
    const auto blob = f32_bytes(t.data);
    all.insert(all.end(), blob.begin(), blob.end());
  }
  return sha256_hex(all);
}

json tensors_to_json(const std::vector<NamedTensor>& tensors) {
  json arr = json::array();
  for (const auto& t : tensors) {
    arr.push_back({{"name", t.name}, {"shape", t.shape}, {"data", base64_encode(f32_bytes(t.data))}});
  }
  return arr;
}

std::vector<NamedTensor> tensors_from_json(const json& entries) {
  if (!entries.is_array()) throw FormatError("checkpoint: \"tensors\" is not an array");
  std::vector<NamedTensor> out;
  for (const auto& e : entries) {
    if (!e.is_object() || !e.contains("name") || !e.contains("shape") || !e.contains("data")) {
      throw FormatError("checkpoint: tensor entry missing name/shape/data");
    }
    NamedTensor t;
    try {
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      t.data = from_f32_bytes(base64_decode(e.at("data").get<std::string>()));
    } catch (const json::exception& ex) {
      throw FormatError(std::string("checkpoint: malformed tensor entry: ") + ex.what());
    }
    if (shape_numel(t.shape) != t.data.size()) {
      throw FormatError("checkpoint: tensor '" + t.name + "' has " + std::to_string(t.data.size()) +
                        " values for shape " + shape_str(t.shape));
    }
    out.push_back(std::move(t));
  }
  return out;
}

const NamedTensor& find(const std::vector<NamedTensor>& tensors, std::string_view name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint: missing tensor '" + std::string(name) + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ValueError("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": corrupt JSON (" + e.what() + ")");
  }
}

std::string dump(const json& j) { return j.dump(); }

}  // namespace unitprompt::container
