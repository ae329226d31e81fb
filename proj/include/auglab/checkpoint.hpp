#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "auglab/tensor.hpp"

namespace auglab {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Named-tensor container: one JSON header line listing (name, shape) entries
// in payload order, then raw little-endian IEEE-754 doubles. Round-trips are
// bit-exact; byte order is written explicitly so the format does not depend
// on host endianness.

namespace detail {

inline void put_le64(std::string& buf, std::uint64_t bits) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return bits;
}

}  // namespace detail

inline void write_tensor_file(const std::string& path,
                              const std::vector<std::pair<std::string, Tensor>>& tensors) {
  nlohmann::json header = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    header.push_back({{"name", name}, {"shape", t.shape()}});
    for (double v : t.value()) detail::put_le64(payload, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << header.dump() << "\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<std::pair<std::string, Tensor>> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError(path + ": missing header line");

  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded() || !header.is_array())
    throw IoError(path + ": malformed header");

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  std::size_t offset = 0;

  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& entry : header) {
    if (!entry.contains("name") || !entry.contains("shape"))
      throw IoError(path + ": malformed header entry");
    const std::string name = entry["name"].get<std::string>();
    Shape shape = entry["shape"].get<Shape>();
    const long long n = shape_numel(shape);
    if (offset + static_cast<std::size_t>(n) * 8 > payload.size())
      throw IoError(path + ": truncated payload in tensor '" + name + "'");
    std::vector<double> data(n);
    for (long long i = 0; i < n; ++i)
      data[i] = std::bit_cast<double>(detail::get_le64(bytes + offset + 8 * i));
    offset += static_cast<std::size_t>(n) * 8;
    out.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  if (offset != payload.size())
    throw IoError(path + ": payload byte count does not match header shapes");
  return out;
}

// Map view for checkpoint consumers that look tensors up by name.
inline std::map<std::string, Tensor> read_tensor_map(const std::string& path) {
  std::map<std::string, Tensor> out;
  for (auto& [name, t] : read_tensor_file(path)) {
    if (!out.emplace(name, t).second) throw IoError(path + ": duplicate tensor '" + name + "'");
  }
  return out;
}

}  // namespace auglab
