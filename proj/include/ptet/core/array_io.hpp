#pragma once

// Self-describing binary arrays: magic, u32 header length, JSON header,
// then raw little-endian payload.
//
//   header = {"shape": [...], "dtype": "float64", "ordering": "<tag>", ...}

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace ptet {

struct ArrayHeader {
  std::vector<std::int64_t> shape;
  std::string dtype;     // "float32" | "float64" | "int32"
  std::string ordering;  // free-form tag describing the axis semantics
  nlohmann::json extra = nlohmann::json::object();
};

void write_array(const std::filesystem::path& path, const ArrayHeader& header,
                 const void* data, std::size_t bytes);

template <class T>
void write_array(const std::filesystem::path& path, ArrayHeader header,
                 const std::vector<T>& data);

// Returns the header and fills `payload` with the raw bytes.
ArrayHeader read_array(const std::filesystem::path& path, std::vector<char>& payload);

template <class T>
std::vector<T> read_array_as(const std::filesystem::path& path, ArrayHeader* header = nullptr);

std::size_t dtype_size(const std::string& dtype);

}  // namespace ptet
