#include "ptet/core/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <type_traits>

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; big-endian hosts are unsupported");

namespace ptet {

namespace {

constexpr char kMagic[8] = {'E', 'I', 'T', 'A', 'R', 'R', '0', '1'};

template <class T>
std::string dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else if constexpr (std::is_same_v<T, double>) return "float64";
  else if constexpr (std::is_same_v<T, std::int32_t>) return "int32";
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

}  // namespace

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "float32" || dtype == "int32") return 4;
  if (dtype == "float64") return 8;
  throw std::invalid_argument("unknown dtype '" + dtype + "'");
}

void write_array(const std::filesystem::path& path, const ArrayHeader& header,
                 const void* data, std::size_t bytes) {
  std::size_t expected = dtype_size(header.dtype);
  for (auto d : header.shape) expected *= static_cast<std::size_t>(d);
  if (expected != bytes) throw std::invalid_argument("array payload does not match declared shape");

  nlohmann::json j = header.extra;
  j["shape"] = header.shape;
  j["dtype"] = header.dtype;
  j["ordering"] = header.ordering;
  const std::string text = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto len = static_cast<std::uint32_t>(text.size());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

template <class T>
void write_array(const std::filesystem::path& path, ArrayHeader header, const std::vector<T>& data) {
  header.dtype = dtype_name<T>();
  write_array(path, header, data.data(), data.size() * sizeof(T));
}

ArrayHeader read_array(const std::filesystem::path& path, std::vector<char>& payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint32_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + " is not an array file");
  std::string text(len, '\0');
  in.read(text.data(), len);
  auto j = nlohmann::json::parse(text);

  ArrayHeader h;
  h.shape = j.at("shape").get<std::vector<std::int64_t>>();
  h.dtype = j.at("dtype").get<std::string>();
  h.ordering = j.value("ordering", "");
  j.erase("shape");
  j.erase("dtype");
  j.erase("ordering");
  h.extra = std::move(j);

  std::size_t bytes = dtype_size(h.dtype);
  for (auto d : h.shape) bytes *= static_cast<std::size_t>(d);
  payload.resize(bytes);
  in.read(payload.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    throw std::runtime_error(path.string() + " is truncated");
  return h;
}

template <class T>
std::vector<T> read_array_as(const std::filesystem::path& path, ArrayHeader* header) {
  std::vector<char> raw;
  auto h = read_array(path, raw);
  if (h.dtype != dtype_name<T>())
    throw std::runtime_error(path.string() + ": expected " + dtype_name<T>() + ", found " + h.dtype);
  std::vector<T> out(raw.size() / sizeof(T));
  std::memcpy(out.data(), raw.data(), raw.size());
  if (header) *header = std::move(h);
  return out;
}

template void write_array<float>(const std::filesystem::path&, ArrayHeader, const std::vector<float>&);
template void write_array<double>(const std::filesystem::path&, ArrayHeader, const std::vector<double>&);
template void write_array<std::int32_t>(const std::filesystem::path&, ArrayHeader,
                                        const std::vector<std::int32_t>&);
template std::vector<float> read_array_as<float>(const std::filesystem::path&, ArrayHeader*);
template std::vector<double> read_array_as<double>(const std::filesystem::path&, ArrayHeader*);
template std::vector<std::int32_t> read_array_as<std::int32_t>(const std::filesystem::path&, ArrayHeader*);

}  // namespace ptet
