// EMB1 tensor container.
//
//   offset 0   'E' 'M' 'B' '1'
//   offset 4   version byte (0x01)
//   offset 5   manifest length, uint32 little-endian
//   offset 9   manifest, UTF-8 JSON object
//   ...        payload: every tensor listed in manifest["tensors"], in order,
//              row-major IEEE-754 little-endian ("f64" or "f32")
//
// The manifest's "tensors" key is reserved; every other key is free-form
// metadata owned by the caller.
#ifndef ATTRN_CONTAINER_HPP
#define ATTRN_CONTAINER_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attrn/numkit.hpp"

namespace attrn {

enum class DType { f64, f32 };

std::string_view dtype_name(DType d);
std::size_t dtype_width(DType d);

struct ParseError : std::runtime_error {
  enum class Kind { bad_magic, bad_version, truncated, bad_manifest, dimension_mismatch, schema, io };

  ParseError(Kind k, std::size_t byte_offset, const std::string& what)
      : std::runtime_error(what), kind(k), offset(byte_offset) {}

  Kind kind;
  std::size_t offset;
};

struct Tensor {
  std::string name;
  Matrix data;
  DType dtype = DType::f64;
};

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Tensor> tensors;

  void add(std::string name, Matrix data, DType dtype = DType::f64);
  const Tensor* find(std::string_view name) const;
  /// Throws ParseError(schema) when the tensor is absent.
  const Matrix& at(std::string_view name) const;
};

inline constexpr std::uint8_t kContainerVersion = 0x01;

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace attrn

#endif  // ATTRN_CONTAINER_HPP
