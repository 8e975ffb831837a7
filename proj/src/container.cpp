#include "attrn/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace attrn {

static_assert(std::endian::native == std::endian::little,
              "EMB1 payloads are written with native little-endian stores");

std::string_view dtype_name(DType d) { return d == DType::f64 ? "f64" : "f32"; }
std::size_t dtype_width(DType d) { return d == DType::f64 ? 8 : 4; }

void Container::add(std::string name, Matrix data, DType dtype) {
  if (find(name)) throw std::invalid_argument("container: duplicate tensor '" + name + "'");
  tensors.push_back(Tensor{std::move(name), std::move(data), dtype});
}

const Tensor* Container::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Matrix& Container::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return t->data;
  throw ParseError(ParseError::Kind::schema, 0, "missing tensor '" + std::string(name) + "'");
}

namespace {

const std::uint8_t kMagic[4] = {0x45, 0x4D, 0x42, 0x31};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
void put_raw(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_raw(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_container(const Container& c) {
  if (!c.meta.is_object()) throw std::invalid_argument("container metadata must be a JSON object");
  if (c.meta.contains("tensors"))
    throw std::invalid_argument("container metadata may not use the reserved key 'tensors'");

  nlohmann::json manifest = c.meta;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : c.tensors) {
    manifest["tensors"].push_back({{"name", t.name},
                                   {"rows", t.data.rows()},
                                   {"cols", t.data.cols()},
                                   {"dtype", dtype_name(t.dtype)}});
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : c.tensors) {
    if (!t.data.allFinite())
      throw NumericError("container: tensor '" + t.name + "' holds non-finite values", 0);
    const double* p = t.data.data();
    const auto n = static_cast<std::size_t>(t.data.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (t.dtype == DType::f64)
        put_raw(out, p[i]);
      else
        put_raw(out, static_cast<float>(p[i]));
    }
  }
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  using K = ParseError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ParseError(K::bad_magic, 0, "EMB1: bad magic at byte 0");
  if (bytes.size() < 5) throw ParseError(K::truncated, 4, "EMB1: truncated before version byte 4");
  if (bytes[4] != kContainerVersion)
    throw ParseError(K::bad_version, 4,
                     "EMB1: unsupported version " + std::to_string(bytes[4]) + " at byte 4");
  if (bytes.size() < 9) throw ParseError(K::truncated, 5, "EMB1: truncated manifest length at byte 5");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[5 + i]) << (8 * i);
  if (bytes.size() < 9 + static_cast<std::size_t>(len))
    throw ParseError(K::truncated, 9,
                     "EMB1: manifest of " + std::to_string(len) + " bytes truncated at byte 9");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + len);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::bad_manifest, 9, std::string("EMB1: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw ParseError(K::bad_manifest, 9, "EMB1: manifest lacks a 'tensors' array");

  Container c;
  std::size_t offset = 9 + len;
  for (const auto& entry : manifest["tensors"]) {
    std::string name;
    std::int64_t rows = -1, cols = -1;
    DType dtype = DType::f64;
    try {
      name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<std::int64_t>();
      cols = entry.at("cols").get<std::int64_t>();
      const auto dt = entry.at("dtype").get<std::string>();
      if (dt == "f64")
        dtype = DType::f64;
      else if (dt == "f32")
        dtype = DType::f32;
      else
        throw ParseError(K::bad_manifest, 9, "EMB1: tensor '" + name + "' has unknown dtype " + dt);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(K::bad_manifest, 9, std::string("EMB1: malformed tensor entry: ") + e.what());
    }
    if (rows < 0 || cols < 0)
      throw ParseError(K::dimension_mismatch, offset,
                       "EMB1: tensor '" + name + "' has negative dimensions at byte " +
                           std::to_string(offset));
    const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    const std::size_t need = count * dtype_width(dtype);
    if (bytes.size() - offset < need)
      throw ParseError(K::truncated, offset,
                       "EMB1: payload truncated in tensor '" + name + "' at byte " +
                           std::to_string(offset) + " (need " + std::to_string(need) + ", have " +
                           std::to_string(bytes.size() - offset) + ")");
    Matrix m(rows, cols);
    const std::uint8_t* p = bytes.data() + offset;
    for (std::size_t i = 0; i < count; ++i) {
      m.data()[i] = dtype == DType::f64 ? get_raw<double>(p + 8 * i)
                                        : static_cast<double>(get_raw<float>(p + 4 * i));
    }
    offset += need;
    c.tensors.push_back(Tensor{std::move(name), std::move(m), dtype});
  }
  if (offset != bytes.size())
    throw ParseError(K::dimension_mismatch, offset,
                     "EMB1: " + std::to_string(bytes.size() - offset) +
                         " trailing bytes after payload at byte " + std::to_string(offset));

  manifest.erase("tensors");
  c.meta = std::move(manifest);
  return c;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::io, 0, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_bytes(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file_bytes(path));
}

}  // namespace attrn
