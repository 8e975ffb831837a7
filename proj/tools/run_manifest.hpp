// Provenance record embedded in every artifact the tool writes.
#ifndef ATTRN_TOOLS_RUN_MANIFEST_HPP
#define ATTRN_TOOLS_RUN_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace attrn::cli {

inline constexpr const char* kToolVersion = "1.0.0";

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string file_sha256(const std::filesystem::path& path);

struct RunManifest {
  std::string subcommand;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::uint64_t seed = 0;

  void add_input(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

}  // namespace attrn::cli

#endif  // ATTRN_TOOLS_RUN_MANIFEST_HPP
