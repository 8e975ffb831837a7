#include "run_manifest.hpp"

#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "attrn/container.hpp"

namespace attrn::cli {

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.string(), file_sha256(path));
}

nlohmann::json RunManifest::to_json() const {
  auto in = nlohmann::json::array();
  for (const auto& [path, digest] : inputs) in.push_back({{"path", path}, {"sha256", digest}});
  return {{"tool", "attrn"},
          {"version", kToolVersion},
          {"subcommand", subcommand},
          {"config", config},
          {"inputs", in},
          {"seed", seed}};
}

}  // namespace attrn::cli
