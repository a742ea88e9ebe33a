#include "bitref/pipeline/manifest.hpp"

#include <array>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <openssl/evp.h>

#include "bitref/errors.hpp"

namespace bitref {

namespace {

std::string hex(const unsigned char* d, unsigned n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned i = 0; i < n; ++i) {
    out.push_back(kDigits[d[i] >> 4]);
    out.push_back(kDigits[d[i] & 15]);
  }
  return out;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::MissingArtifact, "missing artifact " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(Errc::IoError, "sha256 failed");
  }
  return hex(md.data(), len);
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_all(path)); }

FileDigest digest_file(const std::filesystem::path& path) {
  const std::string body = read_all(path);
  return FileDigest{path.string(), sha256_hex(body), body.size()};
}

std::string to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["command"] = m.command;
  j["args"] = m.args;
  j["config_sha256"] = m.config_hash;
  j["seed"] = m.seed;
  auto files = [](const std::vector<FileDigest>& v) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& f : v) arr.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return arr;
  };
  j["inputs"] = files(m.inputs);
  j["outputs"] = files(m.outputs);
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(std::string_view json) {
  try {
    const auto j = nlohmann::json::parse(json);
    RunManifest m;
    m.version = j.at("version");
    m.command = j.at("command");
    m.args = j.at("args").get<std::vector<std::string>>();
    m.config_hash = j.at("config_sha256");
    m.seed = j.at("seed");
    auto files = [](const nlohmann::json& arr) {
      std::vector<FileDigest> out;
      for (const auto& f : arr) out.push_back({f.at("path"), f.at("sha256"), f.at("bytes")});
      return out;
    };
    m.inputs = files(j.at("inputs"));
    m.outputs = files(j.at("outputs"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ManifestMismatch, std::string("manifest: ") + e.what());
  }
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::IoError, "cannot write " + path.string());
  f << to_json(m);
}

RunManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_all(path)); }

std::filesystem::path manifest_path_for(const std::filesystem::path& primary_output) {
  return std::filesystem::path(primary_output.string() + ".manifest.json");
}

void verify_inputs(const RunManifest& m) {
  for (const auto& in : m.inputs) {
    if (sha256_file(in.path) != in.sha256) {
      fail(Errc::ManifestMismatch, "input changed since the recorded run: " + in.path);
    }
  }
}

std::vector<std::string> changed_outputs(const RunManifest& m) {
  std::vector<std::string> out;
  for (const auto& o : m.outputs) {
    std::error_code ec;
    if (!std::filesystem::exists(o.path, ec) || sha256_file(o.path) != o.sha256) out.push_back(o.path);
  }
  return out;
}

}  // namespace bitref
