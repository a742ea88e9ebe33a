#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bitref {

inline constexpr std::string_view kVersion = "0.1.0";

std::string sha256_hex(std::string_view data);
/// Throws MissingArtifact when the file does not exist.
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
  std::string path;
  std::string sha256;
  std::uint64_t bytes = 0;

  friend bool operator==(const FileDigest&, const FileDigest&) = default;
};

FileDigest digest_file(const std::filesystem::path& path);

/// Everything needed to rerun one subcommand. No timestamps, so a rerun
/// rewrites the manifest byte for byte.
struct RunManifest {
  std::string version{kVersion};
  std::string command;
  std::vector<std::string> args;  // arguments after the program name
  std::string config_hash;        // sha256 of the canonical config text
  std::uint64_t seed = 0;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

std::string to_json(const RunManifest& m);
RunManifest parse_manifest(std::string_view json);
void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

/// "<output>.manifest.json".
std::filesystem::path manifest_path_for(const std::filesystem::path& primary_output);

/// Throws ManifestMismatch if an input changed, MissingArtifact if one is gone.
void verify_inputs(const RunManifest& m);
/// Paths of outputs whose current digest differs from the recorded one.
std::vector<std::string> changed_outputs(const RunManifest& m);

}  // namespace bitref
