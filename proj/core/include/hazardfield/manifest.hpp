#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hazardfield {

/// FNV-1a 64-bit digest of a file's bytes (integrity checksum, not crypto).
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

/// Every output directory carries exactly one manifest describing the run:
/// command, config, resolved seed, artifact version, input digests (recorded
/// before execution) and the produced outputs.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> resolved_config;
  std::map<std::string, std::string> input_digests;  // path -> fnv1a64 hex
  std::vector<std::string> outputs;
  std::string status = "complete";
};

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);
bool manifest_marks_complete(const std::filesystem::path& out_dir);

}  // namespace hazardfield
