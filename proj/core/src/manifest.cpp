#include "hazardfield/manifest.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "hazardfield/errors.hpp"
#include "hazardfield/version.hpp"

namespace hazardfield {

namespace fs = std::filesystem;

std::uint64_t fnv1a64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for digest");
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001B3ULL;
    }
  }
  return hash;
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = manifest.command;
  j["config_path"] = manifest.config_path;
  j["seed"] = manifest.seed;
  j["artifact_version"] = kVersion;
  j["resolved_config"] = manifest.resolved_config;
  j["input_digests_fnv1a64"] = manifest.input_digests;
  j["outputs"] = manifest.outputs;
  j["status"] = manifest.status;
  j["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count();
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + out_dir.string() + "'");
  out << j.dump(2) << "\n";
}

bool manifest_marks_complete(const fs::path& out_dir) {
  const fs::path path = out_dir / "manifest.json";
  if (!fs::exists(path)) return false;
  std::ifstream in(path);
  if (!in) return false;
  try {
    nlohmann::json j;
    in >> j;
    return j.value("status", "") == "complete";
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace hazardfield
