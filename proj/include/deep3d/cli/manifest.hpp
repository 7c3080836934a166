#pragma once

// Run manifest: one JSON file per run directory. Header fields are written
// once; every process that touches the run appends a session.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"

#ifndef DEEP3D_VERSION
#define DEEP3D_VERSION "0.1.0"
#endif

namespace deep3d::cli {

namespace fs = std::filesystem;

inline constexpr const char* kManifestFormat = "deep3d-run-manifest-1";
inline constexpr const char* kManifestName = "manifest.json";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class RunManifest {
public:
  /// Opens the manifest in `run_dir`, creating it from the header when absent. An
  /// existing manifest must carry the same config snapshot and seed.
  static RunManifest open_or_create(const fs::path& run_dir, const Json& config, uint64_t seed, const Json& dataset) {
    RunManifest m;
    m.path_ = run_dir / kManifestName;
    if (fs::exists(m.path_)) {
      std::ifstream in(m.path_);
      try {
        m.doc_ = Json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest '" + m.path_.string() + "' is corrupt: " + e.what());
      }
      if (m.doc_.value("format", "") != kManifestFormat) {
        throw FormatError("'" + m.path_.string() + "' is not a run manifest");
      }
      if (m.doc_["config"] != config) {
        throw ConfigError("run directory '" + run_dir.string() + "' was created with a different config", "config");
      }
      if (m.doc_["seed"].get<uint64_t>() != seed) {
        throw ConfigError("run directory '" + run_dir.string() + "' was created with seed " +
                              std::to_string(m.doc_["seed"].get<uint64_t>()),
                          "seed");
      }
      if (m.doc_["dataset"]["hash"] != dataset["hash"]) {
        throw DatasetError("dataset changed since the run directory was created");
      }
    } else {
      fs::create_directories(run_dir);
      m.doc_ = {{"format", kManifestFormat},
                {"code_version", DEEP3D_VERSION},
                {"config", config},
                {"seed", seed},
                {"dataset", dataset},
                {"created", utc_timestamp()},
                {"sessions", Json::array()}};
    }
    return m;
  }

  static RunManifest load(const fs::path& run_dir) {
    RunManifest m;
    m.path_ = run_dir / kManifestName;
    std::ifstream in(m.path_);
    if (!in) throw FormatError("no manifest in '" + run_dir.string() + "'");
    m.doc_ = Json::parse(in);
    return m;
  }

  /// Appends a session in the "running" state and persists it.
  void begin_session(const std::string& command, bool resumed) {
    doc_["sessions"].push_back({{"command", command},
                                {"code_version", DEEP3D_VERSION},
                                {"resumed", resumed},
                                {"started", utc_timestamp()},
                                {"finished", nullptr},
                                {"status", "running"},
                                {"artifacts", Json::array()},
                                {"summary", Json::object()}});
    save();
  }

  /// Closes the newest session. Earlier sessions are never rewritten.
  void end_session(const std::string& status, const std::vector<fs::path>& artifacts, const Json& summary) {
    if (doc_["sessions"].empty()) throw Error("manifest has no open session");
    Json& s = doc_["sessions"].back();
    s["finished"] = utc_timestamp();
    s["status"] = status;
    Json list = Json::array();
    for (const auto& a : artifacts) list.push_back(a.generic_string());
    s["artifacts"] = list;
    s["summary"] = summary;
    save();
  }

  const Json& json() const noexcept { return doc_; }
  const fs::path& path() const noexcept { return path_; }

  /// Artifact paths (relative to the run directory) named by any session that do not exist.
  std::vector<std::string> missing_artifacts() const {
    std::vector<std::string> out;
    for (const auto& s : doc_["sessions"]) {
      for (const auto& a : s["artifacts"]) {
        if (!fs::exists(path_.parent_path() / a.get<std::string>())) out.push_back(a.get<std::string>());
      }
    }
    return out;
  }

private:
  void save() const {
    const fs::path tmp = path_.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << doc_.dump(2) << "\n";
      if (!out) throw Error("cannot write manifest '" + path_.string() + "'");
    }
    fs::rename(tmp, path_);
  }

  fs::path path_;
  Json doc_;
};

}  // namespace deep3d::cli
