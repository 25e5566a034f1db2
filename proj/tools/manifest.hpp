#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace finta::cli {

/// Record of one invocation: what ran, with which resolved values, on which
/// inputs, producing which outputs. Everything except `timings` is a pure
/// function of the inputs and parameters.
class RunManifest {
 public:
  RunManifest(std::string subcommand, std::vector<std::string> argv);

  void set_parameter(const std::string& name, nlohmann::json value);
  void set_seed(const std::string& name, std::uint64_t value);
  void add_input(const std::filesystem::path& path);
  /// Hashes the file as it is on disk now.
  void add_output(const std::filesystem::path& path);
  void set_timing(const std::string& name, double seconds);
  void set_note(const std::string& name, nlohmann::json value);

  const std::string& subcommand() const { return subcommand_; }
  const std::vector<std::string>& argv() const { return argv_; }

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path);

 private:
  std::string subcommand_;
  std::vector<std::string> argv_;
  nlohmann::json tool_ = nullptr;
  nlohmann::json parameters_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json timings_ = nlohmann::json::object();
  nlohmann::json notes_ = nlohmann::json::object();
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline constexpr const char* kManifestFormat = "finta-manifest";
inline constexpr int kManifestVersion = 1;

/// FNV-1a hash (hex) of a file's bytes.
std::string file_hash(const std::filesystem::path& path);

}  // namespace finta::cli
