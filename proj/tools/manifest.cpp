#include "manifest.hpp"

#include "finta/io.hpp"

namespace finta::cli {

using json = nlohmann::json;

std::string file_hash(const std::filesystem::path& path) {
  return io::hex64(io::fnv1a64(io::read_file(path)));
}

RunManifest::RunManifest(std::string subcommand, std::vector<std::string> argv)
    : subcommand_(std::move(subcommand)), argv_(std::move(argv)) {
  // The running executable, so a result can be tied to the build that made it.
  std::error_code ec;
  const auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (!ec) tool_ = {{"path", self.string()}, {"fnv1a64", file_hash(self)}};
}

void RunManifest::set_parameter(const std::string& name, json value) {
  parameters_[name] = std::move(value);
}

void RunManifest::set_seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs_.push_back({{"path", path.string()}, {"fnv1a64", file_hash(path)}});
}

void RunManifest::add_output(const std::filesystem::path& path) {
  outputs_.push_back({{"path", path.string()}, {"fnv1a64", file_hash(path)}});
}

void RunManifest::set_timing(const std::string& name, double seconds) { timings_[name] = seconds; }

void RunManifest::set_note(const std::string& name, json value) { notes_[name] = std::move(value); }

json RunManifest::to_json() const {
  json doc;
  doc["format"] = kManifestFormat;
  doc["version"] = kManifestVersion;
  doc["subcommand"] = subcommand_;
  doc["argv"] = argv_;
  doc["tool"] = tool_;
  doc["parameters"] = parameters_;
  doc["seeds"] = seeds_;
  doc["inputs"] = inputs_;
  doc["outputs"] = outputs_;
  if (!notes_.empty()) doc["notes"] = notes_;
  json timings = timings_;
  timings["total_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  doc["timings"] = std::move(timings);
  return doc;
}

void RunManifest::write(const std::filesystem::path& path) {
  io::write_file(path, to_json().dump(2) + "\n");
}

}  // namespace finta::cli
