#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace npath::cli {

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_hash(const std::vector<std::uint8_t>& content);
std::string git_blob_hash(const std::filesystem::path& path);

/// What a command was asked to do and what it touched. Written as manifest.json in the output
/// directory, next to every artifact it lists. Contains no timestamps, so identical runs give
/// identical manifests.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // every option, resolved
  unsigned long long seed = 0;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // file name in out_dir -> content hash
  std::filesystem::path out_dir;

  void add_input(const std::filesystem::path& path);
  /// Hashes a file the command has just written to out_dir.
  void add_output(const std::string& name);
  std::filesystem::path output(const std::string& name) const { return out_dir / name; }
  void write() const;
};

}  // namespace npath::cli
