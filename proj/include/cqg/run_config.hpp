#pragma once

// Flat key=value run configuration, serialized next to every artifact a
// subcommand produces so runs can be reproduced exactly.

#include <string>
#include <utility>
#include <vector>

namespace cqg {
namespace runcfg {

constexpr int kSchemaVersion = 1;

class RunConfig {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, long value);
  void set(const std::string& key, double value);

  // Writes `<dir>/run_config.txt` (directory target) including the schema
  // version tag.
  void write_to_dir(const std::string& dir) const;
  // Sidecar `<file>.run_config.txt` for single-file outputs.
  void write_beside(const std::string& file_path) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  void write(const std::string& path) const;
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace runcfg
}  // namespace cqg
