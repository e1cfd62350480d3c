#include "cqg/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cqg {
namespace runcfg {

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void RunConfig::set(const std::string& key, long value) { set(key, std::to_string(value)); }

void RunConfig::set(const std::string& key, double value) {
  std::ostringstream ss;
  ss.precision(17);
  ss << value;
  set(key, ss.str());
}

void RunConfig::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write run config: " + path);
  out << "schema_version=" << kSchemaVersion << "\n";
  for (const auto& [k, v] : entries_) out << k << "=" << v << "\n";
}

void RunConfig::write_to_dir(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  write(dir + "/run_config.txt");
}

void RunConfig::write_beside(const std::string& file_path) const {
  write(file_path + ".run_config.txt");
}

}  // namespace runcfg
}  // namespace cqg
