#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <cstdlib>
#include <string>

#include <unistd.h>

#include "lacer/common.hpp"

namespace lacer::test {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("lacer-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = {}) const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace lacer::test

namespace lacer::test {

/// Compares `actual` with tests/snapshots/<name>. With LACER_UPDATE_SNAPSHOTS
/// set, rewrites the snapshot instead and reports a match.
inline bool matches_snapshot(const std::string& name, const std::string& actual) {
  const std::filesystem::path file = std::filesystem::path(LACER_SNAPSHOT_DIR) / name;
  if (const char* u = std::getenv("LACER_UPDATE_SNAPSHOTS"); u != nullptr && *u != '\0') {
    spit(file, actual);
    return true;
  }
  if (!std::filesystem::exists(file)) return false;
  return slurp(file) == actual;
}

}  // namespace lacer::test
