#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include "common.hpp"

namespace tftest {

// unique scratch directory, removed on scope exit
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    uint64_t n = counter.fetch_add(1);
    path = std::filesystem::temp_directory_path() /
           ("trajforge_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(n));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace tftest
