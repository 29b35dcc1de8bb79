#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

namespace mrtest {

inline std::filesystem::path test_dir() {
  const char* env = std::getenv("MR_TEST_DIR");
  if (env != nullptr) return env;
  return std::filesystem::path(__FILE__).parent_path();
}

inline std::filesystem::path fixture(const std::string& name) {
  return test_dir() / "fixtures" / name;
}

// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    dir_ = base / ("mrtest_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path operator/(const std::string& name) const {
    return dir_ / name;
  }

 private:
  std::filesystem::path dir_;
};

}  // namespace mrtest
