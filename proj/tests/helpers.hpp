#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

// Asserts that `stmt` throws `Type` whose message contains `text`.
#define EXPECT_THROW_MSG(stmt, Type, text)                                              \
  do {                                                                                  \
    try {                                                                               \
      stmt;                                                                             \
      ADD_FAILURE() << "expected " #Type " containing \"" << (text) << "\"";            \
    } catch (const Type& e) {                                                           \
      EXPECT_NE(std::string(e.what()).find(text), std::string::npos) << e.what();       \
    }                                                                                   \
  } while (0)

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("svcca_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};
