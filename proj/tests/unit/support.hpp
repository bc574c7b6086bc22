#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "mstate/date.hpp"

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("mstate_test_" + name + "_" + std::to_string(std::random_device{}()));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline mstate::Date day(int y, unsigned m, unsigned d) {
  return mstate::Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
}

/// Consecutive calendar days from 2001-01-01.
inline std::vector<mstate::Date> days(std::size_t n) {
  std::vector<mstate::Date> out;
  std::chrono::sys_days d{day(2001, 1, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(d);
    d += std::chrono::days{1};
  }
  return out;
}

}  // namespace test
