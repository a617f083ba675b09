#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "rng.hpp"
#include "tensor.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("alignlab_test_" + std::to_string(::getpid()) + "_" + tag + "_" + std::to_string(counter++));
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
  std::string str(const std::string& child = "") const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

inline alignlab::Tensor randn(alignlab::Rng& rng, alignlab::Shape shape, double scale = 1.0) {
  alignlab::Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline alignlab::Tensor randu(alignlab::Rng& rng, alignlab::Shape shape) {
  alignlab::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace testutil
