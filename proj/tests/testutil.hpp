#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "threadsumm/tensor.hpp"

namespace tsu {

inline threadsumm::Tensor random_tensor(threadsumm::Shape shape,
                                        threadsumm::Rng& rng, double lo = -1.0,
                                        double hi = 1.0) {
  return threadsumm::Tensor::uniform(std::move(shape), rng, lo, hi);
}

// values kept away from zero so relu's kink stays clear of the probe
inline threadsumm::Tensor random_tensor_off_zero(threadsumm::Shape shape,
                                                 threadsumm::Rng& rng,
                                                 double margin = 0.1) {
  std::vector<double> d(threadsumm::numel(shape));
  for (auto& x : d) {
    double v = rng.uniform(margin, 1.0);
    x = rng.next_double() < 0.5 ? -v : v;
  }
  return threadsumm::Tensor::from(std::move(shape), std::move(d));
}

inline bool near(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

// unique scratch directory per test run
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    dir_ = std::filesystem::temp_directory_path() /
           ("tsumm_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::string file(const std::string& name) const {
    return (dir_ / name).string();
  }

 private:
  std::filesystem::path dir_;
};

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  os << body;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace tsu
