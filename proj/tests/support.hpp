#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <doctest.h>

#include "finta/autoencoder.hpp"
#include "finta/error.hpp"
#include "finta/geometry.hpp"
#include "finta/random.hpp"

namespace finta::test {

inline Streamline random_polyline(Rng& rng, std::size_t n, double step = 3.0) {
  Streamline s;
  Point3 p{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-20, 20)};
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(p);
    p += Point3{rng.uniform(0.2, step), rng.uniform(-step, step), rng.uniform(-step, step)};
  }
  return s;
}

inline Streamline line(Point3 a, Point3 b, std::size_t n) {
  Streamline s;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    s.push_back(a + (b - a) * t);
  }
  return s;
}

inline ModelConfig tiny_config(std::uint64_t seed = 7) {
  ModelConfig c;
  c.input_points = 16;
  c.encoder_features = {4, 8};
  c.latent_dim = 4;
  c.seed = seed;
  return c;
}

inline ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.input_points = 32;
  c.encoder_features = {8, 16, 32};
  c.latent_dim = 8;
  c.seed = seed;
  return c;
}

// Smooth random curves with `points` vertices, spread around the origin.
inline Tractogram smooth_tractogram(Rng& rng, std::size_t count, std::size_t points) {
  Tractogram t;
  for (std::size_t i = 0; i < count; ++i) {
    const Point3 a{rng.uniform(-30, -10), rng.uniform(-10, 10), rng.uniform(-5, 5)};
    const Point3 b{rng.uniform(10, 30), rng.uniform(-10, 10), rng.uniform(-5, 5)};
    const double bulge = rng.uniform(-8, 8);
    Streamline s;
    for (std::size_t k = 0; k < points; ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(points - 1);
      s.push_back(a + (b - a) * u + Point3{0, bulge * std::sin(M_PI * u), 0});
    }
    t.streamlines.push_back(std::move(s));
  }
  return t;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a finta::Error");
  return ErrorCode::kIoError;
}

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() /
            ("finta-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace finta::test
