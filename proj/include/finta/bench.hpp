#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "finta/autoencoder.hpp"
#include "finta/latent_index.hpp"

namespace finta {

inline const std::vector<std::size_t> kDefaultScalingSizes{5000, 10000, 25000, 50000, 100000};
inline const std::vector<std::size_t> kFullScalingSizes{20000, 40000, 100000, 200000, 500000,
                                                        1000000};

struct ScalingConfig {
  std::vector<std::size_t> sizes = kDefaultScalingSizes;
  int repetitions = 3;
  int threads = 1;
  bool warmup = true;
  double threshold = 0.0;
};

struct ScalingPoint {
  std::size_t count = 0;
  std::vector<double> seconds;  // one per repetition
  double mean_s = 0.0;
  double std_s = 0.0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double max_relative_residual = 0.0;
};

struct BenchResult {
  std::vector<ScalingPoint> points;
  int repetitions = 0;
  int threads = 1;
  bool warmup = true;
  std::size_t reference_size = 0;
  LinearFit fit;
  /// mean(2N) / mean(N) for every pair of measured sizes related by doubling.
  std::vector<double> doubling_ratios;
  std::vector<std::string> warnings;
};

/// Least squares y = slope * x + intercept. Throws InvalidConfig with fewer
/// than two points.
LinearFit fit_line(std::span<const double> xs, std::span<const double> ys);

/// Times in-memory filtering (encode + nearest neighbour + threshold) of
/// tractograms of each size, tiled from `pool`. Streamlines in `pool` must
/// already be resampled and aligned; none of this preparation is timed.
/// Throws InvalidConfig when fewer than two sizes are given, sizes are not
/// strictly increasing, repetitions < 3 or the pool is empty.
BenchResult run_scaling(const AutoencoderModel& model, const ReferenceSet& ref,
                        std::span<const Streamline> pool, const ScalingConfig& config);

/// `count,mean_s,std_s` rows.
std::string encode_bench_csv(const BenchResult& result);
std::string render_bench_svg(const BenchResult& result);

}  // namespace finta
