#include "finta/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "finta/error.hpp"
#include "finta/io.hpp"

namespace finta {

LinearFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::kShapeMismatch, "fit inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::kInvalidConfig, "a line fit needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::kInvalidConfig, "a line fit needs distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double pred = fit.slope * xs[i] + fit.intercept;
    const double r = ys[i] - pred;
    ss_res += r * r;
    if (ys[i] != 0.0) {
      fit.max_relative_residual = std::max(fit.max_relative_residual, std::abs(r / ys[i]));
    }
  }
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

BenchResult run_scaling(const AutoencoderModel& model, const ReferenceSet& ref,
                        std::span<const Streamline> pool, const ScalingConfig& config) {
  const auto& sizes = config.sizes;
  if (sizes.size() < 2) throw Error(ErrorCode::kInvalidConfig, "scaling needs at least two sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) {
      throw Error(ErrorCode::kInvalidConfig, "scaling sizes must be strictly increasing");
    }
  }
  if (sizes.front() == 0) throw Error(ErrorCode::kInvalidConfig, "scaling sizes must be positive");
  if (config.repetitions < 3) {
    throw Error(ErrorCode::kInvalidConfig, "scaling needs at least three repetitions");
  }
  if (pool.empty()) throw Error(ErrorCode::kInvalidConfig, "empty streamline pool");

  using clock = std::chrono::steady_clock;
  auto tile = [&](std::size_t n) {
    std::vector<Streamline> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[i % pool.size()]);
    return out;
  };
  auto run_once = [&](const std::vector<Streamline>& batch) {
    const auto t0 = clock::now();
    const auto latents = encode_batch(model, batch, 256, config.threads);
    const auto decisions = filter_latents(ref, latents, config.threshold, config.threads);
    const auto t1 = clock::now();
    if (decisions.size() != batch.size()) throw Error(ErrorCode::kShapeMismatch, "lost decisions");
    return std::chrono::duration<double>(t1 - t0).count();
  };

  BenchResult result;
  result.repetitions = config.repetitions;
  result.threads = config.threads;
  result.warmup = config.warmup;
  result.reference_size = ref.size();
  if (config.warmup) run_once(tile(std::min<std::size_t>(sizes.front(), 1000)));

  for (std::size_t n : sizes) {
    const auto batch = tile(n);
    ScalingPoint p;
    p.count = n;
    for (int r = 0; r < config.repetitions; ++r) p.seconds.push_back(run_once(batch));
    double sum = 0.0;
    for (double s : p.seconds) sum += s;
    p.mean_s = sum / static_cast<double>(p.seconds.size());
    double var = 0.0;
    for (double s : p.seconds) var += (s - p.mean_s) * (s - p.mean_s);
    p.std_s = std::sqrt(var / static_cast<double>(p.seconds.size() - 1));
    if (p.mean_s > 0.0 && p.std_s / p.mean_s > 0.15) {
      result.warnings.push_back("noisy timing at " + std::to_string(n) +
                                " streamlines: std/mean = " + io::format_double(p.std_s / p.mean_s));
    }
    result.points.push_back(std::move(p));
  }

  std::vector<double> xs, ys;
  for (const auto& p : result.points) {
    xs.push_back(static_cast<double>(p.count));
    ys.push_back(p.mean_s);
  }
  result.fit = fit_line(xs, ys);
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    for (std::size_t j = i + 1; j < result.points.size(); ++j) {
      if (result.points[j].count == 2 * result.points[i].count) {
        result.doubling_ratios.push_back(result.points[j].mean_s / result.points[i].mean_s);
      }
    }
  }
  return result;
}

std::string encode_bench_csv(const BenchResult& result) {
  std::string out = "count,mean_s,std_s\n";
  for (const auto& p : result.points) {
    out += std::to_string(p.count) + "," + io::format_double(p.mean_s) + "," +
           io::format_double(p.std_s) + "\n";
  }
  return out;
}

std::string render_bench_svg(const BenchResult& result) {
  constexpr double kW = 480, kH = 320, kPad = 48;
  double max_x = 1.0, max_y = 1e-9;
  for (const auto& p : result.points) {
    max_x = std::max(max_x, static_cast<double>(p.count));
    max_y = std::max(max_y, p.mean_s + p.std_s);
  }
  auto sx = [&](double x) { return kPad + (kW - 2 * kPad) * x / max_x; };
  auto sy = [&](double y) { return kH - kPad - (kH - 2 * kPad) * y / max_y; };
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n", kW, kH);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                kPad, kH - kPad, kW - kPad, kH - kPad, kPad, kH - kPad, kPad, kPad);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"gray\" "
                "stroke-dasharray=\"4 3\"/>\n",
                sx(0), sy(result.fit.intercept), sx(max_x),
                sy(result.fit.intercept + result.fit.slope * max_x));
  out += buf;
  for (const auto& p : result.points) {
    const double x = sx(static_cast<double>(p.count));
    std::snprintf(buf, sizeof buf,
                  "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\"/>\n"
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n",
                  x, sy(p.mean_s), x, sy(p.mean_s - p.std_s), x, sy(p.mean_s + p.std_s));
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"12\">streamlines (max %g)</text>\n"
                "<text x=\"4\" y=\"%g\" font-size=\"12\">s (max %.3g), R2 = %.4f</text>\n",
                kW / 2 - 60, kH - 12, max_x, kPad - 16, max_y, result.fit.r_squared);
  out += buf;
  out += "</svg>\n";
  return out;
}

}  // namespace finta
