#include "finta/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "finta/error.hpp"

namespace finta {

double Point3::norm() const { return std::sqrt(dot(*this)); }

bool Point3::finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double distance(const Point3& a, const Point3& b) { return (a - b).norm(); }

void validate(const Streamline& s) {
  if (s.size() < 2) {
    throw Error(ErrorCode::kInvalidStreamline,
                "streamline has " + std::to_string(s.size()) + " point(s), need at least 2");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i].finite()) {
      throw Error(ErrorCode::kInvalidStreamline,
                  "non-finite coordinate at point " + std::to_string(i));
    }
  }
  if (!(length_mm(s) > 0.0)) {
    throw Error(ErrorCode::kInvalidStreamline, "streamline has zero length");
  }
}

void Tractogram::check_consistent() const {
  if (labels && labels->size() != streamlines.size()) {
    throw Error(ErrorCode::kShapeMismatch, "label count " + std::to_string(labels->size()) +
                                               " != streamline count " +
                                               std::to_string(streamlines.size()));
  }
  if (group_ids && group_ids->size() != streamlines.size()) {
    throw Error(ErrorCode::kShapeMismatch, "group count " + std::to_string(group_ids->size()) +
                                               " != streamline count " +
                                               std::to_string(streamlines.size()));
  }
}

Tractogram Tractogram::subset(std::span<const std::size_t> indices) const {
  Tractogram out;
  out.streamlines.reserve(indices.size());
  if (labels) out.labels.emplace().reserve(indices.size());
  if (group_ids) out.group_ids.emplace().reserve(indices.size());
  for (std::size_t i : indices) {
    out.streamlines.push_back(streamlines.at(i));
    if (labels) out.labels->push_back(labels->at(i));
    if (group_ids) out.group_ids->push_back(group_ids->at(i));
  }
  return out;
}

Streamline resample(const Streamline& s, std::size_t n) {
  validate(s);
  if (n < 2) {
    throw Error(ErrorCode::kInvalidConfig, "resample target must be >= 2 points");
  }
  std::vector<double> cumulative(s.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) {
    cumulative[i] = cumulative[i - 1] + distance(s[i - 1], s[i]);
  }
  const double total = cumulative.back();

  Streamline out(n);
  out.front() = s.front();
  out.back() = s.back();
  std::size_t seg = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double target = total * static_cast<double>(i) / static_cast<double>(n - 1);
    while (seg + 2 < s.size() && cumulative[seg + 1] < target) ++seg;
    const double seg_len = cumulative[seg + 1] - cumulative[seg];
    double t = seg_len > 0.0 ? (target - cumulative[seg]) / seg_len : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    out[i] = s[seg] + (s[seg + 1] - s[seg]) * t;
  }
  return out;
}

Tractogram resample(const Tractogram& t, std::size_t n) {
  t.check_consistent();
  Tractogram out;
  out.labels = t.labels;
  out.group_ids = t.group_ids;
  out.streamlines.reserve(t.size());
  for (const auto& s : t.streamlines) out.streamlines.push_back(resample(s, n));
  return out;
}

Streamline reversed(const Streamline& s) { return Streamline(s.rbegin(), s.rend()); }

Tractogram align_endpoints(const Tractogram& t, const Point3& anchor) {
  t.check_consistent();
  Tractogram out = t;
  for (auto& s : out.streamlines) {
    validate(s);
    if (distance(s.back(), anchor) < distance(s.front(), anchor)) {
      std::reverse(s.begin(), s.end());
    }
  }
  return out;
}

Point3 first_endpoint_centroid(const Tractogram& t) {
  if (t.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "cannot take the endpoint centroid of an empty tractogram");
  }
  Point3 sum;
  for (const auto& s : t.streamlines) {
    validate(s);
    sum += s.front();
  }
  return sum * (1.0 / static_cast<double>(t.size()));
}

double length_mm(const Streamline& s) {
  double total = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i) total += distance(s[i - 1], s[i]);
  return total;
}

namespace {

// Turning angle in degrees at vertex i, or nullopt if either adjacent
// segment has zero length.
std::optional<double> turn_angle_deg(const Streamline& s, std::size_t i) {
  const Point3 a = s[i] - s[i - 1];
  const Point3 b = s[i + 1] - s[i];
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  // atan2 of |a x b| and a.b stays accurate for both tiny and near-180 turns.
  const double angle = std::atan2(cross(a, b).norm(), a.dot(b));
  return angle * 180.0 / std::numbers::pi;
}

}  // namespace

double total_winding_deg(const Streamline& s) {
  double total = 0.0;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (auto angle = turn_angle_deg(s, i)) total += *angle;
  }
  return total;
}

double max_turn_deg(const Streamline& s) {
  double best = 0.0;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (auto angle = turn_angle_deg(s, i)) best = std::max(best, *angle);
  }
  return best;
}

double mdf_distance(const Streamline& a, const Streamline& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kShapeMismatch, "mdf_distance needs equal point counts (" +
                                               std::to_string(a.size()) + " vs " +
                                               std::to_string(b.size()) + ")");
  }
  if (a.empty()) return 0.0;
  const std::size_t n = a.size();
  double direct = 0.0;
  double flipped = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    direct += distance(a[i], b[i]);
    flipped += distance(a[i], b[n - 1 - i]);
  }
  return std::min(direct, flipped) / static_cast<double>(n);
}

}  // namespace finta
