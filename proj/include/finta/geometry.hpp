#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace finta {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;

  Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Point3& operator+=(const Point3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }

  double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const;
  bool finite() const;
};

Point3 cross(const Point3& a, const Point3& b);
double distance(const Point3& a, const Point3& b);

/// Ordered polyline in millimetres. Validity (>= 2 finite points) is checked
/// by `validate`, not by construction, so that readers can hand back whatever
/// was on disk and let the caller decide.
using Streamline = std::vector<Point3>;

/// Throws InvalidStreamline when `s` has fewer than two points or a
/// non-finite coordinate, or when it has zero total length.
void validate(const Streamline& s);

/// A collection of streamlines with optional per-streamline class tags and
/// group identifiers. When present, both side vectors have one entry per
/// streamline.
struct Tractogram {
  std::vector<Streamline> streamlines;
  std::optional<std::vector<std::string>> labels;
  std::optional<std::vector<std::string>> group_ids;

  std::size_t size() const { return streamlines.size(); }
  bool empty() const { return streamlines.empty(); }

  /// Throws ShapeMismatch if a side vector has the wrong length.
  void check_consistent() const;

  /// Copy of the entries at `indices`, in that order, side vectors included.
  Tractogram subset(std::span<const std::size_t> indices) const;
};

inline constexpr const char* kPlausible = "plausible";
inline constexpr const char* kImplausible = "implausible";

/// Arc-length uniform resampling of the piecewise-linear curve to `n` points.
/// Endpoints are copied bitwise from the input.
Streamline resample(const Streamline& s, std::size_t n);
Tractogram resample(const Tractogram& t, std::size_t n);

Streamline reversed(const Streamline& s);

/// Reverses streamlines whose last point is strictly nearer to `anchor` than
/// their first point. Labels and groups are carried through unchanged.
Tractogram align_endpoints(const Tractogram& t, const Point3& anchor);

/// Centroid of the first points of every streamline; the default anchor.
Point3 first_endpoint_centroid(const Tractogram& t);

double length_mm(const Streamline& s);

/// Sum of the unsigned turning angles (degrees) at interior vertices.
/// Zero-length segments contribute nothing.
double total_winding_deg(const Streamline& s);

/// Largest single turning angle (degrees) at any interior vertex.
double max_turn_deg(const Streamline& s);

/// Flip-invariant mean of pointwise distances between equal-length
/// streamlines. Throws ShapeMismatch on differing point counts.
double mdf_distance(const Streamline& a, const Streamline& b);

}  // namespace finta
