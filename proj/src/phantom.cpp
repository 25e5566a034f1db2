#include "finta/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "finta/error.hpp"
#include "finta/random.hpp"

namespace finta {

namespace {

constexpr int kSlotCount = 14;
constexpr int kDenseSamples = 600;

// Reference geometry is laid out for a 64 mm field of view and scaled.
constexpr double kReferenceFov = 64.0;

double fov_scale(const PhantomConfig& c) { return c.field_of_view_mm / kReferenceFov; }

Point3 unit(const Point3& p) {
  const double n = p.norm();
  return n > 0.0 ? p * (1.0 / n) : Point3{1.0, 0.0, 0.0};
}

// Any unit vector perpendicular to d (d unit).
Point3 random_perpendicular(const Point3& d, Rng& rng) {
  for (;;) {
    Point3 r{rng.normal(), rng.normal(), rng.normal()};
    Point3 p = r - d * r.dot(d);
    if (p.norm() > 1e-6) return unit(p);
  }
}

Streamline quadratic_bezier(const Point3& p0, const Point3& c, const Point3& p1, int samples) {
  Streamline out(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / (samples - 1);
    const double u = 1.0 - t;
    out[static_cast<std::size_t>(i)] = p0 * (u * u) + c * (2.0 * u * t) + p1 * (t * t);
  }
  return out;
}

// Arc-length fraction of each vertex.
std::vector<double> arc_fractions(const Streamline& s) {
  std::vector<double> f(s.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) f[i] = f[i - 1] + distance(s[i - 1], s[i]);
  const double total = f.back();
  if (total > 0.0) {
    for (auto& v : f) v /= total;
  }
  return f;
}

// Low-frequency displacement: Gaussian offsets at evenly spaced knots,
// Catmull-Rom interpolated along arc length.
void smooth_displace(Streamline& dense, double sigma, double knot_spacing_mm, Rng& rng) {
  if (sigma <= 0.0) return;
  const double len = length_mm(dense);
  const int knots = std::max(4, static_cast<int>(std::ceil(len / knot_spacing_mm)) + 1);
  std::vector<Point3> k(static_cast<std::size_t>(knots));
  for (auto& p : k) p = {rng.normal(0.0, sigma), rng.normal(0.0, sigma), rng.normal(0.0, sigma)};
  const auto frac = arc_fractions(dense);
  auto knot = [&](int i) { return k[static_cast<std::size_t>(std::clamp(i, 0, knots - 1))]; };
  for (std::size_t i = 0; i < dense.size(); ++i) {
    const double x = frac[i] * (knots - 1);
    const int seg = std::min(static_cast<int>(std::floor(x)), knots - 2);
    const double t = x - seg;
    const Point3 p0 = knot(seg - 1), p1 = knot(seg), p2 = knot(seg + 1), p3 = knot(seg + 2);
    const double t2 = t * t, t3 = t2 * t;
    const Point3 d = (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 +
                      (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) *
                     0.5;
    dense[i] += d;
  }
}

// Tracking-like output: arc-length spacing of step_mm, then per-vertex jitter.
Streamline finalize(const Streamline& dense, const PhantomConfig& c, Rng& rng) {
  const double len = length_mm(dense);
  const auto n = static_cast<std::size_t>(std::max(3L, std::lround(len / c.step_mm) + 1));
  Streamline s = resample(dense, n);
  if (c.point_jitter_mm > 0.0) {
    for (auto& p : s) {
      p += Point3{rng.normal(0.0, c.point_jitter_mm), rng.normal(0.0, c.point_jitter_mm),
                  rng.normal(0.0, c.point_jitter_mm)};
    }
  }
  return s;
}

// Dense sub-path of a bundle centerline between arc fractions [from, to],
// shifted inside the tube and smoothly displaced. `reverse` walks from the
// second terminal.
Streamline tube_path(const Streamline& centerline, double from, double to, bool reverse,
                     const PhantomConfig& c, Rng& rng) {
  Streamline base = reverse ? reversed(centerline) : centerline;
  const auto frac = arc_fractions(base);
  Streamline sub;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (frac[i] >= from - 1e-12 && frac[i] <= to + 1e-12) sub.push_back(base[i]);
  }
  if (sub.size() < 2) {
    throw Error(ErrorCode::kInvalidConfig, "phantom sub-path too short");
  }
  // Uniform point in the tube cross-section (disc), in the frame spanned by
  // the in-plane normal and the slab axis.
  const double radius = c.tube_radius_mm * std::sqrt(rng.uniform());
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double u = radius * std::cos(angle);
  const double v = radius * std::sin(angle);
  Streamline out(sub.size());
  for (std::size_t i = 0; i < sub.size(); ++i) {
    const Point3 a = sub[i == 0 ? 0 : i - 1];
    const Point3 b = sub[i + 1 < sub.size() ? i + 1 : i];
    const Point3 t = unit(b - a);
    const Point3 n = unit(Point3{-t.y, t.x, 0.0});
    out[i] = sub[i] + n * u + Point3{0.0, 0.0, v};
  }
  smooth_displace(out, c.noise_sigma_mm, 10.0 * fov_scale(c), rng);
  return out;
}

Point3 slot_jitter(const Point3& slot, double radius, Rng& rng) {
  const double r = radius * std::sqrt(rng.uniform());
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return slot + Point3{r * std::cos(a), r * std::sin(a), rng.uniform(-0.5 * radius, 0.5 * radius)};
}

struct Generated {
  Streamline streamline;
  std::string label;
  std::string group;
  int bundle;
};

class Builder {
 public:
  Builder(const PhantomConfig& c, const PhantomLayout& layout, Rng& rng)
      : c_(c), layout_(layout), rng_(rng) {}

  Streamline plausible(int b) {
    return finalize(tube_path(centerline(b), 0.0, 1.0, false, c_, rng_), c_, rng_);
  }

  Streamline loop(int b) {
    for (;;) {
      Streamline s = finalize(tube_path(centerline(b), 0.0, 1.0, false, c_, rng_), c_, rng_);
      const auto n = s.size();
      const auto i0 = static_cast<std::size_t>(rng_.uniform(0.25, 0.75) * static_cast<double>(n));
      const Point3 d = unit(s[i0 + 1] - s[i0 - 1]);
      const Point3 w = random_perpendicular(d, rng_);
      const double r = rng_.uniform(2.5, 5.0) * fov_scale(c_);
      const int turns = rng_.uniform() < 0.7 ? 1 : 2;
      const double dtheta = c_.step_mm / r;
      const int m = static_cast<int>(std::ceil(2.0 * std::numbers::pi * turns / dtheta));
      Streamline out(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(i0) + 1);
      for (int j = 1; j < m; ++j) {
        const double theta = 2.0 * std::numbers::pi * turns * j / m;
        out.push_back(s[i0] + d * (r * std::sin(theta)) + w * (r * (1.0 - std::cos(theta))));
      }
      out.insert(out.end(), s.begin() + static_cast<std::ptrdiff_t>(i0) + 1, s.end());
      if (total_winding_deg(out) > 360.0) return out;
    }
  }

  Streamline sharp_bend(int b) {
    for (;;) {
      const double f = rng_.uniform(0.35, 0.7);
      const bool rev = rng_.uniform() < 0.5;
      Streamline s = finalize(tube_path(centerline(b), 0.0, f, rev, c_, rng_), c_, rng_);
      const Point3 p = s.back();
      const Point3 d = unit(s.back() - s[s.size() - 2]);
      const Point3 w = random_perpendicular(d, rng_);
      const double alpha =
          rng_.uniform(c_.sharp_bend_deg + 5.0, 178.0) * std::numbers::pi / 180.0;
      const Point3 d2 = d * std::cos(alpha) + w * std::sin(alpha);
      const double tail = rng_.uniform(8.0, 20.0) * fov_scale(c_);
      const int m = std::max(2, static_cast<int>(std::lround(tail / c_.step_mm)));
      for (int j = 1; j <= m; ++j) s.push_back(p + d2 * (c_.step_mm * j));
      if (max_turn_deg(s) > c_.sharp_bend_deg) return s;
    }
  }

  Streamline early_stop(int b) {
    const double f = rng_.uniform(0.3, 0.6);
    const bool rev = rng_.uniform() < 0.5;
    Streamline path = tube_path(centerline(b), 0.0, f, rev, c_, rng_);
    const Point3 p = path.back();
    const Point3 d = unit(path.back() - path[path.size() - 2]);
    const double rr = 0.5 * layout_.csf_radius_mm * std::sqrt(rng_.uniform());
    const double ra = rng_.uniform(0.0, 2.0 * std::numbers::pi);
    const Point3 q = layout_.csf_center +
                     Point3{rr * std::cos(ra), rr * std::sin(ra), rng_.uniform(-1.0, 1.0)};
    const Point3 ctrl = p + d * (0.5 * distance(p, q));
    Streamline tail = quadratic_bezier(p, ctrl, q, 200);
    path.insert(path.end(), tail.begin() + 1, tail.end());
    return finalize(path, c_, rng_);
  }

  Streamline truncated(int b) {
    const double full = length_mm(centerline(b));
    for (;;) {
      const double f = rng_.uniform(0.2, 0.68);
      const bool rev = rng_.uniform() < 0.5;
      Streamline s = finalize(tube_path(centerline(b), 0.0, f, rev, c_, rng_), c_, rng_);
      if (length_mm(s) < 0.7 * full) return s;
    }
  }

  Streamline invalid_connection(int b) {
    const int n = static_cast<int>(layout_.centerlines.size());
    int other = static_cast<int>(rng_.below(static_cast<std::uint64_t>(n - 1)));
    if (other >= b) ++other;
    const auto [a0, a1] = layout_.bundle_slots[static_cast<std::size_t>(b)];
    const auto [b0, b1] = layout_.bundle_slots[static_cast<std::size_t>(other)];
    const int sa = rng_.uniform() < 0.5 ? a0 : a1;
    const int sb = rng_.uniform() < 0.5 ? b0 : b1;
    const double spread = c_.tube_radius_mm;
    const Point3 p0 = slot_jitter(layout_.slots[static_cast<std::size_t>(sa)], spread, rng_);
    const Point3 p1 = slot_jitter(layout_.slots[static_cast<std::size_t>(sb)], spread, rng_);
    const Point3 mid = (p0 + p1) * 0.5;
    const Point3 ctrl = mid * rng_.uniform(0.0, 0.6) +
                        Point3{rng_.normal(0.0, 4.0), rng_.normal(0.0, 4.0), 0.0} * fov_scale(c_);
    Streamline dense = quadratic_bezier(p0, ctrl, p1, kDenseSamples);
    smooth_displace(dense, c_.noise_sigma_mm, 10.0 * fov_scale(c_), rng_);
    return finalize(dense, c_, rng_);
  }

 private:
  const Streamline& centerline(int b) const {
    return layout_.centerlines[static_cast<std::size_t>(b)];
  }

  const PhantomConfig& c_;
  const PhantomLayout& layout_;
  Rng& rng_;
};

}  // namespace

std::string bundle_group(int b) { return "bundle_" + std::to_string(b); }

void PhantomConfig::validate() const {
  if (!(implausible_fraction > 0.0 && implausible_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "implausible_fraction must lie strictly in (0, 1)");
  }
  if (n_bundles < 2 || n_bundles > static_cast<int>(bundle_library().size())) {
    throw Error(ErrorCode::kInvalidConfig,
                "n_bundles must be in [2, " + std::to_string(bundle_library().size()) + "]");
  }
  if (streamlines_per_bundle < 1) {
    throw Error(ErrorCode::kInvalidConfig, "streamlines_per_bundle must be positive");
  }
  if (!(noise_sigma_mm >= 0.0) || !(point_jitter_mm >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "noise amplitudes must be >= 0");
  }
  if (!(field_of_view_mm > 0.0) || !(tube_radius_mm >= 0.0) || !(step_mm > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "field of view and step must be positive");
  }
  if (!(sharp_bend_deg > 0.0 && sharp_bend_deg < 170.0)) {
    throw Error(ErrorCode::kInvalidConfig, "sharp_bend_deg must be in (0, 170)");
  }
}

std::size_t PhantomConfig::plausible_count() const {
  return static_cast<std::size_t>(n_bundles) * static_cast<std::size_t>(streamlines_per_bundle);
}

std::size_t PhantomConfig::implausible_count() const {
  const double p = static_cast<double>(plausible_count());
  return static_cast<std::size_t>(
      std::llround(implausible_fraction * p / (1.0 - implausible_fraction)));
}

const std::vector<BundleTemplate>& bundle_library() {
  // Depths are in reference (64 mm field of view) millimetres.
  static const std::vector<BundleTemplate> kLibrary = {
      {BundleShape::kStraight, 0, 7, 0.0},  {BundleShape::kStraight, 3, 10, 0.0},
      {BundleShape::kUShape, 1, 2, 18.0},   {BundleShape::kCShape, 4, 6, 9.0},
      {BundleShape::kSCurve, 5, 12, 6.5},   {BundleShape::kUShape, 8, 9, 14.0},
      {BundleShape::kCShape, 11, 13, 10.0},
  };
  return kLibrary;
}

PhantomLayout make_layout(const PhantomConfig& config) {
  config.validate();
  const double s = fov_scale(config);
  PhantomLayout layout;
  layout.rim_radius_mm = 26.0 * s;
  layout.terminal_radius_mm = 5.0 * s;
  layout.csf_center = Point3{6.5, -7.8, 0.0} * s;
  layout.csf_radius_mm = 4.0 * s;
  for (int k = 0; k < kSlotCount; ++k) {
    const double a = 2.0 * std::numbers::pi * k / kSlotCount;
    layout.slots.push_back({layout.rim_radius_mm * std::cos(a), layout.rim_radius_mm * std::sin(a), 0.0});
  }
  for (int b = 0; b < config.n_bundles; ++b) {
    const auto& tpl = bundle_library()[static_cast<std::size_t>(b)];
    const Point3 a = layout.slots[static_cast<std::size_t>(tpl.slot_a)];
    const Point3 z = layout.slots[static_cast<std::size_t>(tpl.slot_b)];
    const Point3 chord = z - a;
    Point3 normal = unit(Point3{-chord.y, chord.x, 0.0});
    const Point3 mid = (a + z) * 0.5;
    if (mid.norm() > 1e-9 && normal.dot(mid) > 0.0) normal = normal * -1.0;  // bulge inward
    const double depth = tpl.depth_mm * s;
    Streamline dense(kDenseSamples);
    for (int i = 0; i < kDenseSamples; ++i) {
      const double t = static_cast<double>(i) / (kDenseSamples - 1);
      double offset = 0.0;
      switch (tpl.shape) {
        case BundleShape::kStraight: break;
        case BundleShape::kCShape: offset = depth * std::sin(std::numbers::pi * t); break;
        case BundleShape::kUShape: offset = depth * std::sqrt(std::sin(std::numbers::pi * t)); break;
        case BundleShape::kSCurve: offset = depth * std::sin(2.0 * std::numbers::pi * t); break;
      }
      dense[static_cast<std::size_t>(i)] = a + chord * t + normal * offset;
    }
    // The U profile has unbounded slope at its ends; even out the spacing.
    layout.centerlines.push_back(resample(dense, kDenseSamples));
    layout.bundle_slots.emplace_back(tpl.slot_a, tpl.slot_b);
  }
  return layout;
}

MaskVolume make_mask(const PhantomConfig& config, const PhantomLayout& layout) {
  const double half = 0.5 * config.field_of_view_mm;
  const auto nxy = static_cast<std::size_t>(std::ceil(config.field_of_view_mm));
  const std::size_t nz = 16;
  MaskVolume mask({nxy, nxy, nz}, {1.0, 1.0, 1.0}, Point3{-half, -half, -0.5 * nz});

  std::map<int, int> used_slots;  // slot -> atlas id
  for (const auto& [sa, sb] : layout.bundle_slots) {
    used_slots[sa] = sa + 1;
    used_slots[sb] = sb + 1;
  }
  for (std::size_t k = 0; k < nz; ++k) {
    for (std::size_t j = 0; j < nxy; ++j) {
      for (std::size_t i = 0; i < nxy; ++i) {
        const Point3 c = mask.voxel_center(i, j, k);
        const double r = std::hypot(c.x, c.y);
        std::uint8_t tag = tissue::kBackground;
        if (r <= half) {
          tag = r > layout.rim_radius_mm + layout.terminal_radius_mm ? tissue::kGrayMatter
                                                                     : tissue::kWhiteMatter;
        }
        for (const auto& [slot, id] : used_slots) {
          const Point3 sc = layout.slots[static_cast<std::size_t>(slot)];
          if (std::hypot(c.x - sc.x, c.y - sc.y) <= layout.terminal_radius_mm) {
            tag = tissue::atlas_region(id);
          }
        }
        if (std::hypot(c.x - layout.csf_center.x, c.y - layout.csf_center.y) <=
            layout.csf_radius_mm) {
          tag = tissue::kCsf;
        }
        mask.data[mask.linear_index(i, j, k)] = tag;
      }
    }
  }
  return mask;
}

PhantomOutput generate(const PhantomConfig& config) {
  config.validate();
  PhantomOutput out;
  out.config = config;
  out.layout = make_layout(config);
  out.mask = make_mask(config, out.layout);

  Rng rng(config.seed);
  Builder build(config, out.layout, rng);

  std::vector<Generated> items;
  items.reserve(config.plausible_count() + config.implausible_count());
  for (int b = 0; b < config.n_bundles; ++b) {
    for (int i = 0; i < config.streamlines_per_bundle; ++i) {
      items.push_back({build.plausible(b), kPlausible, bundle_group(b), b});
    }
  }
  const std::size_t n_impl = config.implausible_count();
  for (std::size_t i = 0; i < n_impl; ++i) {
    const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.n_bundles)));
    const std::size_t kind = i % 20;
    Generated g{{}, kImplausible, {}, b};
    if (kind < 3) {
      g.streamline = build.loop(b);
      g.group = subclass::kLoop;
    } else if (kind < 5) {
      g.streamline = build.sharp_bend(b);
      g.group = subclass::kSharpBend;
    } else if (kind < 10) {
      g.streamline = build.early_stop(b);
      g.group = subclass::kEarlyStop;
    } else if (kind < 15) {
      g.streamline = build.truncated(b);
      g.group = subclass::kTruncated;
    } else {
      g.streamline = build.invalid_connection(b);
      g.group = subclass::kInvalidConnection;
      g.bundle = -1;
    }
    items.push_back(std::move(g));
  }

  // Tracking output has no preferred orientation or order.
  for (auto& g : items) {
    if (rng.uniform() < 0.5) std::reverse(g.streamline.begin(), g.streamline.end());
  }
  rng.shuffle(std::span<Generated>(items));

  out.tractogram.labels.emplace();
  out.tractogram.group_ids.emplace();
  out.tractogram.streamlines.reserve(items.size());
  for (auto& g : items) {
    out.tractogram.streamlines.push_back(std::move(g.streamline));
    out.tractogram.labels->push_back(std::move(g.label));
    out.tractogram.group_ids->push_back(std::move(g.group));
    out.source_bundle.push_back(g.bundle);
  }
  return out;
}

SplitIndices split_indices(const Tractogram& t, double first_fraction, std::uint64_t seed) {
  if (!(first_fraction > 0.0 && first_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "split fraction must lie strictly in (0, 1)");
  }
  t.check_consistent();
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < t.size(); ++i) {
    strata[t.labels ? (*t.labels)[i] : std::string()].push_back(i);
  }
  Rng rng(seed);
  SplitIndices out;
  for (auto& [label, members] : strata) {
    if (members.size() < 2) {
      throw Error(ErrorCode::kStratificationImpossible,
                  "class '" + label + "' has " + std::to_string(members.size()) +
                      " member(s); need at least 2 to stratify");
    }
    rng.shuffle(std::span<std::size_t>(members));
    auto n_first = static_cast<std::size_t>(
        std::llround(first_fraction * static_cast<double>(members.size())));
    n_first = std::clamp<std::size_t>(n_first, 1, members.size() - 1);
    out.first.insert(out.first.end(), members.begin(),
                     members.begin() + static_cast<std::ptrdiff_t>(n_first));
    out.second.insert(out.second.end(), members.begin() + static_cast<std::ptrdiff_t>(n_first),
                      members.end());
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  return out;
}

std::pair<Tractogram, Tractogram> split(const Tractogram& t, double train_fraction,
                                        std::uint64_t seed) {
  const SplitIndices idx = split_indices(t, train_fraction, seed);
  return {t.subset(idx.first), t.subset(idx.second)};
}

}  // namespace finta
