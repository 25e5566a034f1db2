#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "finta/baselines.hpp"
#include "finta/geometry.hpp"

namespace finta {

/// Group tags carried by implausible phantom streamlines.
namespace subclass {
inline constexpr const char* kLoop = "loop";
inline constexpr const char* kSharpBend = "sharp_bend";
inline constexpr const char* kEarlyStop = "early_stop";
inline constexpr const char* kTruncated = "truncated";
inline constexpr const char* kInvalidConnection = "invalid_connection";
}  // namespace subclass

/// Group tag of the plausible streamlines of bundle `b`.
std::string bundle_group(int b);

struct PhantomConfig {
  std::uint64_t seed = 1;
  int n_bundles = 7;
  int streamlines_per_bundle = 1119;
  double implausible_fraction = 0.79;
  /// Amplitude of the smooth Gaussian displacement applied along each streamline.
  double noise_sigma_mm = 0.6;
  /// Independent per-vertex Gaussian jitter (tracking noise).
  double point_jitter_mm = 0.02;
  double field_of_view_mm = 64.0;
  double tube_radius_mm = 2.0;
  double step_mm = 1.0;
  double sharp_bend_deg = 150.0;

  /// Throws InvalidConfig.
  void validate() const;

  std::size_t plausible_count() const;
  std::size_t implausible_count() const;
};

enum class BundleShape { kStraight, kCShape, kUShape, kSCurve };

struct BundleTemplate {
  BundleShape shape;
  int slot_a;  // terminal slots on the rim
  int slot_b;
  double depth_mm;  // bulge (C/U) or amplitude (S); ignored for straight
};

/// Fixed centerline library; the first n_bundles entries are used.
const std::vector<BundleTemplate>& bundle_library();

struct PhantomLayout {
  double rim_radius_mm = 0;      // radius of the circle holding terminal slots
  double terminal_radius_mm = 0; // radius of each terminal region
  Point3 csf_center;
  double csf_radius_mm = 0;
  std::vector<Point3> slots;                     // terminal slot centers
  std::vector<Streamline> centerlines;           // one per bundle, dense
  std::vector<std::pair<int, int>> bundle_slots; // per bundle
};

PhantomLayout make_layout(const PhantomConfig& config);

/// Mask matching the layout: terminal regions are atlas_region(slot + 1),
/// a CSF disc, a gray-matter rim, white matter inside, background outside.
MaskVolume make_mask(const PhantomConfig& config, const PhantomLayout& layout);

struct PhantomOutput {
  Tractogram tractogram;  // labels: plausible/implausible; groups: bundle_k or subclass tag
  MaskVolume mask;
  PhantomLayout layout;
  PhantomConfig config;
  /// Index of the bundle each streamline was derived from (-1 if none).
  std::vector<int> source_bundle;
};

/// Deterministic in `config`: identical configs give bitwise-identical output.
PhantomOutput generate(const PhantomConfig& config);

struct SplitIndices {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
};

/// Stratified random partition by label (a tractogram without labels is one
/// stratum). Throws StratificationImpossible when a class has < 2 members.
SplitIndices split_indices(const Tractogram& t, double first_fraction, std::uint64_t seed);

std::pair<Tractogram, Tractogram> split(const Tractogram& t, double train_fraction,
                                        std::uint64_t seed);

}  // namespace finta
