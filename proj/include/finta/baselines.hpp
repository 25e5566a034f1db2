#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "finta/geometry.hpp"

namespace finta {

/// Per-voxel tissue tag as stored on disk (one unsigned byte per voxel).
/// Values >= kAtlasBase encode atlas_region(value - kAtlasBase).
namespace tissue {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kWhiteMatter = 1;
inline constexpr std::uint8_t kGrayMatter = 2;
inline constexpr std::uint8_t kCsf = 3;
inline constexpr std::uint8_t kAtlasBase = 16;

inline constexpr std::uint8_t atlas_region(int id) {
  return static_cast<std::uint8_t>(kAtlasBase + id);
}
inline constexpr bool is_atlas(std::uint8_t tag) { return tag >= kAtlasBase; }
}  // namespace tissue

struct MaskVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
  Point3 origin_mm;
  std::vector<std::uint8_t> data;  // x-fastest

  MaskVolume() = default;
  MaskVolume(std::array<std::size_t, 3> dims, std::array<double, 3> voxel_size, Point3 origin,
             std::uint8_t fill = tissue::kBackground);

  /// Throws InvalidConfig when the payload size or voxel sizes are wrong.
  void validate() const;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t linear_index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims[0] * (j + dims[1] * k);
  }

  /// Floor-based voxel of a point; points on a boundary belong to the higher
  /// index. nullopt outside the volume.
  std::optional<std::array<std::size_t, 3>> voxel_of(const Point3& p) const;

  /// Tag at a point, nullopt outside the volume.
  std::optional<std::uint8_t> tag_at(const Point3& p) const;

  Point3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const;

  friend bool operator==(const MaskVolume&, const MaskVolume&) = default;
};

// ---------------------------------------------------------------------------
// Anatomy-style filters. Each returns one verdict per streamline, true meaning
// the streamline is kept (positive).

struct LengthStage {
  double min_mm = 20.0;
  double max_mm = 200.0;
};

struct LoopStage {
  double max_winding_deg = 330.0;
};

enum class EndpointMode { kRejectCsfEndpoint, kRequireAtlasEndpoint };

struct EndpointStage {
  const MaskVolume* mask = nullptr;
  EndpointMode mode = EndpointMode::kRejectCsfEndpoint;
};

using FilterStage = std::variant<LengthStage, LoopStage, EndpointStage>;

std::string stage_name(const FilterStage& stage);

std::vector<bool> length_filter(const Tractogram& t, double min_mm, double max_mm);
std::vector<bool> loop_filter(const Tractogram& t, double max_winding_deg);

struct EndpointFilterResult {
  std::vector<bool> verdicts;
  std::size_t endpoints_outside = 0;  // endpoints that fell outside the volume
};

EndpointFilterResult endpoint_mask_filter(const Tractogram& t, const MaskVolume& mask,
                                          EndpointMode mode);

struct StageReport {
  std::string name;
  std::size_t input_count = 0;
  std::size_t positive_count = 0;
  std::size_t endpoints_outside = 0;
};

struct PipelineResult {
  std::vector<bool> verdicts;
  /// For each streamline, the index of the stage that rejected it, or -1.
  std::vector<int> rejected_by;
  std::vector<StageReport> stages;
};

/// Applies stages successively; stage k only sees what stage k-1 kept.
PipelineResult pipeline(const Tractogram& t, const std::vector<FilterStage>& stages);

}  // namespace finta
