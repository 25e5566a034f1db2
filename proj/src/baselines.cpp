#include "finta/baselines.hpp"

#include <cmath>
#include <type_traits>

#include "finta/error.hpp"

namespace finta {

MaskVolume::MaskVolume(std::array<std::size_t, 3> dims_in, std::array<double, 3> voxel_size,
                       Point3 origin, std::uint8_t fill)
    : dims(dims_in), voxel_size_mm(voxel_size), origin_mm(origin) {
  data.assign(voxel_count(), fill);
  validate();
}

void MaskVolume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw Error(ErrorCode::kInvalidConfig, "mask dimension is zero");
    if (!(voxel_size_mm[a] > 0.0) || !std::isfinite(voxel_size_mm[a])) {
      throw Error(ErrorCode::kInvalidConfig, "mask voxel size must be positive");
    }
  }
  if (!origin_mm.finite()) throw Error(ErrorCode::kInvalidConfig, "mask origin is not finite");
  if (data.size() != voxel_count()) {
    throw Error(ErrorCode::kInvalidConfig, "mask payload has " + std::to_string(data.size()) +
                                               " voxels, dims imply " +
                                               std::to_string(voxel_count()));
  }
}

std::optional<std::array<std::size_t, 3>> MaskVolume::voxel_of(const Point3& p) const {
  const double coords[3] = {p.x - origin_mm.x, p.y - origin_mm.y, p.z - origin_mm.z};
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(coords[a] / voxel_size_mm[a]);
    if (!(f >= 0.0) || f >= static_cast<double>(dims[a])) return std::nullopt;
    idx[a] = static_cast<std::size_t>(f);
  }
  return idx;
}

std::optional<std::uint8_t> MaskVolume::tag_at(const Point3& p) const {
  auto v = voxel_of(p);
  if (!v) return std::nullopt;
  return data[linear_index((*v)[0], (*v)[1], (*v)[2])];
}

Point3 MaskVolume::voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
  return {origin_mm.x + (static_cast<double>(i) + 0.5) * voxel_size_mm[0],
          origin_mm.y + (static_cast<double>(j) + 0.5) * voxel_size_mm[1],
          origin_mm.z + (static_cast<double>(k) + 0.5) * voxel_size_mm[2]};
}

std::string stage_name(const FilterStage& stage) {
  struct Visitor {
    std::string operator()(const LengthStage&) const { return "length"; }
    std::string operator()(const LoopStage&) const { return "no_loops"; }
    std::string operator()(const EndpointStage& s) const {
      return s.mode == EndpointMode::kRejectCsfEndpoint ? "no_end_in_csf" : "end_in_atlas";
    }
  };
  return std::visit(Visitor{}, stage);
}

std::vector<bool> length_filter(const Tractogram& t, double min_mm, double max_mm) {
  if (!(min_mm < max_mm)) {
    throw Error(ErrorCode::kInvalidConfig, "length filter needs min_mm < max_mm");
  }
  std::vector<bool> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double len = length_mm(t.streamlines[i]);
    out[i] = len >= min_mm && len <= max_mm;
  }
  return out;
}

std::vector<bool> loop_filter(const Tractogram& t, double max_winding_deg) {
  if (!(max_winding_deg > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "loop filter cutoff must be positive");
  }
  std::vector<bool> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = !(total_winding_deg(t.streamlines[i]) > max_winding_deg);
  }
  return out;
}

EndpointFilterResult endpoint_mask_filter(const Tractogram& t, const MaskVolume& mask,
                                          EndpointMode mode) {
  mask.validate();
  EndpointFilterResult result;
  result.verdicts.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& s = t.streamlines[i];
    validate(s);
    std::uint8_t tags[2];
    const Point3 ends[2] = {s.front(), s.back()};
    for (int e = 0; e < 2; ++e) {
      auto tag = mask.tag_at(ends[e]);
      if (!tag) ++result.endpoints_outside;
      tags[e] = tag.value_or(tissue::kBackground);
    }
    if (mode == EndpointMode::kRejectCsfEndpoint) {
      result.verdicts[i] = tags[0] != tissue::kCsf && tags[1] != tissue::kCsf;
    } else {
      auto cortical = [](std::uint8_t tag) {
        return tag == tissue::kGrayMatter || tissue::is_atlas(tag);
      };
      result.verdicts[i] = cortical(tags[0]) && cortical(tags[1]);
    }
  }
  return result;
}

PipelineResult pipeline(const Tractogram& t, const std::vector<FilterStage>& stages) {
  if (stages.empty()) throw Error(ErrorCode::kInvalidConfig, "pipeline needs at least one stage");

  PipelineResult result;
  result.verdicts.assign(t.size(), true);
  result.rejected_by.assign(t.size(), -1);

  std::vector<std::size_t> alive(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) alive[i] = i;

  for (std::size_t k = 0; k < stages.size(); ++k) {
    const Tractogram current = t.subset(alive);
    StageReport report;
    report.name = stage_name(stages[k]);
    report.input_count = alive.size();

    std::vector<bool> verdicts;
    std::visit(
        [&](const auto& stage) {
          using S = std::decay_t<decltype(stage)>;
          if constexpr (std::is_same_v<S, LengthStage>) {
            verdicts = length_filter(current, stage.min_mm, stage.max_mm);
          } else if constexpr (std::is_same_v<S, LoopStage>) {
            verdicts = loop_filter(current, stage.max_winding_deg);
          } else {
            if (stage.mask == nullptr) {
              throw Error(ErrorCode::kInvalidConfig, "endpoint stage has no mask");
            }
            auto r = endpoint_mask_filter(current, *stage.mask, stage.mode);
            verdicts = std::move(r.verdicts);
            report.endpoints_outside = r.endpoints_outside;
          }
        },
        stages[k]);

    std::vector<std::size_t> kept;
    kept.reserve(alive.size());
    for (std::size_t j = 0; j < alive.size(); ++j) {
      if (verdicts[j]) {
        kept.push_back(alive[j]);
      } else {
        result.verdicts[alive[j]] = false;
        result.rejected_by[alive[j]] = static_cast<int>(k);
      }
    }
    report.positive_count = kept.size();
    result.stages.push_back(report);
    alive = std::move(kept);
  }
  return result;
}

}  // namespace finta
