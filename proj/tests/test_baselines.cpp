#include <algorithm>
#include <cmath>
#include <numbers>

#include <doctest.h>

#include "finta/baselines.hpp"
#include "finta/phantom.hpp"
#include "support.hpp"

using namespace finta;
using finta::test::code_of;

namespace {

Streamline circle(double radius, int samples, double turns = 1.0) {
  Streamline s;
  for (int i = 0; i <= samples; ++i) {
    const double a = 2 * std::numbers::pi * turns * i / samples;
    s.push_back({radius * std::cos(a), radius * std::sin(a), 0});
  }
  return s;
}

MaskVolume labelled_grid() {
  MaskVolume m({10, 10, 10}, {2.0, 2.0, 2.0}, {-10, -10, -10}, tissue::kWhiteMatter);
  m.data[m.linear_index(0, 0, 0)] = tissue::kCsf;
  m.data[m.linear_index(9, 9, 9)] = tissue::atlas_region(5);
  m.data[m.linear_index(9, 0, 0)] = tissue::atlas_region(5);
  m.data[m.linear_index(0, 9, 0)] = tissue::kGrayMatter;
  return m;
}

std::vector<std::size_t> positives(const std::vector<bool>& v) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i]) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("mask voxel lookup is floor based") {
  const MaskVolume m = labelled_grid();
  CHECK(m.voxel_of({-10, -10, -10}) == std::array<std::size_t, 3>{0, 0, 0});
  CHECK(m.voxel_of({-8.0001, -10, -10}) == std::array<std::size_t, 3>{0, 0, 0});
  // A boundary point belongs to the higher voxel.
  CHECK(m.voxel_of({-8.0, -10, -10}) == std::array<std::size_t, 3>{1, 0, 0});
  CHECK(m.voxel_of({9.999, 9.999, 9.999}) == std::array<std::size_t, 3>{9, 9, 9});
  CHECK(!m.voxel_of({10.0, 0, 0}));
  CHECK(!m.voxel_of({-10.001, 0, 0}));
  CHECK(m.tag_at({-9, -9, -9}) == tissue::kCsf);
  const Point3 c = m.voxel_center(3, 4, 5);
  CHECK(m.voxel_of(c) == std::array<std::size_t, 3>{3, 4, 5});

  MaskVolume bad = m;
  bad.data.pop_back();
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("length filter") {
  Tractogram t;
  t.streamlines = {test::line({0, 0, 0}, {50, 0, 0}, 6), test::line({0, 0, 0}, {10, 0, 0}, 3)};
  CHECK(length_filter(t, 20, 200) == std::vector<bool>{true, false});
  CHECK(code_of([&] { length_filter(t, 200, 20); }) == ErrorCode::kInvalidConfig);

  Rng rng(1);
  Tractogram r;
  for (int i = 0; i < 1000; ++i) r.streamlines.push_back(test::random_polyline(rng, 2 + rng.below(40), 6));
  const auto v = length_filter(r, 20, 200);
  for (std::size_t i = 0; i < r.size(); ++i) {
    double len = 0;
    for (std::size_t k = 1; k < r.streamlines[i].size(); ++k) {
      len += distance(r.streamlines[i][k], r.streamlines[i][k - 1]);
    }
    CHECK(v[i] == (len >= 20 && len <= 200));
  }
}

TEST_CASE("loop filter") {
  Tractogram t;
  t.streamlines = {circle(10, 64), test::line({0, 0, 0}, {30, 0, 0}, 10)};
  CHECK(loop_filter(t, 330) == std::vector<bool>{false, true});
  CHECK(loop_filter(t, 1) == std::vector<bool>{false, true});
  CHECK(code_of([&] { loop_filter(t, 0); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("endpoint mask filter") {
  const MaskVolume m = labelled_grid();
  Tractogram t;
  t.streamlines = {
      test::line({-9, -9, -9}, {1, 1, 1}, 4),  // starts in CSF
      test::line({9, 9, 9}, {9, -9, -9}, 4),   // atlas to atlas
      test::line({9, 9, 9}, {-9, 9, -9}, 4),   // atlas to gray matter
      test::line({9, 9, 9}, {1, 1, 1}, 4),     // ends in white matter
      test::line({9, 9, 9}, {30, 0, 0}, 4),    // leaves the volume
  };
  const auto csf = endpoint_mask_filter(t, m, EndpointMode::kRejectCsfEndpoint);
  CHECK(csf.verdicts == std::vector<bool>{false, true, true, true, true});
  CHECK(csf.endpoints_outside == 1);
  const auto atlas = endpoint_mask_filter(t, m, EndpointMode::kRequireAtlasEndpoint);
  CHECK(atlas.verdicts == std::vector<bool>{false, true, true, false, false});
  CHECK(atlas.endpoints_outside == 1);
}

TEST_CASE("pipeline attribution and single stage") {
  Tractogram t;
  Streamline looped = circle(12, 64, 1.5);
  t.streamlines = {looped, test::line({0, 0, 0}, {5, 0, 0}, 3), test::line({0, 0, 0}, {50, 0, 0}, 8)};
  const PipelineResult r = pipeline(t, {LengthStage{}, LoopStage{}});
  CHECK(r.verdicts == std::vector<bool>{false, false, true});
  CHECK(r.rejected_by == std::vector<int>{1, 0, -1});
  REQUIRE(r.stages.size() == 2);
  CHECK(r.stages[0].name == "length");
  CHECK(r.stages[0].input_count == 3);
  CHECK(r.stages[0].positive_count == 2);
  CHECK(r.stages[1].input_count == 2);
  CHECK(r.stages[1].positive_count == 1);

  CHECK(pipeline(t, {LengthStage{}}).verdicts == length_filter(t, 20, 200));
  CHECK(code_of([&] { pipeline(t, {}); }) == ErrorCode::kInvalidConfig);
  CHECK(code_of([&] { pipeline(t, {EndpointStage{}}); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("baselines on the phantom") {
  PhantomConfig c;
  c.n_bundles = 7;
  c.streamlines_per_bundle = 150;
  const PhantomOutput ph = generate(c);
  const Tractogram& t = ph.tractogram;

  SUBCASE("pipeline positives are the intersection of standalone positives") {
    const std::vector<FilterStage> stages{
        LengthStage{}, LoopStage{}, EndpointStage{&ph.mask, EndpointMode::kRejectCsfEndpoint},
        EndpointStage{&ph.mask, EndpointMode::kRequireAtlasEndpoint}};
    std::vector<bool> all(t.size(), true);
    const auto len = length_filter(t, 20, 200);
    const auto loop = loop_filter(t, 330);
    const auto csf = endpoint_mask_filter(t, ph.mask, EndpointMode::kRejectCsfEndpoint).verdicts;
    const auto atlas = endpoint_mask_filter(t, ph.mask, EndpointMode::kRequireAtlasEndpoint).verdicts;
    for (std::size_t i = 0; i < t.size(); ++i) all[i] = len[i] && loop[i] && csf[i] && atlas[i];
    const PipelineResult r = pipeline(t, stages);
    CHECK(positives(r.verdicts) == positives(all));
    // Order changes attribution only.
    std::vector<FilterStage> reversed_stages(stages.rbegin(), stages.rend());
    CHECK(positives(pipeline(t, reversed_stages).verdicts) == positives(all));
  }

  auto group = [&](const char* name) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if ((*t.group_ids)[i] == name) idx.push_back(i);
    }
    return t.subset(idx);
  };
  auto negative_share = [](const std::vector<bool>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), false)) / static_cast<double>(v.size());
  };
  SUBCASE("loop subclass fails the loop filter") {
    CHECK(negative_share(loop_filter(group(subclass::kLoop), 330)) >= 0.99);
  }
  SUBCASE("early stops fail the atlas endpoint filter") {
    const auto v = endpoint_mask_filter(group(subclass::kEarlyStop), ph.mask,
                                        EndpointMode::kRequireAtlasEndpoint);
    CHECK(negative_share(v.verdicts) >= 0.95);
  }
}

}  // TEST_SUITE
