#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "finta/autoencoder.hpp"
#include "finta/geometry.hpp"

namespace finta {

inline constexpr const char* kRejectedLabel = "rejected";
inline constexpr const char* kPositive = "positive";
inline constexpr const char* kNegative = "negative";

/// Immutable set of labelled latent vectors answering exact Euclidean
/// nearest-neighbour queries by linear scan.
class ReferenceSet {
 public:
  /// Throws EmptyReference when `latents` is empty, ShapeMismatch when the
  /// label count or a vector width disagrees, InvalidLatent on non-finite input.
  ReferenceSet(std::span<const LatentVector> latents, std::vector<std::string> labels,
               std::string provenance = {});

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& provenance() const { return provenance_; }
  std::span<const float> latent(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }
  /// Distinct labels in first-appearance order.
  std::vector<std::string> classes() const;

 private:
  std::vector<float> data_;  // size() x dim_, row-major
  std::size_t dim_ = 0;
  std::vector<std::string> labels_;
  std::string provenance_;
};

ReferenceSet build(std::span<const LatentVector> latents, std::vector<std::string> labels,
                   std::string provenance = {});

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
  std::string label;
};

/// Exact nearest neighbour; ties go to the lowest reference index.
/// `exclude` skips one reference entry (leave-one-out queries).
/// Throws InvalidLatent on a non-finite or wrongly sized query.
Neighbor nearest(const ReferenceSet& ref, std::span<const float> query,
                 std::optional<std::size_t> exclude = std::nullopt);

struct RocPoint {
  double threshold = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

struct Threshold {
  double value = 0.0;
  std::vector<RocPoint> curve;  // ascending threshold
  std::string criterion = "max_tpr_minus_fpr";
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Sweeps the sorted distinct distances and their midpoints, predicting
/// positive when distance <= threshold, and keeps the point maximizing
/// TPR - FPR. TPR - FPR is constant on [d_i, d_i+1); the first (smallest)
/// maximal such interval wins and its midpoint is returned (d_max when the
/// interval is unbounded). Throws DegenerateROC if either class is empty.
Threshold select_threshold(std::span<const double> pos_distances,
                           std::span<const double> neg_distances);

struct FilterDecision {
  std::size_t index = 0;
  double nn_distance = 0.0;
  std::size_t nn_index = 0;
  std::string nn_label;
  std::string verdict;  // positive/negative, or a class label
};

/// Nearest-neighbour queries for precomputed latents, one per input, in
/// input order. `threads` > 1 splits the work into contiguous slices.
std::vector<Neighbor> nearest_all(const ReferenceSet& ref, std::span<const LatentVector> queries,
                                  int threads = 1);

/// Binary filtering: positive iff nn_distance <= threshold.
std::vector<FilterDecision> filter_latents(const ReferenceSet& ref,
                                           std::span<const LatentVector> latents,
                                           double threshold, int threads = 1);
std::vector<FilterDecision> filter(const AutoencoderModel& model, const ReferenceSet& ref,
                                   const Tractogram& t, const Threshold& threshold,
                                   int threads = 1);

/// Multi-class labelling by nearest neighbour; with a threshold, farther
/// queries are labelled kRejectedLabel.
std::vector<FilterDecision> classify_latents(const ReferenceSet& ref,
                                             std::span<const LatentVector> latents,
                                             std::optional<double> threshold, int threads = 1);
std::vector<FilterDecision> classify(const AutoencoderModel& model, const ReferenceSet& ref,
                                     const Tractogram& t, const std::optional<Threshold>& threshold,
                                     int threads = 1);

/// Decodes k evenly spaced points on the segment between two latents.
std::vector<Streamline> interpolate(const AutoencoderModel& model, const LatentVector& from,
                                    const LatentVector& to, int k);

struct LatentTable {
  std::vector<std::size_t> ids;
  std::vector<std::string> labels;  // empty string when unlabelled
  std::vector<LatentVector> latents;
};

LatentTable export_latents(const AutoencoderModel& model, const Tractogram& t, int threads = 1);

}  // namespace finta
