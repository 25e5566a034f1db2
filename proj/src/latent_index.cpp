#include "finta/latent_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "finta/error.hpp"

namespace finta {

ReferenceSet::ReferenceSet(std::span<const LatentVector> latents, std::vector<std::string> labels,
                           std::string provenance)
    : labels_(std::move(labels)), provenance_(std::move(provenance)) {
  if (latents.empty()) throw Error(ErrorCode::kEmptyReference, "reference set is empty");
  if (labels_.size() != latents.size()) {
    throw Error(ErrorCode::kShapeMismatch, "reference has " + std::to_string(latents.size()) +
                                               " latents but " + std::to_string(labels_.size()) +
                                               " labels");
  }
  dim_ = latents.front().size();
  if (dim_ == 0) throw Error(ErrorCode::kInvalidLatent, "zero-width latent vectors");
  data_.reserve(latents.size() * dim_);
  for (const auto& z : latents) {
    if (z.size() != dim_) throw Error(ErrorCode::kShapeMismatch, "latent widths differ");
    for (float v : z) {
      if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidLatent, "non-finite reference latent");
      data_.push_back(v);
    }
  }
}

std::vector<std::string> ReferenceSet::classes() const {
  std::vector<std::string> out;
  for (const auto& l : labels_) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

ReferenceSet build(std::span<const LatentVector> latents, std::vector<std::string> labels,
                   std::string provenance) {
  return ReferenceSet(latents, std::move(labels), std::move(provenance));
}

Neighbor nearest(const ReferenceSet& ref, std::span<const float> query,
                 std::optional<std::size_t> exclude) {
  const std::size_t dim = ref.dim();
  if (query.size() != dim) {
    throw Error(ErrorCode::kInvalidLatent, "query has " + std::to_string(query.size()) +
                                               " components, reference has " + std::to_string(dim));
  }
  for (float v : query) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidLatent, "non-finite query latent");
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_index = 0;
  bool found = false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (exclude && *exclude == i) continue;
    const auto r = ref.latent(i);
    double sum = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(r[d]) - static_cast<double>(query[d]);
      sum += diff * diff;
    }
    if (!found || sum < best) {
      best = sum;
      best_index = i;
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::kEmptyReference, "no reference entry left to compare against");
  return {best_index, std::sqrt(best), ref.labels()[best_index]};
}

Threshold select_threshold(std::span<const double> pos_distances,
                           std::span<const double> neg_distances) {
  if (pos_distances.empty() || neg_distances.empty()) {
    throw Error(ErrorCode::kDegenerateROC, "threshold selection needs both classes");
  }
  std::vector<double> pos(pos_distances.begin(), pos_distances.end());
  std::vector<double> neg(neg_distances.begin(), neg_distances.end());
  for (double d : pos) {
    if (!std::isfinite(d)) throw Error(ErrorCode::kDegenerateROC, "non-finite distance");
  }
  for (double d : neg) {
    if (!std::isfinite(d)) throw Error(ErrorCode::kDegenerateROC, "non-finite distance");
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> distinct;
  distinct.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(distinct));
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  Threshold out;
  std::size_t ip = 0, in = 0;
  double best_j = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    const double d = distinct[i];
    while (ip < pos.size() && pos[ip] <= d) ++ip;
    while (in < neg.size() && neg[in] <= d) ++in;
    const double tpr = static_cast<double>(ip) / np;
    const double fpr = static_cast<double>(in) / nn;
    out.curve.push_back({d, tpr, fpr});
    const bool has_next = i + 1 < distinct.size();
    const double candidate = has_next ? 0.5 * (d + distinct[i + 1]) : d;
    if (has_next) out.curve.push_back({candidate, tpr, fpr});
    if (tpr - fpr > best_j) {
      best_j = tpr - fpr;
      out.value = candidate;
      out.tpr = tpr;
      out.fpr = fpr;
    }
  }
  return out;
}

std::vector<Neighbor> nearest_all(const ReferenceSet& ref, std::span<const LatentVector> queries,
                                  int threads) {
  std::vector<Neighbor> out(queries.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = nearest(ref, queries[i]);
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)),
                                             std::max<std::size_t>(queries.size(), 1));
  if (workers <= 1) {
    work(0, queries.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t per = (queries.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(queries.size(), w * per);
      const std::size_t end = std::min(queries.size(), begin + per);
      pool.emplace_back(work, begin, end);
    }
  }
  return out;
}

std::vector<FilterDecision> filter_latents(const ReferenceSet& ref,
                                           std::span<const LatentVector> latents, double threshold,
                                           int threads) {
  const auto neighbors = nearest_all(ref, latents, threads);
  std::vector<FilterDecision> out(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const auto& nb = neighbors[i];
    out[i] = {i, nb.distance, nb.index, nb.label, nb.distance <= threshold ? kPositive : kNegative};
  }
  return out;
}

std::vector<FilterDecision> filter(const AutoencoderModel& model, const ReferenceSet& ref,
                                   const Tractogram& t, const Threshold& threshold, int threads) {
  const auto latents = encode_batch(model, t.streamlines, 256, threads);
  return filter_latents(ref, latents, threshold.value, threads);
}

std::vector<FilterDecision> classify_latents(const ReferenceSet& ref,
                                             std::span<const LatentVector> latents,
                                             std::optional<double> threshold, int threads) {
  const auto neighbors = nearest_all(ref, latents, threads);
  std::vector<FilterDecision> out(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const auto& nb = neighbors[i];
    const bool rejected = threshold && nb.distance > *threshold;
    out[i] = {i, nb.distance, nb.index, nb.label, rejected ? kRejectedLabel : nb.label};
  }
  return out;
}

std::vector<FilterDecision> classify(const AutoencoderModel& model, const ReferenceSet& ref,
                                     const Tractogram& t, const std::optional<Threshold>& threshold,
                                     int threads) {
  if (ref.classes().size() < 2) {
    throw Error(ErrorCode::kInvalidConfig, "classification needs a reference with >= 2 classes");
  }
  const auto latents = encode_batch(model, t.streamlines, 256, threads);
  std::optional<double> tau;
  if (threshold) tau = threshold->value;
  return classify_latents(ref, latents, tau, threads);
}

std::vector<Streamline> interpolate(const AutoencoderModel& model, const LatentVector& from,
                                    const LatentVector& to, int k) {
  if (k < 2) throw Error(ErrorCode::kInvalidConfig, "interpolation needs k >= 2");
  if (from.size() != to.size()) throw Error(ErrorCode::kInvalidLatent, "latent widths differ");
  for (std::size_t d = 0; d < from.size(); ++d) {
    if (!std::isfinite(from[d]) || !std::isfinite(to[d])) {
      throw Error(ErrorCode::kInvalidLatent, "non-finite interpolation endpoint");
    }
  }
  std::vector<LatentVector> path;
  for (int i = 0; i < k; ++i) {
    const double t = static_cast<double>(i) / (k - 1);
    LatentVector z(from.size());
    for (std::size_t d = 0; d < z.size(); ++d) {
      z[d] = static_cast<float>((1.0 - t) * from[d] + t * to[d]);
    }
    path.push_back(std::move(z));
  }
  return decode_batch(model, path);
}

LatentTable export_latents(const AutoencoderModel& model, const Tractogram& t, int threads) {
  t.check_consistent();
  LatentTable table;
  table.latents = encode_batch(model, t.streamlines, 256, threads);
  for (std::size_t i = 0; i < t.size(); ++i) {
    table.ids.push_back(i);
    table.labels.push_back(t.labels ? (*t.labels)[i] : std::string());
  }
  return table;
}

}  // namespace finta
