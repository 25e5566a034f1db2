#include "finta/metrics.hpp"

#include <set>

#include "finta/error.hpp"

namespace finta {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch,
                "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

struct ClassStats {
  double sensitivity;
  double precision;
  double f1;
  double support;
};

double ratio_or_flag(std::size_t num, std::size_t den, const std::string& name,
                     std::vector<std::string>& flags) {
  if (den == 0) {
    flags.push_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

ClassStats class_stats(std::size_t tp, std::size_t fp, std::size_t fn, const std::string& tag,
                       std::vector<std::string>& flags) {
  ClassStats s{};
  s.sensitivity = ratio_or_flag(tp, tp + fn, tag + ".sensitivity", flags);
  s.precision = ratio_or_flag(tp, tp + fp, tag + ".precision", flags);
  if (s.precision + s.sensitivity > 0.0) {
    s.f1 = 2.0 * s.precision * s.sensitivity / (s.precision + s.sensitivity);
  } else {
    flags.push_back(tag + ".f1");
    s.f1 = 0.0;
  }
  s.support = static_cast<double>(tp + fn);
  return s;
}

}  // namespace

ConfusionCounts confusion(const std::vector<bool>& pred, const std::vector<bool>& truth) {
  check_lengths(pred.size(), truth.size());
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ClassificationMeasures classification_measures(const ConfusionCounts& c, Averaging averaging) {
  ClassificationMeasures m;
  const std::size_t n = c.total();
  m.accuracy = ratio_or_flag(c.tp + c.tn, n, "accuracy", m.flags);
  // The negative class sees the same table with the roles swapped.
  const ClassStats pos = class_stats(c.tp, c.fp, c.fn, "positive", m.flags);
  const ClassStats neg = class_stats(c.tn, c.fn, c.fp, "negative", m.flags);
  double wp = 0.5, wn = 0.5;
  if (averaging == Averaging::kWeighted) {
    const double total = pos.support + neg.support;
    wp = total > 0.0 ? pos.support / total : 0.0;
    wn = total > 0.0 ? neg.support / total : 0.0;
  }
  m.sensitivity = wp * pos.sensitivity + wn * neg.sensitivity;
  m.precision = wp * pos.precision + wn * neg.precision;
  m.f1 = wp * pos.f1 + wn * neg.f1;
  return m;
}

double vgw_rate(const std::vector<bool>& pred, const std::vector<bool>& truth,
                const std::vector<std::string>& groups) {
  check_lengths(pred.size(), truth.size());
  check_lengths(pred.size(), groups.size());
  std::set<std::string> present;
  std::set<std::string> preserved;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i]) continue;
    present.insert(groups[i]);
    if (pred[i]) preserved.insert(groups[i]);
  }
  if (present.empty()) {
    throw Error(ErrorCode::kDegenerateGroups, "no populated ground-truth group");
  }
  return static_cast<double>(preserved.size()) / static_cast<double>(present.size());
}

double success_rate(double accuracy, double sensitivity, double precision, double f1, double vgw) {
  return (accuracy + sensitivity + precision + f1 + vgw) / 5.0;
}

double success_rate(const ClassificationMeasures& m, double vgw) {
  return success_rate(m.accuracy, m.sensitivity, m.precision, m.f1, vgw);
}

std::map<std::string, double> per_group_sensitivity(const std::vector<bool>& pred,
                                                    const std::vector<bool>& truth,
                                                    const std::vector<std::string>& groups) {
  check_lengths(pred.size(), truth.size());
  check_lengths(pred.size(), groups.size());
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // tp, tp + fn
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i]) continue;
    auto& [hit, total] = counts[groups[i]];
    ++total;
    if (pred[i]) ++hit;
  }
  std::map<std::string, double> out;
  for (const auto& [group, c] : counts) {
    out[group] = static_cast<double>(c.first) / static_cast<double>(c.second);
  }
  return out;
}

EvalReport evaluate(const std::vector<bool>& pred, const std::vector<bool>& truth,
                    const std::vector<std::string>& groups) {
  EvalReport r;
  r.counts = confusion(pred, truth);
  r.macro = classification_measures(r.counts, Averaging::kMacro);
  r.weighted = classification_measures(r.counts, Averaging::kWeighted);
  r.vgw_rate = vgw_rate(pred, truth, groups);
  r.success_rate_macro = success_rate(r.macro, r.vgw_rate);
  r.success_rate_weighted = success_rate(r.weighted, r.vgw_rate);
  r.group_sensitivity = per_group_sensitivity(pred, truth, groups);
  return r;
}

}  // namespace finta
