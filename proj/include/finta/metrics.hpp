#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace finta {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Throws ShapeMismatch on differing lengths.
ConfusionCounts confusion(const std::vector<bool>& pred, const std::vector<bool>& truth);

enum class Averaging { kMacro, kWeighted };

struct ClassificationMeasures {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  /// Names of per-class measures that hit a zero denominator and were set to 0.
  std::vector<std::string> flags;
};

/// Per-class sensitivity, precision and F1 (each class in turn treated as
/// positive), averaged unweighted (macro) or by class support (weighted).
ClassificationMeasures classification_measures(const ConfusionCounts& c, Averaging averaging);

/// Fraction of non-empty truth groups with at least one member predicted
/// positive. Only truth-positive streamlines define and populate groups.
/// Throws DegenerateGroups when no group is populated, ShapeMismatch on
/// differing lengths.
double vgw_rate(const std::vector<bool>& pred, const std::vector<bool>& truth,
                const std::vector<std::string>& groups);

/// Unweighted mean of the four classification measures and the VGW rate.
double success_rate(const ClassificationMeasures& m, double vgw);
double success_rate(double accuracy, double sensitivity, double precision, double f1, double vgw);

/// tp_g / (tp_g + fn_g) over each group's truth positives; groups without
/// truth positives are omitted.
std::map<std::string, double> per_group_sensitivity(const std::vector<bool>& pred,
                                                    const std::vector<bool>& truth,
                                                    const std::vector<std::string>& groups);

struct EvalReport {
  ConfusionCounts counts;
  ClassificationMeasures macro;
  ClassificationMeasures weighted;
  double vgw_rate = 0.0;
  double success_rate_macro = 0.0;
  double success_rate_weighted = 0.0;
  std::map<std::string, double> group_sensitivity;
};

EvalReport evaluate(const std::vector<bool>& pred, const std::vector<bool>& truth,
                    const std::vector<std::string>& groups);

}  // namespace finta
