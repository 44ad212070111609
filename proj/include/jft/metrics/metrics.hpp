#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jft/data/dataset.hpp"
#include "jft/fusion/fusion_model.hpp"

namespace jft::metrics {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ModeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mann-Whitney statistic with ties counted as one half. labels are 0 or 1.
double auc_binary(std::span<const double> scores, std::span<const std::size_t> labels);

// probs is row-major [n, classes]. Two classes reduce to auc_binary on column 1.
double auc_macro_ovr(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels);

double accuracy(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels);

struct EvalResult {
  double auc = 0.0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::optional<double> text_share;
  std::optional<double> image_share;
  std::size_t samples = 0;
};

EvalResult evaluate(const fusion::FusionModel& model, std::span<const data::PairedSample> samples,
                    fusion::Architecture mode);

struct RunReport {
  std::string method;
  std::vector<EvalResult> folds;
  double mean = 0.0;
  double std = 0.0;
  std::size_t params = 0;
};

RunReport aggregate(std::string method, std::vector<EvalResult> folds, std::size_t params = 0);

std::string report_json(std::span<const RunReport> reports);
// Aligned table sorted by mean AUC, descending.
std::string report_table(std::span<const RunReport> reports);

}  // namespace jft::metrics
