#include "jft/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "jft/autograd/ops.hpp"
#include "jft/training/training.hpp"
#include "json.hpp"

namespace jft::metrics {
namespace {

constexpr double kRowSumTolerance = 1e-6;

void check_rows(std::span<const double> probs, std::size_t classes, std::size_t n) {
  if (classes < 2) throw MetricError("auc: need at least 2 classes");
  if (probs.size() != n * classes) {
    throw MetricError("auc: " + std::to_string(probs.size()) + " probabilities for " + std::to_string(n) +
                      " samples of " + std::to_string(classes) + " classes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double p = probs[i * classes + c];
      if (!(p >= 0.0 && p <= 1.0)) throw MetricError("auc: row " + std::to_string(i) + " has a value outside [0, 1]");
      s += p;
    }
    if (std::abs(s - 1.0) > kRowSumTolerance) throw MetricError("auc: row " + std::to_string(i) + " does not sum to 1");
  }
}

}  // namespace

double auc_binary(std::span<const double> scores, std::span<const std::size_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (auto l : labels) {
    if (l > 1) throw MetricError("auc: binary labels must be 0 or 1");
    pos += l;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps every quantity an exact integer.
  double twice_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_mid = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) twice_rank_sum += twice_mid;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double twice_u = twice_rank_sum - p * (p + 1.0);
  return twice_u / (2.0 * p * static_cast<double>(neg));
}

double auc_macro_ovr(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels) {
  check_rows(probs, classes, labels.size());
  std::vector<std::size_t> counts(classes, 0);
  for (auto l : labels) {
    if (l >= classes) throw MetricError("auc: label " + std::to_string(l) + " outside " + std::to_string(classes) + " classes");
    ++counts[l];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw MetricError("auc: class " + std::to_string(c) + " missing from labels");
  }
  const std::size_t n = labels.size();
  std::vector<double> scores(n);
  std::vector<std::size_t> is_c(n);
  auto column = [&](std::size_t c) {
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs[i * classes + c];
      is_c[i] = labels[i] == c;
    }
    return auc_binary(scores, is_c);
  };
  if (classes == 2) return column(1);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) total += column(c);
  return total / static_cast<double>(classes);
}

double accuracy(std::span<const double> probs, std::size_t classes, std::span<const std::size_t> labels) {
  if (labels.empty()) throw MetricError("accuracy: no samples");
  if (probs.size() != labels.size() * classes) throw MetricError("accuracy: probability matrix has the wrong size");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = probs.subspan(i * classes, classes);
    hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

EvalResult evaluate(const fusion::FusionModel& model, std::span<const data::PairedSample> samples,
                    fusion::Architecture mode) {
  if (model.arch != mode) {
    throw ModeMismatch("mode " + std::string(fusion::to_string(mode)) + " does not match " +
                       std::string(fusion::to_string(model.arch)) + " model");
  }
  if (samples.empty()) throw MetricError("evaluate: empty dataset");
  std::vector<const data::PairedSample*> ptrs;
  std::vector<std::size_t> labels;
  for (const auto& s : samples) {
    if (s.label >= model.config.classes) throw MetricError("evaluate: label outside model classes");
    ptrs.push_back(&s);
    labels.push_back(s.label);
  }
  std::optional<Tensor> text, image;
  if (model.uses_text()) text = training::encode_text(model, ptrs);
  if (model.uses_image()) image = training::encode_image(model, ptrs);
  auto out = fusion::forward_features(model, text ? &*text : nullptr, image ? &*image : nullptr);

  EvalResult r;
  r.samples = samples.size();
  r.mean_loss = fusion::loss(out.logits, labels).item();
  Tensor probs = softmax(out.logits, 1);
  const std::size_t c = model.config.classes;
  r.auc = auc_macro_ovr(probs.values(), c, labels);
  r.accuracy = accuracy(probs.values(), c, labels);
  if (out.weights) {
    const auto& w = *out.weights;
    const std::size_t per = w.size() / samples.size();
    double share = 0.0;
    for (std::size_t b = 0; b < samples.size(); ++b) {
      std::vector<double> one(w.values().begin() + b * per, w.values().begin() + (b + 1) * per);
      share += fusion::make_attention_record(Tensor({per / 4, 2, 2}, std::move(one))).text_share;
    }
    r.text_share = share / static_cast<double>(samples.size());
    r.image_share = 1.0 - *r.text_share;
  }
  return r;
}

RunReport aggregate(std::string method, std::vector<EvalResult> folds, std::size_t params) {
  if (folds.size() < 2) throw MetricError("aggregate: need at least 2 folds, got " + std::to_string(folds.size()));
  RunReport r;
  r.method = std::move(method);
  r.params = params;
  double mean = 0.0, m2 = 0.0, n = 0.0;
  for (const auto& f : folds) {
    n += 1.0;
    const double delta = f.auc - mean;
    mean += delta / n;
    m2 += delta * (f.auc - mean);
  }
  r.mean = mean;
  r.std = std::sqrt(m2 / n);
  r.folds = std::move(folds);
  return r;
}

std::string report_json(std::span<const RunReport> reports) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& r : reports) {
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) {
      nlohmann::ordered_json e{{"auc", f.auc}, {"accuracy", f.accuracy}, {"loss", f.mean_loss}, {"samples", f.samples}};
      if (f.text_share) {
        e["text_share"] = *f.text_share;
        e["image_share"] = *f.image_share;
      }
      folds.push_back(std::move(e));
    }
    doc[r.method] = {{"mean", r.mean}, {"std", r.std}, {"params", r.params}, {"folds", std::move(folds)}};
  }
  return doc.dump(2) + "\n";
}

std::string report_table(std::span<const RunReport> reports) {
  std::vector<const RunReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->mean > b->mean; });
  std::size_t width = 6;
  for (const auto* r : sorted) width = std::max(width, r->method.size());
  std::string out = "# AUC over " + std::to_string(reports.empty() ? 0 : reports[0].folds.size()) +
                    " folds; Std is the population standard deviation\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %10s\n", static_cast<int>(width), "Method", "Mean", "Std", "Params");
  out += line;
  for (const auto* r : sorted) {
    std::snprintf(line, sizeof line, "%-*s  %8.4f  %8.4f  %10zu\n", static_cast<int>(width), r->method.c_str(), r->mean,
                  r->std, r->params);
    out += line;
  }
  return out;
}

}  // namespace jft::metrics
