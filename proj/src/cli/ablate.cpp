#include "jft/cli/ablate.hpp"

#include <cstdio>
#include <set>
#include <stdexcept>

#include "jft/io/checkpoint_file.hpp"

namespace jft::cli {
namespace {

using ordered_json = nlohmann::ordered_json;

void write_text(const std::filesystem::path& path, const std::string& text) { io::write_bytes(path, text); }

ordered_json breakdown_json(const fusion::ParamBreakdown& b) {
  return {{"text_encoder", b.text_encoder}, {"image_encoder", b.image_encoder}, {"projections", b.projections},
          {"attention", b.attention},       {"head", b.head},                   {"total", b.total()}};
}

}  // namespace

const std::vector<AblationMethod>& ablation_methods() {
  static const std::vector<AblationMethod> methods = {
      {"image_only", fusion::Architecture::image_only, false},
      {"text_only", fusion::Architecture::text_only, false},
      {"concat_frozen", fusion::Architecture::concat, true},
      {"concat_finetuned", fusion::Architecture::concat, false},
      {"fusion", fusion::Architecture::fusion, false},
  };
  return methods;
}

AblationResult run_ablation(const data::Dataset& dataset, const io::RunConfig& config, std::ostream* log) {
  config.validate();
  if (dataset.classes != config.fusion.classes) {
    throw std::invalid_argument("dataset has " + std::to_string(dataset.classes) + " classes but fusion.classes is " +
                                std::to_string(config.fusion.classes));
  }
  const auto seeds = io::seed_plan(config.seed);

  AblationResult result;
  auto text_corpus = data::generate_text_corpus(config.pretrain.text_corpus_size, seeds.text_corpus);
  auto text = training::pretrain_text(text_corpus, config.text_encoder,
                                      io::pretrain_config(config, seeds.text_pretrain, seeds.text_corpus));
  result.text_pretrain_loss = text.final_loss;
  auto image_corpus = data::generate_image_corpus(config.pretrain.image_corpus_size, seeds.image_corpus);
  auto image = training::pretrain_image(image_corpus, config.image_encoder,
                                        io::pretrain_config(config, seeds.image_pretrain, seeds.image_corpus));
  result.image_pretrain_loss = image.final_loss;
  if (log) *log << "pretrained encoders (text loss " << text.final_loss << ", image loss " << image.final_loss << ")\n";

  auto split = data::kfold_split(dataset, config.folds, seeds.folds);
  std::vector<std::vector<data::PairedSample>> train_sets(config.folds), test_sets(config.folds);
  for (std::size_t f = 0; f < config.folds; ++f) {
    std::set<std::uint64_t> held(split.folds[f].begin(), split.folds[f].end());
    for (const auto& s : dataset.samples) (held.count(s.id) ? test_sets[f] : train_sets[f]).push_back(s);
  }

  training::ModelSpec spec;
  spec.fusion = config.fusion;
  spec.text = config.text_encoder;
  spec.image = config.image_encoder;
  for (const auto& method : ablation_methods()) {
    spec.arch = method.arch;
    MethodOutcome outcome;
    outcome.method = method;
    std::vector<metrics::EvalResult> folds;
    for (std::size_t f = 0; f < config.folds; ++f) {
      training::TrainConfig train = config.train;
      train.seed = seeds.finetune(f);
      train.freeze_text = method.freeze_encoders;
      train.freeze_image = method.freeze_encoders;
      try {
        auto run = training::joint_finetune(train_sets[f], &text.checkpoint, &image.checkpoint, spec, train);
        folds.push_back(metrics::evaluate(run.model, test_sets[f], method.arch));
        if (f == 0) outcome.params = fusion::param_breakdown(run.model);
        outcome.histories.push_back(std::move(run.history));
      } catch (const std::exception& e) {
        throw std::runtime_error(method.name + ", fold " + std::to_string(f + 1) + ": " + e.what());
      }
      if (log) {
        char line[160];
        std::snprintf(line, sizeof line, "%s fold %zu/%zu: auc %.4f after %zu epochs\n", method.name.c_str(), f + 1,
                      config.folds, folds.back().auc, outcome.histories.back().epochs_run);
        *log << line << std::flush;
      }
    }
    outcome.report = metrics::aggregate(method.name, std::move(folds), outcome.params.total());
    result.methods.push_back(std::move(outcome));
  }
  return result;
}

ordered_json method_json(const MethodOutcome& o) {
  ordered_json folds = ordered_json::array();
  for (std::size_t f = 0; f < o.report.folds.size(); ++f) {
    const auto& e = o.report.folds[f];
    const auto& h = o.histories[f];
    ordered_json j{{"fold", f + 1}, {"auc", e.auc}, {"accuracy", e.accuracy}, {"loss", e.mean_loss}, {"samples", e.samples}};
    if (e.text_share) {
      j["text_share"] = *e.text_share;
      j["image_share"] = *e.image_share;
    }
    j["epochs"] = h.epochs_run;
    j["stop_reason"] = h.stop_reason;
    j["train_losses"] = h.losses;
    if (!h.text_shares.empty()) j["train_text_shares"] = h.text_shares;
    folds.push_back(std::move(j));
  }
  return {{"method", o.method.name},
          {"architecture", fusion::to_string(o.method.arch)},
          {"frozen_encoders", o.method.freeze_encoders},
          {"mean", o.report.mean},
          {"std", o.report.std},
          {"params", breakdown_json(o.params)},
          {"folds", std::move(folds)}};
}

ordered_json params_json(const AblationResult& result) {
  ordered_json j = ordered_json::object();
  for (const auto& m : result.methods) j[m.method.name] = breakdown_json(m.params);
  return j;
}

std::string params_table(const AblationResult& result) {
  std::string out = "# Parameters per component\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %12s %13s %11s %9s %6s %9s\n", "Method", "text_encoder", "image_encoder",
                "projections", "attention", "head", "total");
  out += line;
  for (const auto& m : result.methods) {
    const auto& b = m.params;
    std::snprintf(line, sizeof line, "%-18s %12zu %13zu %11zu %9zu %6zu %9zu\n", m.method.name.c_str(), b.text_encoder,
                  b.image_encoder, b.projections, b.attention, b.head, b.total());
    out += line;
  }
  return out;
}

void write_ablation(const std::filesystem::path& dir, const AblationResult& result, const io::RunConfig& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  std::vector<metrics::RunReport> reports;
  for (const auto& m : result.methods) {
    write_text(dir / (m.method.name + ".json"), method_json(m).dump(2) + "\n");
    reports.push_back(m.report);
  }
  write_text(dir / "report.json", metrics::report_json(reports));
  write_text(dir / "report.txt", metrics::report_table(reports) + "\n" + params_table(result));
  write_text(dir / "params.json", params_json(result).dump(2) + "\n");
  write_text(dir / "config.resolved.json", io::to_json(config).dump(2) + "\n");
}

}  // namespace jft::cli
