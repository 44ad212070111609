#include "jft/cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jft/cli/ablate.hpp"
#include "jft/io/checkpoint_file.hpp"
#include "jft/io/config.hpp"
#include "jft/metrics/metrics.hpp"
#include "jft/training/training.hpp"

namespace jft::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct GenDataArgs {
  std::string out;
  data::GeneratorSpec spec;
};

struct GenCorpusArgs {
  std::string modality;
  std::string out;
  std::size_t n = 2000;
  std::uint64_t seed = 0;
};

struct PretrainArgs {
  std::string corpus;
  std::string out;
  std::string config;
  std::uint64_t corpus_seed = 0;
};

struct FinetuneArgs {
  std::string data;
  std::string text_ckpt;
  std::string image_ckpt;
  std::string config;
  std::string out;
  std::string history;
  std::string arch = "fusion";
  bool freeze_text = false;
  bool freeze_image = false;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string mode;
  std::string json;
};

struct AblateArgs {
  std::string data;
  std::string config;
  std::string out;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int gen_data(const GenDataArgs& a, std::ostream& out) {
  auto ds = data::generate_paired_dataset(a.spec);
  data::save_dataset(a.out, ds);
  std::vector<std::size_t> counts(ds.classes, 0);
  for (const auto& s : ds.samples) ++counts[s.label];
  out << "wrote " << ds.samples.size() << " samples to " << a.out << "\n";
  for (std::size_t c = 0; c < counts.size(); ++c) out << "class " << c << ": " << counts[c] << "\n";
  return kExitOk;
}

int gen_corpus(const GenCorpusArgs& a, std::ostream& out) {
  if (a.modality == "text") {
    data::save_text_corpus(a.out, data::generate_text_corpus(a.n, a.seed));
  } else {
    data::save_image_corpus(a.out, data::generate_image_corpus(a.n, a.seed));
  }
  out << "wrote " << a.n << " " << a.modality << " corpus samples to " << a.out << "\n";
  return kExitOk;
}

int pretrain_text(const PretrainArgs& a, std::ostream& out) {
  auto config = io::load_run_config(a.config);
  auto corpus = data::load_text_corpus(a.corpus);
  auto seeds = io::seed_plan(config.seed);
  auto r = training::pretrain_text(corpus, config.text_encoder,
                                   io::pretrain_config(config, seeds.text_pretrain, a.corpus_seed));
  io::save_encoder(a.out, r.checkpoint);
  out << "final_loss " << fmt(r.final_loss) << "\n";
  out << "masked_token_accuracy " << fmt(training::masked_token_accuracy(r.checkpoint, r.head, corpus)) << "\n";
  out << "param_count " << encoders::param_count(r.checkpoint) << "\n";
  return kExitOk;
}

int pretrain_image(const PretrainArgs& a, std::ostream& out) {
  auto config = io::load_run_config(a.config);
  auto corpus = data::load_image_corpus(a.corpus);
  auto seeds = io::seed_plan(config.seed);
  auto r = training::pretrain_image(corpus, config.image_encoder,
                                    io::pretrain_config(config, seeds.image_pretrain, a.corpus_seed));
  io::save_encoder(a.out, r.checkpoint);
  out << "final_loss " << fmt(r.final_loss) << "\n";
  out << "pattern_accuracy " << fmt(training::pattern_accuracy(r.checkpoint, r.head, corpus)) << "\n";
  out << "param_count " << encoders::param_count(r.checkpoint) << "\n";
  return kExitOk;
}

int finetune(const FinetuneArgs& a, std::ostream& out) {
  auto config = io::load_run_config(a.config);
  training::ModelSpec spec;
  spec.arch = fusion::architecture_from_string(a.arch);
  spec.fusion = config.fusion;
  spec.text = config.text_encoder;
  spec.image = config.image_encoder;
  auto ds = data::load_dataset(a.data);
  if (ds.samples.empty()) throw std::invalid_argument(a.data + ": dataset is empty");
  std::optional<encoders::EncoderCheckpoint> text, image;
  if (spec.arch != fusion::Architecture::image_only) {
    if (a.text_ckpt.empty()) throw std::invalid_argument("--text-ckpt is required for " + a.arch);
    text = io::load_encoder(a.text_ckpt);
  }
  if (spec.arch != fusion::Architecture::text_only) {
    if (a.image_ckpt.empty()) throw std::invalid_argument("--image-ckpt is required for " + a.arch);
    image = io::load_encoder(a.image_ckpt);
  }
  training::TrainConfig train = config.train;
  train.seed = io::seed_plan(config.seed).finetune(0);
  train.freeze_text = train.freeze_text || a.freeze_text;
  train.freeze_image = train.freeze_image || a.freeze_image;
  auto r = training::joint_finetune(ds.samples, text ? &*text : nullptr, image ? &*image : nullptr, spec, train);
  io::save_model(a.out, r.model);

  ordered_json h{{"architecture", a.arch},
                 {"freeze_text", train.freeze_text},
                 {"freeze_image", train.freeze_image},
                 {"epochs_run", r.history.epochs_run},
                 {"stop_reason", r.history.stop_reason},
                 {"losses", r.history.losses}};
  if (!r.history.text_shares.empty()) h["text_shares"] = r.history.text_shares;
  const std::string history = a.history.empty() ? a.out + ".history.json" : a.history;
  io::write_bytes(history, h.dump(2) + "\n");
  out << "epochs_run " << r.history.epochs_run << " (" << r.history.stop_reason << ")\n";
  out << "final_loss " << fmt(r.history.losses.empty() ? 0.0 : r.history.losses.back()) << "\n";
  out << "param_count " << fusion::param_count(r.model) << "\n";
  out << "wrote " << a.out << " and " << history << "\n";
  return kExitOk;
}

int eval(const EvalArgs& a, std::ostream& out) {
  auto model = io::load_model(a.model);
  auto ds = data::load_dataset(a.data);
  auto r = metrics::evaluate(model, ds.samples, fusion::architecture_from_string(a.mode));
  ordered_json j{{"mode", a.mode}, {"samples", r.samples}, {"auc", r.auc}, {"accuracy", r.accuracy}, {"loss", r.mean_loss}};
  out << "samples " << r.samples << "\n";
  out << "auc " << fmt(r.auc) << "\n";
  out << "accuracy " << fmt(r.accuracy) << "\n";
  out << "loss " << fmt(r.mean_loss) << "\n";
  if (r.text_share) {
    j["text_share"] = *r.text_share;
    j["image_share"] = *r.image_share;
    out << "text_share " << fmt(*r.text_share) << "\n";
    out << "image_share " << fmt(*r.image_share) << "\n";
  }
  if (!a.json.empty()) io::write_bytes(a.json, j.dump(2) + "\n");
  return kExitOk;
}

int ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  auto config = io::load_run_config(a.config);
  auto ds = data::load_dataset(a.data);
  auto result = run_ablation(ds, config, &err);
  write_ablation(a.out, result, config);
  std::vector<metrics::RunReport> reports;
  for (const auto& m : result.methods) reports.push_back(m.report);
  out << metrics::report_table(reports) << "\n" << params_table(result);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint fine-tuning of pretrained text and image encoders on synthetic sentiment data", "jft"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* cmd_gd = app.add_subcommand("gen-data", "Generate a paired text/image dataset");
  cmd_gd->add_option("--out", gd.out, "Output JSONL path")->required();
  cmd_gd->add_option("--n", gd.spec.n, "Number of samples")->capture_default_str();
  cmd_gd->add_option("--classes", gd.spec.classes, "Number of classes")->capture_default_str();
  cmd_gd->add_option("--p-text", gd.spec.p_text, "Text informativeness in [0, 1]")->capture_default_str();
  cmd_gd->add_option("--p-image", gd.spec.p_image, "Image informativeness in [0, 1]")->capture_default_str();
  cmd_gd->add_option("--seed", gd.spec.seed, "Generator seed")->capture_default_str();

  GenCorpusArgs gc;
  auto* cmd_gc = app.add_subcommand("gen-corpus", "Generate an unpaired pretraining corpus");
  cmd_gc->add_option("--modality", gc.modality, "text or image")->required()->check(CLI::IsMember({"text", "image"}));
  cmd_gc->add_option("--out", gc.out, "Output JSONL path")->required();
  cmd_gc->add_option("--n", gc.n, "Number of samples")->capture_default_str();
  cmd_gc->add_option("--seed", gc.seed, "Generator seed")->capture_default_str();

  PretrainArgs pt, pi;
  auto* cmd_pt = app.add_subcommand("pretrain-text", "Pretrain the text encoder on masked-token reconstruction");
  auto* cmd_pi = app.add_subcommand("pretrain-image", "Pretrain the image encoder on texture recognition");
  for (auto [cmd, args] : {std::pair{cmd_pt, &pt}, std::pair{cmd_pi, &pi}}) {
    cmd->add_option("--corpus", args->corpus, "Corpus JSONL path")->required();
    cmd->add_option("--out", args->out, "Output checkpoint path")->required();
    cmd->add_option("--config", args->config, "Run configuration JSON");
    cmd->add_option("--corpus-seed", args->corpus_seed, "Seed the corpus was generated with (recorded only)");
  }

  FinetuneArgs ft;
  auto* cmd_ft = app.add_subcommand("finetune", "Jointly fine-tune both encoders with a classifier");
  cmd_ft->add_option("--data", ft.data, "Dataset JSONL path")->required();
  cmd_ft->add_option("--text-ckpt", ft.text_ckpt, "Text encoder checkpoint");
  cmd_ft->add_option("--image-ckpt", ft.image_ckpt, "Image encoder checkpoint");
  cmd_ft->add_option("--config", ft.config, "Run configuration JSON");
  cmd_ft->add_option("--out", ft.out, "Output model checkpoint")->required();
  cmd_ft->add_option("--history", ft.history, "History JSON path (default: <out>.history.json)");
  cmd_ft->add_option("--arch", ft.arch, "fusion, concat, text_only or image_only")
      ->capture_default_str()
      ->check(CLI::IsMember({"fusion", "concat", "text_only", "image_only"}));
  cmd_ft->add_flag("--freeze-text", ft.freeze_text, "Keep the text encoder fixed");
  cmd_ft->add_flag("--freeze-image", ft.freeze_image, "Keep the image encoder fixed");

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "Evaluate a model checkpoint on a dataset");
  cmd_ev->add_option("--model", ev.model, "Model checkpoint")->required();
  cmd_ev->add_option("--data", ev.data, "Dataset JSONL path")->required();
  cmd_ev->add_option("--mode", ev.mode, "fusion, concat, text_only or image_only")
      ->required()
      ->check(CLI::IsMember({"fusion", "concat", "text_only", "image_only"}));
  cmd_ev->add_option("--json", ev.json, "Also write the result as JSON");

  AblateArgs ab;
  auto* cmd_ab = app.add_subcommand("ablate", "Cross-validate all methods and write reports");
  cmd_ab->add_option("--data", ab.data, "Dataset JSONL path")->required();
  cmd_ab->add_option("--config", ab.config, "Run configuration JSON");
  cmd_ab->add_option("--out", ab.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*cmd_gd) return gen_data(gd, out);
    if (*cmd_gc) return gen_corpus(gc, out);
    if (*cmd_pt) return pretrain_text(pt, out);
    if (*cmd_pi) return pretrain_image(pi, out);
    if (*cmd_ft) return finetune(ft, out);
    if (*cmd_ev) return eval(ev, out);
    if (*cmd_ab) return ablate(ab, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace jft::cli
