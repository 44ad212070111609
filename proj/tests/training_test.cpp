#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "jft/data/dataset.hpp"
#include "jft/encoders/checkpoint.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/training/training.hpp"
#include "test_util.hpp"

using namespace jft;
using jft::test::random_tensor;
using jft::test::to_vec;

namespace {

encoders::TextEncoderConfig small_text() {
  encoders::TextEncoderConfig c;
  c.width = 8;
  c.blocks = 1;
  c.heads = 2;
  return c;
}

encoders::ImageEncoderConfig small_image() {
  encoders::ImageEncoderConfig c;
  c.channels = {4, 8};
  return c;
}

training::ModelSpec small_spec(fusion::Architecture arch = fusion::Architecture::fusion) {
  training::ModelSpec spec;
  spec.arch = arch;
  spec.text = small_text();
  spec.image = small_image();
  spec.fusion.width = 8;
  spec.fusion.heads = 2;
  return spec;
}

struct Checkpoints {
  encoders::EncoderCheckpoint text;
  encoders::EncoderCheckpoint image;
};

Checkpoints fresh_checkpoints(const training::ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return {encoders::make_checkpoint(spec.text, encoders::init_text_encoder(spec.text, rng), {}),
          encoders::make_checkpoint(spec.image, encoders::init_image_encoder(spec.image, rng), {})};
}

std::vector<data::PairedSample> samples(std::size_t n, std::uint64_t seed, double p_text = 0.9, double p_image = 0.6) {
  data::GeneratorSpec g;
  g.n = n;
  g.seed = seed;
  g.p_text = p_text;
  g.p_image = p_image;
  return data::generate_paired_dataset(g).samples;
}

std::vector<std::vector<double>> snapshot(const auto& params) {
  std::vector<std::vector<double>> out;
  encoders::visit(params, "", [&](const std::string&, const Tensor& t) { out.push_back(to_vec(t)); });
  return out;
}

std::vector<std::vector<double>> snapshot_heads(const fusion::FusionModel& m) {
  std::vector<std::vector<double>> out;
  fusion::visit(m, [&](const std::string& name, const Tensor& t) {
    if (!name.starts_with("text.") && !name.starts_with("image.")) out.push_back(to_vec(t));
  });
  return out;
}

bool any_changed(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return true;
  return false;
}

// Counts epochs since the last record, where a record beats the previous one by more than tol.
bool stop_oracle(const std::vector<double>& losses, std::size_t min_epochs, std::size_t patience, double tol) {
  if (losses.size() < min_epochs) return false;
  std::size_t last_record = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[last_record] - losses[i] > tol) last_record = i;
  return losses.size() - 1 - last_record >= patience;
}

}  // namespace

TEST_CASE("adam_step") {
  training::AdamConfig cfg;
  SUBCASE("zero gradient leaves parameters and advances the step") {
    Tensor p = Tensor::vector({1.0, -2.0});
    Tensor* params[] = {&p};
    const Tensor* grads[] = {nullptr};
    training::AdamState state;
    training::adam_step(params, grads, state, cfg);
    CHECK(to_vec(p) == std::vector<double>{1.0, -2.0});
    CHECK(state.step == 1);
    Tensor zero = Tensor::zeros({2});
    const Tensor* zgrads[] = {&zero};
    training::adam_step(params, zgrads, state, cfg);
    CHECK(to_vec(p) == std::vector<double>{1.0, -2.0});
    CHECK(state.step == 2);
  }
  SUBCASE("first step with unit gradient moves by the learning rate") {
    Tensor p = Tensor::scalar(0.5);
    Tensor g = Tensor::scalar(1.0);
    Tensor* params[] = {&p};
    const Tensor* grads[] = {&g};
    training::AdamState state;
    training::adam_step(params, grads, state, cfg);
    // m_hat = 1, v_hat = 1 after bias correction.
    CHECK(p.item() == doctest::Approx(0.5 - cfg.learning_rate / (1.0 + cfg.eps)).epsilon(1e-15));
  }
  SUBCASE("matches the update recurrence") {
    Rng rng(4);
    Tensor p = random_tensor({3, 2}, rng);
    std::vector<double> x = to_vec(p), m(6, 0.0), v(6, 0.0);
    training::AdamState state;
    for (int t = 1; t <= 5; ++t) {
      Tensor g = random_tensor({3, 2}, rng);
      Tensor* params[] = {&p};
      const Tensor* grads[] = {&g};
      training::adam_step(params, grads, state, cfg);
      for (std::size_t i = 0; i < 6; ++i) {
        m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(cfg.beta1, t)), vh = v[i] / (1 - std::pow(cfg.beta2, t));
        x[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
      }
      for (std::size_t i = 0; i < 6; ++i) CHECK(p[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
  SUBCASE("identical runs give identical trajectories") {
    auto run = [&] {
      Rng rng(8);
      Tensor p = random_tensor({4}, rng);
      training::AdamState state;
      for (int t = 0; t < 10; ++t) {
        Tensor g = random_tensor({4}, rng);
        Tensor* params[] = {&p};
        const Tensor* grads[] = {&g};
        training::adam_step(params, grads, state, cfg);
      }
      return to_vec(p);
    };
    CHECK(run() == run());
  }
  SUBCASE("shape mismatch") {
    Tensor p = Tensor::zeros({2});
    Tensor g = Tensor::zeros({3});
    Tensor* params[] = {&p};
    const Tensor* grads[] = {&g};
    training::AdamState state;
    CHECK_THROWS_AS(training::adam_step(params, grads, state, cfg), ShapeError);
  }
}

TEST_CASE("early_stop_decision") {
  training::TrainConfig cfg;
  cfg.patience = 2;
  cfg.tolerance = 1e-4;
  CHECK_FALSE(training::early_stop_decision(std::vector<double>{1.0, 1.0}, cfg));
  CHECK_FALSE(training::early_stop_decision(std::vector<double>{5.0, 9.0}, cfg));
  CHECK_FALSE(training::early_stop_decision(std::vector<double>{1.0, 0.9, 0.8999}, cfg));
  CHECK(training::early_stop_decision(std::vector<double>{1.0, 0.9, 0.8999, 0.8999}, cfg));
  CHECK_FALSE(training::early_stop_decision(std::vector<double>{1.0, 0.8, 0.6, 0.4, 0.2, 0.1}, cfg));

  SUBCASE("never before the minimum epochs") {
    Rng rng(12);
    for (int trial = 0; trial < 500; ++trial) {
      cfg.min_epochs = 3 + rng.index(4);
      cfg.patience = 1 + rng.index(3);
      std::vector<double> losses(rng.index(cfg.min_epochs - 1) + 1);
      for (double& l : losses) l = rng.uniform(0.0, 1.0);
      CHECK_FALSE(training::early_stop_decision(losses, cfg));
    }
  }
  SUBCASE("agrees with the record-count oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 2000; ++trial) {
      cfg.min_epochs = 3 + rng.index(3);
      cfg.patience = 1 + rng.index(3);
      cfg.tolerance = rng.uniform() < 0.3 ? 0.0 : 1e-2;
      std::vector<double> losses(1 + rng.index(10));
      double level = 1.0;
      for (double& l : losses) {
        level -= rng.uniform(-0.005, 0.03);
        l = level;
      }
      CAPTURE(trial);
      CHECK(training::early_stop_decision(losses, cfg) ==
            stop_oracle(losses, cfg.min_epochs, cfg.patience, cfg.tolerance));
    }
  }
  SUBCASE("config floor") {
    training::TrainConfig bad;
    bad.min_epochs = 2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = {};
    bad.adam.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("pretraining") {
  auto text_corpus = data::generate_text_corpus(400, 21);
  auto image_corpus = data::generate_image_corpus(400, 22);
  training::PretrainConfig pc;
  pc.seed = 5;
  pc.corpus_seed = 21;

  SUBCASE("zero epochs returns the initialization") {
    pc.epochs = 0;
    auto text = training::pretrain_text(text_corpus, small_text(), pc);
    Rng rng(pc.seed);
    auto init = encoders::make_checkpoint(small_text(), encoders::init_text_encoder(small_text(), rng), {});
    CHECK(snapshot(*text.checkpoint.text) == snapshot(*init.text));
    auto image = training::pretrain_image(image_corpus, small_image(), pc);
    Rng rng2(pc.seed);
    auto init2 = encoders::make_checkpoint(small_image(), encoders::init_image_encoder(small_image(), rng2), {});
    CHECK(snapshot(*image.checkpoint.image) == snapshot(*init2.image));
  }
  SUBCASE("metadata and above-chance accuracy") {
    pc.epochs = 4;
    auto held_text = data::generate_text_corpus(300, 31);
    auto text = training::pretrain_text(text_corpus, small_text(), pc);
    CHECK(text.checkpoint.metadata.task == "masked-token");
    CHECK(text.checkpoint.metadata.corpus_seed == 21);
    CHECK(text.checkpoint.metadata.epochs == 4);
    CHECK(std::isfinite(text.final_loss));
    CHECK(training::masked_token_accuracy(text.checkpoint, text.head, held_text) > 1.0 / 64.0);

    auto held_image = data::generate_image_corpus(200, 32);
    auto image = training::pretrain_image(image_corpus, small_image(), pc);
    CHECK(image.checkpoint.metadata.task == "pattern-4class");
    CHECK(image.checkpoint.metadata.epochs == 4);
    CHECK(training::pattern_accuracy(image.checkpoint, image.head, held_image) > 0.25);
  }
  SUBCASE("empty corpus") {
    CHECK_THROWS_AS(training::pretrain_text({}, small_text(), pc), std::invalid_argument);
    CHECK_THROWS_AS(training::pretrain_image({}, small_image(), pc), std::invalid_argument);
  }
}

TEST_CASE("joint_finetune") {
  auto spec = small_spec();
  auto ck = fresh_checkpoints(spec, 3);
  auto train = samples(48, 9);
  training::TrainConfig cfg;
  cfg.seed = 17;

  SUBCASE("zero epochs keeps the checkpoint weights") {
    cfg.max_epochs = 0;
    auto r = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    CHECK(snapshot(*r.model.text) == snapshot(*ck.text.text));
    CHECK(snapshot(*r.model.image) == snapshot(*ck.image.image));
    CHECK(r.history.epochs_run == 0);
    CHECK(r.history.losses.empty());
  }
  SUBCASE("freezing both encoders trains only the fusion layers") {
    cfg.max_epochs = 2;
    cfg.freeze_text = cfg.freeze_image = true;
    Rng rng(cfg.seed);
    auto initial = fusion::build_model(spec.arch, spec.fusion, spec.text, spec.image, ck.text.text, ck.image.image, rng);
    auto r = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    CHECK(snapshot(*r.model.text) == snapshot(*ck.text.text));
    CHECK(snapshot(*r.model.image) == snapshot(*ck.image.image));
    CHECK(any_changed(snapshot_heads(initial), snapshot_heads(r.model)));
  }
  SUBCASE("one step updates both encoders") {
    cfg.max_epochs = 1;
    cfg.batch_size = train.size();
    auto r = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    REQUIRE(r.history.losses.size() == 1);
    CHECK(r.history.losses[0] > 0.1);
    CHECK(any_changed(snapshot(*r.model.text), snapshot(*ck.text.text)));
    CHECK(any_changed(snapshot(*r.model.image), snapshot(*ck.image.image)));
  }
  SUBCASE("both encoders move or neither does") {
    for (std::uint64_t s = 0; s < 6; ++s) {
      cfg.max_epochs = 1;
      cfg.seed = s;
      cfg.batch_size = 8;
      auto few = samples(6, 100 + s);
      auto r = training::joint_finetune(few, &ck.text, &ck.image, spec, cfg);
      CHECK(any_changed(snapshot(*r.model.text), snapshot(*ck.text.text)) ==
            any_changed(snapshot(*r.model.image), snapshot(*ck.image.image)));
    }
  }
  SUBCASE("freezing one encoder") {
    cfg.max_epochs = 1;
    cfg.freeze_image = true;
    auto r = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    CHECK(snapshot(*r.model.image) == snapshot(*ck.image.image));
    CHECK(any_changed(snapshot(*r.model.text), snapshot(*ck.text.text)));
  }
  SUBCASE("history") {
    cfg.max_epochs = 5;
    auto a = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    auto b = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
    CHECK(a.history.losses == b.history.losses);
    CHECK(a.history.losses.size() == a.history.epochs_run);
    CHECK(a.history.text_shares.size() == a.history.epochs_run);
    CHECK(a.history.epochs_run >= 3);
    for (double l : a.history.losses) CHECK(std::isfinite(l));
    for (double s : a.history.text_shares) CHECK((s >= 0.0 && s <= 1.0));
    CHECK((a.history.stop_reason == "max_epochs" || a.history.stop_reason == "early_stop"));
    if (a.history.stop_reason == "early_stop") CHECK(training::early_stop_decision(a.history.losses, cfg));
  }
  SUBCASE("single-modality models carry no attention shares") {
    cfg.max_epochs = 3;
    auto spec_text = small_spec(fusion::Architecture::text_only);
    auto r = training::joint_finetune(train, &ck.text, nullptr, spec_text, cfg);
    CHECK(r.history.text_shares.empty());
    CHECK_FALSE(r.model.image.has_value());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(training::joint_finetune({}, &ck.text, &ck.image, spec, cfg), std::invalid_argument);
    auto wide = spec;
    wide.text.width = 16;
    CHECK_THROWS_AS(training::joint_finetune(train, &ck.text, &ck.image, wide, cfg), training::ArchitectureMismatch);
    CHECK_THROWS_AS(training::joint_finetune(train, &ck.image, &ck.image, spec, cfg), training::ArchitectureMismatch);
    CHECK_THROWS_AS(training::joint_finetune(train, nullptr, &ck.image, spec, cfg), std::invalid_argument);
  }
}

TEST_CASE("architecture mismatch names the dimension") {
  Rng rng(1);
  auto ck = encoders::make_checkpoint(small_text(), encoders::init_text_encoder(small_text(), rng), {});
  auto other = small_text();
  other.width = 12;
  try {
    training::check_architecture(ck, other);
    FAIL("expected a mismatch");
  } catch (const training::ArchitectureMismatch& e) {
    CHECK(std::string(e.what()).find("width") != std::string::npos);
  }
  CHECK_NOTHROW(training::check_architecture(ck, small_text()));
}

TEST_CASE("memorizes a small training set") {
  training::ModelSpec spec;
  auto ck = fresh_checkpoints(spec, 11);
  auto train = samples(66, 5, 0.0, 0.0);
  train.resize(64);
  training::TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.seed = 2;
  auto r = training::joint_finetune(train, &ck.text, &ck.image, spec, cfg);
  std::size_t first_below = 0;
  for (std::size_t e = 0; e < r.history.losses.size() && !first_below; ++e)
    if (r.history.losses[e] < 0.05) first_below = e + 1;
  MESSAGE("loss below 0.05 at epoch " << first_below);
  CHECK(first_below > 0);
}
