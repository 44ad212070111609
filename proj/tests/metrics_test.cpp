#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "jft/data/dataset.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/metrics/metrics.hpp"
#include "test_util.hpp"

using namespace jft;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<std::size_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

std::vector<double> random_probs(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<double> p(n * classes);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += p[i * classes + c] = rng.uniform(0.01, 1.0);
    for (std::size_t c = 0; c < classes; ++c) p[i * classes + c] /= total;
  }
  return p;
}

std::vector<std::size_t> covering_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i < classes ? i : rng.index(classes);
  return y;
}

fusion::FusionModel small_model(fusion::Architecture arch, std::uint64_t seed) {
  encoders::TextEncoderConfig tc;
  tc.width = 8;
  tc.blocks = 1;
  encoders::ImageEncoderConfig ic;
  ic.channels = {4, 8};
  fusion::FusionConfig fc;
  fc.width = 8;
  fc.heads = 2;
  Rng rng(seed);
  auto text = encoders::init_text_encoder(tc, rng);
  auto image = encoders::init_image_encoder(ic, rng);
  return fusion::build_model(arch, fc, tc, ic, text, image, rng);
}

std::vector<data::PairedSample> balanced(std::size_t n) {
  data::GeneratorSpec g;
  g.n = n;
  g.seed = 12;
  return data::generate_paired_dataset(g).samples;
}

}  // namespace

TEST_CASE("auc_binary examples") {
  CHECK(metrics::auc_binary(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<std::size_t>{1, 1, 0, 0}) == 1.0);
  CHECK(metrics::auc_binary(std::vector<double>{0.5, 0.5}, std::vector<std::size_t>{1, 0}) == 0.5);
  CHECK(metrics::auc_binary(std::vector<double>{0.8, 0.6, 0.4}, std::vector<std::size_t>{1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(metrics::auc_binary(std::vector<double>{0.1, 0.2}, std::vector<std::size_t>{1, 1}),
                  metrics::MetricError);
  CHECK_THROWS_AS(metrics::auc_binary(std::vector<double>{0.1, 0.2}, std::vector<std::size_t>{1, 2}),
                  metrics::MetricError);
}

TEST_CASE("auc_binary against the pairwise oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(49);
    std::vector<double> s(n);
    std::vector<std::size_t> y(n);
    // Coarse grid so that ties are common.
    for (auto& v : s) v = static_cast<double>(rng.index(8)) / 8.0;
    for (std::size_t i = 0; i < n; ++i) y[i] = i < 2 ? i : rng.index(2);
    CAPTURE(trial);
    CHECK(metrics::auc_binary(s, y) == pairwise_auc(s, y));
  }
}

TEST_CASE("auc_binary invariances") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng.index(40);
    std::vector<double> s(n);
    std::vector<std::size_t> y(n), flipped(n);
    for (auto& v : s) v = rng.uniform(-3.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < 2 ? i : rng.index(2);
      flipped[i] = 1 - y[i];
    }
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(2.0 * s[i]) + 7.0;
    const double a = metrics::auc_binary(s, y);
    CHECK(metrics::auc_binary(t, y) == a);
    CHECK(metrics::auc_binary(s, flipped) == doctest::Approx(1.0 - a).epsilon(1e-12));
  }
}

TEST_CASE("auc_macro_ovr") {
  Rng rng(3);
  SUBCASE("brute force per class") {
    for (int trial = 0; trial < 100; ++trial) {
      auto probs = random_probs(rng, 20, 3);
      auto y = covering_labels(rng, 20, 3);
      double expected = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> s(20);
        std::vector<std::size_t> one(20);
        for (std::size_t i = 0; i < 20; ++i) {
          s[i] = probs[i * 3 + c];
          one[i] = y[i] == c;
        }
        expected += pairwise_auc(s, one) / 3.0;
      }
      CHECK(metrics::auc_macro_ovr(probs, 3, y) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("two classes reduce to the binary AUC") {
    auto probs = random_probs(rng, 30, 2);
    auto y = covering_labels(rng, 30, 2);
    std::vector<double> col(30);
    for (std::size_t i = 0; i < 30; ++i) col[i] = probs[i * 2 + 1];
    CHECK(metrics::auc_macro_ovr(probs, 2, y) == metrics::auc_binary(col, y));
  }
  SUBCASE("one-hot predictions") {
    std::vector<std::size_t> y{0, 1, 2, 2, 1, 0};
    std::vector<double> probs(18, 0.0);
    for (std::size_t i = 0; i < 6; ++i) probs[i * 3 + y[i]] = 1.0;
    CHECK(metrics::auc_macro_ovr(probs, 3, y) == 1.0);
  }
  SUBCASE("label-independent scores") {
    auto probs = random_probs(rng, 2000, 3);
    auto y = covering_labels(rng, 2000, 3);
    const double auc = metrics::auc_macro_ovr(probs, 3, y);
    CHECK(std::abs(auc - 0.5) <= 0.03);
  }
  SUBCASE("malformed input") {
    std::vector<double> bad{0.5, 0.6, 0.0, 0.2, 0.3, 0.5, 0.3, 0.3, 0.4};
    CHECK_THROWS_AS(metrics::auc_macro_ovr(bad, 3, std::vector<std::size_t>{0, 1, 2}), metrics::MetricError);
    auto probs = random_probs(rng, 4, 3);
    CHECK_THROWS_AS(metrics::auc_macro_ovr(probs, 3, std::vector<std::size_t>{0, 1, 1, 0}), metrics::MetricError);
  }
}

TEST_CASE("evaluate") {
  auto samples = balanced(60);
  SUBCASE("a model that always predicts class 0") {
    auto model = small_model(fusion::Architecture::text_only, 1);
    model.head.weight = Tensor::zeros(model.head.weight.shape());
    model.head.bias = Tensor::vector({10.0, 0.0, 0.0});
    auto r = metrics::evaluate(model, samples, fusion::Architecture::text_only);
    CHECK(r.accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(r.auc == 0.5);
    CHECK(r.samples == 60);
    CHECK_FALSE(r.text_share.has_value());
  }
  SUBCASE("shares only in fusion mode") {
    for (auto arch : {fusion::Architecture::text_only, fusion::Architecture::image_only, fusion::Architecture::concat,
                      fusion::Architecture::fusion}) {
      auto model = small_model(arch, 2);
      auto r = metrics::evaluate(model, samples, arch);
      CHECK((r.auc >= 0.0 && r.auc <= 1.0));
      CHECK((r.accuracy >= 0.0 && r.accuracy <= 1.0));
      CHECK(r.mean_loss > 0.0);
      CHECK(r.text_share.has_value() == (arch == fusion::Architecture::fusion));
      CHECK(r.image_share.has_value() == (arch == fusion::Architecture::fusion));
      if (r.text_share) CHECK(*r.text_share + *r.image_share == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("pure") {
    auto model = small_model(fusion::Architecture::fusion, 3);
    auto a = metrics::evaluate(model, samples, fusion::Architecture::fusion);
    auto b = metrics::evaluate(model, samples, fusion::Architecture::fusion);
    CHECK(a.auc == b.auc);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.mean_loss == b.mean_loss);
    CHECK(*a.text_share == *b.text_share);
  }
  SUBCASE("mode mismatch") {
    auto model = small_model(fusion::Architecture::concat, 4);
    CHECK_THROWS_AS(metrics::evaluate(model, samples, fusion::Architecture::fusion), metrics::ModeMismatch);
  }
}

TEST_CASE("aggregate") {
  auto folds_of = [](std::vector<double> aucs) {
    std::vector<metrics::EvalResult> out;
    for (double a : aucs) out.push_back({.auc = a, .text_share = {}, .image_share = {}});
    return out;
  };
  auto same = metrics::aggregate("m", folds_of({0.7, 0.7, 0.7}));
  CHECK(same.mean == doctest::Approx(0.7));
  CHECK(same.std == 0.0);
  auto two = metrics::aggregate("m", folds_of({0.8, 0.6}));
  CHECK(two.mean == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(two.std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(metrics::aggregate("m", folds_of({0.8})), std::invalid_argument);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(10);
    for (double& v : a) v = rng.uniform();
    double mean = 0.0;
    for (double v : a) mean += v;
    mean /= 10.0;
    double ss = 0.0;
    for (double v : a) ss += (v - mean) * (v - mean);
    auto r = metrics::aggregate("m", folds_of(a));
    CHECK(r.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.std == doctest::Approx(std::sqrt(ss / 10.0)).epsilon(1e-12));
    CHECK(r.std >= 0.0);
  }
}

TEST_CASE("reports") {
  std::vector<metrics::EvalResult> fa(2);
  fa[0].auc = 0.9;
  fa[0].accuracy = 0.8;
  fa[1].auc = 0.7;
  fa[1].accuracy = 0.6;
  std::vector<metrics::EvalResult> fb{{.auc = 0.95, .accuracy = 0.9, .mean_loss = 0.2, .text_share = 0.6,
                                       .image_share = 0.4, .samples = 10},
                                      {.auc = 0.85, .accuracy = 0.8, .mean_loss = 0.4, .text_share = 0.7,
                                       .image_share = 0.3, .samples = 10}};
  std::vector<metrics::RunReport> reports{metrics::aggregate("alpha", fa, 100), metrics::aggregate("beta", fb, 120)};

  auto j = nlohmann::json::parse(metrics::report_json(reports));
  CHECK(j.size() == 2);
  CHECK(j["alpha"]["mean"].get<double>() == doctest::Approx(0.8));
  CHECK(j["alpha"]["std"].get<double>() == doctest::Approx(0.1));
  CHECK(j["alpha"]["folds"].size() == 2);
  CHECK_FALSE(j["alpha"]["folds"][0].contains("text_share"));
  CHECK(j["beta"]["folds"][1]["text_share"].get<double>() == doctest::Approx(0.7));
  CHECK(j["beta"]["params"] == 120);

  auto table = metrics::report_table(reports);
  std::vector<std::string> lines;
  for (std::size_t pos = 0, next; pos < table.size(); pos = next + 1) {
    next = table.find('\n', pos);
    if (next == std::string::npos) next = table.size();
    lines.push_back(table.substr(pos, next - pos));
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].find("population standard deviation") != std::string::npos);
  CHECK(lines[1].find("Method") == 0);
  for (const char* col : {"Mean", "Std", "Params"}) CHECK(lines[1].find(col) != std::string::npos);
  CHECK(lines[2].find("beta") == 0);
  CHECK(lines[3].find("alpha") == 0);
  CHECK(lines[2].size() == lines[3].size());
}
