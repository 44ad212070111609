#include <bit>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "jft/encoders/checkpoint.hpp"
#include "jft/fusion/fusion_model.hpp"
#include "jft/io/checkpoint_file.hpp"
#include "jft/io/config.hpp"
#include "test_util.hpp"

using namespace jft;
using jft::test::random_tensor;
using jft::test::to_vec;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "jft_io_test";
  fs::create_directories(dir);
  return dir / name;
}

void le32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string error_of(const auto& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

struct SeedEnv {
  explicit SeedEnv(const char* value) { setenv("JFT_SEED", value, 1); }
  ~SeedEnv() { unsetenv("JFT_SEED"); }
};

}  // namespace

TEST_CASE("checkpoint byte layout") {
  io::CheckpointFile f;
  f.config = "{}";
  f.tensors.push_back({"w", {2}, {1.0f, -2.5f}});
  f.tensors.push_back({"bias", {1, 1}, {0.25f}});

  std::string expected = "JFTM";
  expected += std::string("\x01\x00", 2);
  le32(expected, 2);
  expected += "{}";
  le32(expected, 1);
  expected += "w";
  expected.push_back('\x01');
  le32(expected, 2);
  le32(expected, std::bit_cast<std::uint32_t>(1.0f));
  le32(expected, std::bit_cast<std::uint32_t>(-2.5f));
  le32(expected, 4);
  expected += "bias";
  expected.push_back('\x02');
  le32(expected, 1);
  le32(expected, 1);
  le32(expected, std::bit_cast<std::uint32_t>(0.25f));

  const auto bytes = io::serialize(f);
  CHECK(bytes == expected);
  auto back = io::parse(bytes);
  CHECK(back.version == 1);
  CHECK(back.config == "{}");
  CHECK(back.tensors == f.tensors);
  CHECK(io::serialize(back) == bytes);

  SUBCASE("errors") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(error_of([&] { io::parse(bad); }).find("magic") != std::string::npos);
    bad = bytes;
    bad[4] = '\x02';
    CHECK(error_of([&] { io::parse(bad); }).find("version") != std::string::npos);
    // A cut on an entry boundary leaves a shorter but valid file.
    const std::size_t header = 12, first = header + 4 + 1 + 1 + 4 + 8;
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
      CAPTURE(cut);
      if (cut == header || cut == first) {
        CHECK(io::parse(bytes.substr(0, cut)).tensors.size() == (cut == header ? 0u : 1u));
      } else {
        CHECK_THROWS_AS(io::parse(bytes.substr(0, cut)), io::CheckpointError);
      }
    }
  }
}

TEST_CASE("encoder checkpoints round trip") {
  encoders::TextEncoderConfig tc;
  tc.width = 8;
  tc.blocks = 1;
  encoders::ImageEncoderConfig ic;
  ic.channels = {4, 8};
  Rng rng(6);
  auto text = encoders::make_checkpoint(tc, encoders::init_text_encoder(tc, rng), {"masked-token", 7, 3, 1.25});
  auto image = encoders::make_checkpoint(ic, encoders::init_image_encoder(ic, rng), {"pattern-4class", 8, 2, 0.5});
  auto tpath = temp_path("text.ckpt"), ipath = temp_path("image.ckpt");
  io::save_encoder(tpath, text);
  io::save_encoder(ipath, image);

  auto t2 = io::load_encoder(tpath);
  auto i2 = io::load_encoder(ipath);
  CHECK(t2.modality == encoders::Modality::text);
  CHECK(t2.text_config == tc);
  CHECK(t2.metadata == text.metadata);
  CHECK(i2.image_config == ic);
  CHECK(i2.metadata == image.metadata);

  std::vector<std::size_t> tokens{2, 9, 30, 4, 5};
  CHECK(to_vec(encoders::text_encode(tokens, *t2.text, tc)) == to_vec(encoders::text_encode(tokens, *text.text, tc)));
  auto img = random_tensor({1, 16, 16}, rng, 0.0, 1.0);
  CHECK(to_vec(encoders::image_encode(img, *i2.image, ic)) == to_vec(encoders::image_encode(img, *image.image, ic)));

  CHECK(io::serialize(io::parse(io::read_bytes(tpath))) == io::read_bytes(tpath));
  io::save_encoder(temp_path("text2.ckpt"), t2);
  CHECK(io::read_bytes(temp_path("text2.ckpt")) == io::read_bytes(tpath));

  SUBCASE("wrong kind and missing tensors") {
    CHECK_THROWS(io::load_model(tpath));
    auto file = io::parse(io::read_bytes(tpath));
    file.tensors.pop_back();
    io::write_bytes(temp_path("short.ckpt"), io::serialize(file));
    auto msg = error_of([&] { io::load_encoder(temp_path("short.ckpt")); });
    CHECK(msg.find("short.ckpt") != std::string::npos);
    CHECK_THROWS_AS(io::load_encoder(temp_path("absent.ckpt")), std::runtime_error);
  }
}

TEST_CASE("model checkpoints round trip") {
  encoders::TextEncoderConfig tc;
  tc.width = 8;
  tc.blocks = 1;
  encoders::ImageEncoderConfig ic;
  ic.channels = {4, 8};
  fusion::FusionConfig fc;
  fc.width = 8;
  fc.heads = 2;
  for (auto arch : {fusion::Architecture::text_only, fusion::Architecture::image_only, fusion::Architecture::concat,
                    fusion::Architecture::fusion}) {
    Rng rng(9);
    auto m = fusion::build_model(arch, fc, tc, ic, encoders::init_text_encoder(tc, rng),
                                 encoders::init_image_encoder(ic, rng), rng);
    fusion::visit(m, [](const std::string&, Tensor& t) { t = encoders::round_to_float(t); });
    auto path = temp_path("model.ckpt");
    io::save_model(path, m);
    auto back = io::load_model(path);
    CHECK(back.arch == arch);
    CHECK(back.config == fc);
    std::vector<std::vector<double>> a, b;
    fusion::visit(m, [&](const std::string&, const Tensor& t) { a.push_back(to_vec(t)); });
    fusion::visit(back, [&](const std::string&, const Tensor& t) { b.push_back(to_vec(t)); });
    CHECK(a == b);
    CHECK(fusion::param_count(back) == fusion::param_count(m));
  }
}

TEST_CASE("run config") {
  SUBCASE("defaults round trip") {
    io::RunConfig c;
    auto j = io::to_json(c);
    auto back = io::run_config_from_json(nlohmann::json::parse(j.dump()));
    CHECK(io::to_json(back).dump() == j.dump());
    CHECK(back.folds == 10);
    CHECK(back.seed == 42);
    CHECK(back.data.n == 3600);
    CHECK(back.data.p_text == 0.9);
    CHECK(back.data.p_image == 0.6);
    CHECK(back.train.min_epochs == 3);
    CHECK(back.train.batch_size == 16);
    CHECK(back.train.adam.learning_rate == 1e-3);
  }
  SUBCASE("partial documents fill defaults") {
    auto c = io::run_config_from_json(nlohmann::json::parse(R"({"train":{"max_epochs":7},"folds":5})"));
    CHECK(c.train.max_epochs == 7);
    CHECK(c.folds == 5);
    CHECK(c.train.batch_size == 16);
  }
  SUBCASE("strictness") {
    auto msg = error_of([] { io::run_config_from_json(nlohmann::json::parse(R"({"data":{"foo":1}})")); });
    CHECK(msg.find("foo") != std::string::npos);
    CHECK_THROWS_AS(io::run_config_from_json(nlohmann::json::parse(R"({"trian":{}})")), io::ConfigError);
    CHECK_THROWS_AS(io::run_config_from_json(nlohmann::json::parse(R"({"train":{"max_epochs":"x"}})")),
                    io::ConfigError);
    CHECK_THROWS_AS(io::run_config_from_json(nlohmann::json::parse(R"({"train":{"min_epochs":2}})")), io::ConfigError);
    CHECK_THROWS_AS(io::run_config_from_json(nlohmann::json::parse(R"({"data":{"classes":2}})")), io::ConfigError);
    CHECK_THROWS_AS(io::run_config_from_json(nlohmann::json::parse(R"({"folds":1})")), io::ConfigError);
  }
  SUBCASE("files and the seed override") {
    auto path = temp_path("config.json");
    std::ofstream(path) << R"({"seed": 5})";
    CHECK(io::load_run_config(path).seed == 5);
    {
      SeedEnv env("99");
      CHECK(io::load_run_config(path).seed == 99);
      CHECK(io::load_run_config({}).seed == 99);
    }
    {
      SeedEnv env("abc");
      CHECK_THROWS_AS(io::load_run_config(path), io::ConfigError);
    }
    CHECK(io::load_run_config({}).seed == 42);
    std::ofstream(path) << "{oops";
    CHECK_THROWS_AS(io::load_run_config(path), io::ConfigError);
    CHECK_THROWS_AS(io::load_run_config(temp_path("absent.json")), std::runtime_error);
  }
  SUBCASE("seed plan") {
    auto a = io::seed_plan(42), b = io::seed_plan(43);
    CHECK(a.text_corpus != a.image_corpus);
    CHECK(a.finetune(0) != a.finetune(1));
    CHECK(a.folds != b.folds);
    CHECK(io::seed_plan(42).finetune(3) == a.finetune(3));
  }
}
