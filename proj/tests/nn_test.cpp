#include <cmath>
#include <string>

#include "doctest.h"
#include "jft/autograd/grad_check.hpp"
#include "jft/autograd/ops.hpp"
#include "jft/nn/layers.hpp"
#include "test_util.hpp"

using namespace jft;
using jft::test::gather;
using jft::test::random_tensor;
using jft::test::scatter;
using jft::test::to_vec;

namespace {

auto visit_any = [](auto&& p, auto&& f) { nn::visit(p, "", f); };

// Per-head attention computed with plain loops.
std::vector<double> naive_attention(const std::vector<double>& x, std::size_t n, const nn::MhaParams& p,
                                    std::vector<double>* weights) {
  const std::size_t d = p.width(), h = p.heads, dh = p.head_width();
  auto proj = [&](const Tensor& w) {
    std::vector<double> out(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[i * d + j] += x[i * d + k] * w[k * d + j];
    return out;
  };
  auto q = proj(p.wq), k = proj(p.wk), v = proj(p.wv);
  std::vector<double> mixed(n * d, 0.0);
  weights->assign(h * n * n, 0.0);
  for (std::size_t head = 0; head < h; ++head)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i * d + head * dh + c] * k[j * d + head * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j) {
        double a = s[j] / z;
        (*weights)[(head * n + i) * n + j] = a;
        for (std::size_t c = 0; c < dh; ++c) mixed[i * d + head * dh + c] += a * v[j * d + head * dh + c];
      }
    }
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2) out[i * d + j] += mixed[i * d + k2] * p.wo[k2 * d + j];
  return out;
}

}  // namespace

TEST_CASE("linear_forward") {
  SUBCASE("identity weights") {
    nn::LinearParams p{Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})};
    Tensor x({3, 2}, {1, -2, 3, 4, 0.5, 6});
    CHECK(to_vec(nn::linear_forward(x, p)) == to_vec(x));
  }
  SUBCASE("bias add") {
    nn::LinearParams p{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {2, 3})};
    CHECK(to_vec(nn::linear_forward(Tensor({2}, {1, 1}), p)) == std::vector<double>{3, 4});
  }
  SUBCASE("random against loops") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      std::size_t b = 1 + rng.index(4), in = 1 + rng.index(5), out = 1 + rng.index(5);
      nn::LinearParams p{random_tensor({in, out}, rng), random_tensor({out}, rng)};
      auto x = random_tensor({b, in}, rng);
      auto y = nn::linear_forward(x, p);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < out; ++j) {
          double s = p.bias[j];
          for (std::size_t k = 0; k < in; ++k) s += x[i * in + k] * p.weight[k * out + j];
          CHECK(y[i * out + j] == doctest::Approx(s).epsilon(1e-12));
        }
    }
  }
  SUBCASE("width mismatch") {
    Rng rng(1);
    auto p = nn::init_linear(3, 2, rng);
    CHECK_THROWS_AS(nn::linear_forward(Tensor::zeros({2, 4}), p), ShapeError);
  }
}

TEST_CASE("init shapes and values") {
  Rng rng(5);
  auto lin = nn::init_linear(10, 6, rng);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double w : lin.weight.values()) CHECK(std::abs(w) <= bound);
  for (double b : lin.bias.values()) CHECK(b == 0.0);
  auto ln = nn::init_layer_norm(4);
  CHECK(to_vec(ln.gamma) == std::vector<double>(4, 1.0));
  CHECK(to_vec(ln.beta) == std::vector<double>(4, 0.0));
  auto block = nn::init_transformer_block(8, 2, rng);
  CHECK(block.expand.out() == nn::kFeedForwardRatio * 8);
  CHECK_THROWS(nn::init_mha(10, 3, rng));
}

TEST_CASE("param_count") {
  Rng rng(1);
  CHECK(nn::param_count(nn::init_linear(512, 128, rng)) == 65664);
  auto block = nn::init_transformer_block(48, 2, rng);
  const std::size_t d = 48;
  CHECK(nn::param_count(block) == 2 * (2 * d) + 4 * d * d + (d * 4 * d + 4 * d) + (4 * d * d + d));
  CHECK(nn::param_count(nn::init_mha(32, 4, rng)) == 4 * 32 * 32);
  CHECK(nn::param_count(nn::init_conv(8, 32, 3, rng)) == 32 * 8 * 9 + 32);
}

TEST_CASE("multi_head_attention") {
  Rng rng(11);
  SUBCASE("single token attends to itself") {
    auto p = nn::init_mha(8, 4, rng);
    auto out = nn::multi_head_attention(random_tensor({1, 8}, rng), p);
    CHECK(out.weights.shape() == Shape{4, 1, 1});
    for (double a : out.weights.values()) CHECK(a == 1.0);
  }
  SUBCASE("zero query and key weights give uniform attention") {
    auto p = nn::init_mha(8, 2, rng);
    p.wq = Tensor::zeros({8, 8});
    p.wk = Tensor::zeros({8, 8});
    auto x = random_tensor({3, 8}, rng);
    auto out = nn::multi_head_attention(x, p);
    for (double a : out.weights.values()) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    auto v = nn::linear_forward(x, nn::LinearParams{p.wv, Tensor::zeros({8})});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double m = (v[j] + v[8 + j] + v[16 + j]) / 3.0;
        CHECK(out.mixed[i * 8 + j] == doctest::Approx(m).epsilon(1e-12));
      }
  }
  SUBCASE("matches per-head loops") {
    for (int trial = 0; trial < 10; ++trial) {
      std::size_t heads = 1 + rng.index(3), n = 1 + rng.index(5), d = heads * (1 + rng.index(4));
      auto p = nn::init_mha(d, heads, rng);
      auto x = random_tensor({n, d}, rng);
      std::vector<double> weights;
      auto expected = naive_attention(to_vec(x), n, p, &weights);
      auto out = nn::multi_head_attention(x, p);
      for (std::size_t i = 0; i < expected.size(); ++i) CHECK(out.output[i] == doctest::Approx(expected[i]).epsilon(1e-10));
      for (std::size_t i = 0; i < weights.size(); ++i) CHECK(out.weights[i] == doctest::Approx(weights[i]).epsilon(1e-10));
    }
  }
  SUBCASE("rows sum to one and permutation equivariance") {
    auto p = nn::init_mha(12, 3, rng);
    auto x = random_tensor({4, 12}, rng, -3, 3);
    auto out = nn::multi_head_attention(x, p);
    for (std::size_t r = 0; r < 3 * 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        double a = out.weights[r * 4 + j];
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        s += a;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
    const std::size_t perm[] = {2, 0, 3, 1};
    std::vector<double> xp(48);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 12; ++j) xp[i * 12 + j] = x[perm[i] * 12 + j];
    auto outp = nn::multi_head_attention(Tensor({4, 12}, xp), p);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 12; ++j)
        CHECK(outp.output[i * 12 + j] == doctest::Approx(out.output[perm[i] * 12 + j]).epsilon(1e-12));
  }
  SUBCASE("batched equals per-sample") {
    auto p = nn::init_mha(8, 2, rng);
    auto x = random_tensor({3, 2, 8}, rng);
    auto batched = nn::multi_head_attention(x, p);
    for (std::size_t b = 0; b < 3; ++b) {
      auto one = nn::multi_head_attention(slice(x, 0, b, 1), p);
      for (std::size_t i = 0; i < 16; ++i) CHECK(batched.output[b * 16 + i] == doctest::Approx(one.output[i]).epsilon(1e-12));
    }
  }
  SUBCASE("width mismatch") {
    auto p = nn::init_mha(8, 2, rng);
    CHECK_THROWS_AS(nn::multi_head_attention(Tensor::zeros({2, 6}), p), ShapeError);
  }
}

TEST_CASE("transformer_block") {
  Rng rng(2);
  SUBCASE("zero parameters pass the input through") {
    auto p = nn::init_transformer_block(8, 2, rng);
    nn::visit(p, "", [](const std::string& name, Tensor& t) {
      if (name.find("gamma") == std::string::npos) t = Tensor::zeros(t.shape());
    });
    auto x = random_tensor({5, 8}, rng);
    CHECK(to_vec(nn::transformer_block(x, p)) == to_vec(x));
  }
  SUBCASE("shape preserved") {
    auto p = nn::init_transformer_block(12, 3, rng);
    for (std::size_t n = 1; n <= 16; n += 5) CHECK(nn::transformer_block(random_tensor({n, 12}, rng), p).shape() == Shape{n, 12});
  }
}

TEST_CASE("conv_block") {
  Rng rng(4);
  SUBCASE("zero kernel and bias give zeros") {
    nn::ConvParams p{Tensor::zeros({4, 1, 3, 3}), Tensor::zeros({4})};
    auto y = nn::conv_block(random_tensor({1, 16, 16}, rng), p);
    CHECK(y.shape() == Shape{4, 7, 7});
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("matches sliding window oracle") {
    auto p = nn::init_conv(2, 3, 3, rng);
    p.bias = random_tensor({3}, rng);
    auto x = random_tensor({2, 9, 8}, rng);
    auto y = nn::conv_block(x, p);
    REQUIRE(y.shape() == Shape{3, 3, 3});
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          double best = -1e300;
          for (std::size_t dr = 0; dr < 2; ++dr)
            for (std::size_t dc = 0; dc < 2; ++dc) {
              double s = p.bias[o];
              for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t ki = 0; ki < 3; ++ki)
                  for (std::size_t kj = 0; kj < 3; ++kj)
                    s += p.weight[((o * 2 + i) * 3 + ki) * 3 + kj] * x[(i * 9 + 2 * r + dr + ki) * 8 + 2 * c + dc + kj];
              best = std::max(best, std::max(s, 0.0));
            }
          CHECK(y[(o * 3 + r) * 3 + c] == doctest::Approx(best).epsilon(1e-12));
        }
  }
  SUBCASE("kernel larger than input") {
    auto p = nn::init_conv(1, 2, 5, rng);
    CHECK_THROWS_AS(nn::conv_block(Tensor::zeros({1, 4, 4}), p), ShapeError);
  }
}

TEST_CASE("layer gradients over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    CAPTURE(seed);
    {
      auto p = nn::init_linear(4, 3, rng);
      p.bias = random_tensor({3}, rng);
      auto x = random_tensor({2, 4}, rng);
      auto inputs = gather(p, visit_any);
      inputs.push_back(x);
      auto f = [&](std::span<const Tensor> in) {
        auto q = scatter(p, in.first(2), visit_any);
        return sum(mul(nn::linear_forward(in[2], q), nn::linear_forward(in[2], q)));
      };
      CHECK(grad_check(f, inputs) < 1e-4);
    }
    {
      auto p = nn::init_mha(6, 2, rng);
      auto x = random_tensor({3, 6}, rng);
      auto target = random_tensor({3, 6}, rng);
      auto inputs = gather(p, visit_any);
      inputs.push_back(x);
      auto f = [&](std::span<const Tensor> in) {
        auto q = scatter(p, in.first(4), visit_any);
        return sum(mul(nn::multi_head_attention(in[4], q).output, target));
      };
      CHECK(grad_check(f, inputs) < 1e-4);
    }
    {
      auto p = nn::init_transformer_block(4, 2, rng);
      nn::visit(p, "", [&](const std::string&, Tensor& t) { t = random_tensor(t.shape(), rng, -0.5, 0.5); });
      auto x = random_tensor({3, 4}, rng);
      auto target = random_tensor({3, 4}, rng);
      auto inputs = gather(p, visit_any);
      inputs.push_back(x);
      const std::size_t np = inputs.size() - 1;
      auto f = [&](std::span<const Tensor> in) {
        auto q = scatter(p, in.first(np), visit_any);
        return sum(mul(nn::transformer_block(in[np], q), target));
      };
      CHECK(grad_check(f, inputs) < 1e-3);
    }
    {
      auto p = nn::init_conv(2, 2, 3, rng);
      p.bias = random_tensor({2}, rng);
      auto x = random_tensor({2, 6, 6}, rng);
      auto target = random_tensor({2, 2, 2}, rng);
      auto inputs = gather(p, visit_any);
      inputs.push_back(x);
      auto f = [&](std::span<const Tensor> in) {
        auto q = scatter(p, in.first(2), visit_any);
        return sum(mul(nn::conv_block(in[2], q), target));
      };
      CHECK(grad_check(f, inputs) < 1e-3);
    }
  }
}
