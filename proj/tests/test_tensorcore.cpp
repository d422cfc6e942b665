#include <doctest.h>

#include <cmath>
#include <limits>

#include "spiro/adam.hpp"
#include "spiro/errors.hpp"
#include "support.hpp"

using namespace spiro;
using namespace spiro::tc;
using spiro::testing::max_grad_error;
using spiro::testing::random_tensor;

namespace {

std::vector<bool> random_mask(std::size_t len, Rng& rng) {
  std::vector<bool> mask(len, false);
  std::bernoulli_distribution coin(0.3);
  for (std::size_t j = 1; j < len; ++j) mask[j] = coin(rng);
  return mask;
}

}  // namespace

TEST_SUITE("tensorcore") {

TEST_CASE("linear with identity weight and zero bias returns the input") {
  Var x = Var::constant(Tensor::matrix(2, 3, {1, 2, 3, -4, 5, 6}));
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Var y = linear(x, Var::constant(eye), Var::constant(Tensor({3}, 0.0)));
  CHECK(y.value() == x.value());
}

TEST_CASE("linear hand-evaluated 2x2 case") {
  Var y = linear(Var::constant(Tensor::vector({1, 2})),
                 Var::constant(Tensor::matrix(2, 2, {1, 1, 0, 1})),
                 Var::constant(Tensor::vector({1, 0})));
  REQUIRE(y.value().size() == 2);
  CHECK(y.value()[0] == 4.0);
  CHECK(y.value()[1] == 2.0);
}

TEST_CASE("linear shape mismatch names both shapes") {
  Var x = Var::constant(Tensor({3}, 1.0));
  Var w = Var::constant(Tensor({2, 4}, 1.0));
  try {
    linear(x, w, Var{});
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
    const std::string msg = e.what();
    CHECK(msg.find("[3]") != std::string::npos);
    CHECK(msg.find("[2,4]") != std::string::npos);
  }
}

TEST_CASE("linear gradients match central differences") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 3, in = 2 + trial % 4, out = 1 + trial % 3;
    Var x = Var::parameter(random_tensor({rows, in}, rng));
    Var w = Var::parameter(random_tensor({out, in}, rng));
    Var b = Var::parameter(random_tensor({out}, rng));
    const Tensor probe = random_tensor({rows, out}, rng);
    worst = std::max(worst, max_grad_error({x, w, b}, [&] {
                       return weighted_sum(linear(x, w, b), probe);
                     }));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("attention over a single token returns V and weight one") {
  Var q = Var::constant(Tensor::matrix(1, 4, {0.3, -1, 2, 0.5}));
  Var v = Var::constant(Tensor::matrix(1, 4, {7, 8, 9, 10}));
  AttentionResult r = masked_multi_head_attention(q, q, v, {false}, 2);
  CHECK(r.output.value() == v.value());
  REQUIRE(r.attention.shape() == Shape{2, 1, 1});
  CHECK(r.attention[0] == 1.0);
  CHECK(r.attention[1] == 1.0);
}

TEST_CASE("masked keys receive exactly zero attention and rows sum to one") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 2 + trial % 6;
    Var q = Var::constant(random_tensor({len, 8}, rng, 3.0));
    Var k = Var::constant(random_tensor({len, 8}, rng, 3.0));
    Var v = Var::constant(random_tensor({len, 8}, rng));
    const auto mask = random_mask(len, rng);
    AttentionResult r = masked_multi_head_attention(q, k, v, mask, 2);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          const double a = r.attention[(h * len + i) * len + j];
          if (mask[j]) CHECK(a == 0.0);
          CHECK(a >= 0.0);
          sum += a;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("attention with every key masked is a degenerate error") {
  Var q = Var::constant(Tensor({2, 4}, 1.0));
  CHECK_THROWS_AS(masked_multi_head_attention(q, q, q, {true, true}, 2), Error);
}

TEST_CASE("attention gradients match central differences") {
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Var q = Var::parameter(random_tensor({4, 8}, rng));
    Var k = Var::parameter(random_tensor({4, 8}, rng));
    Var v = Var::parameter(random_tensor({4, 8}, rng));
    const auto mask = random_mask(4, rng);
    const Tensor probe = random_tensor({4, 8}, rng);
    worst = std::max(worst, max_grad_error({q, k, v}, [&] {
                       return weighted_sum(masked_multi_head_attention(q, k, v, mask, 2).output,
                                           probe);
                     }));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("layer_norm of a constant row is zero") {
  Var x = Var::constant(Tensor::vector({3, 3, 3, 3}));
  Var y = layer_norm(x, Var::constant(Tensor({4}, 1.0)), Var::constant(Tensor({4}, 0.0)));
  for (double v : y.value().values()) CHECK(v == 0.0);
}

TEST_CASE("layer_norm leaves an already normalized row alone") {
  Var x = Var::constant(Tensor::vector({1, -1}));
  Var y = layer_norm(x, Var::constant(Tensor({2}, 1.0)), Var::constant(Tensor({2}, 0.0)), 1e-14);
  CHECK(y.value()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.value()[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm gradients match central differences") {
  Rng rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 3, d = 2 + trial % 5;
    Var x = Var::parameter(random_tensor({rows, d}, rng));
    Var g = Var::parameter(random_tensor({d}, rng));
    Var b = Var::parameter(random_tensor({d}, rng));
    const Tensor probe = random_tensor({rows, d}, rng);
    worst = std::max(worst, max_grad_error({x, g, b}, [&] {
                       return weighted_sum(layer_norm(x, g, b), probe);
                     }));
  }
  // d = 2 rows with tiny variance are where the difference quotient suffers.
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln 2") {
  Var l = softmax_cross_entropy(Var::constant(Tensor::vector({0, 0})), 0);
  CHECK(l.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("softmax cross-entropy stays finite for huge logits") {
  Var l = softmax_cross_entropy(Var::constant(Tensor::vector({1000, 0})), 0);
  CHECK(std::isfinite(l.value().item()));
  CHECK(l.value().item() < 1e-9);
  Var l2 = softmax_cross_entropy(Var::constant(Tensor::vector({1000, 0})), 1);
  CHECK(l2.value().item() == doctest::Approx(1000.0));
}

TEST_CASE("softmax cross-entropy gradient is softmax minus one-hot") {
  Rng rng(29);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 2 + trial % 4;
    Var z = Var::parameter(random_tensor({c}, rng, 2.0));
    const std::size_t label = trial % c;
    backward(softmax_cross_entropy(z, label));
    const Tensor g = z.grad();
    double mx = -1e300, total = 0.0;
    for (double v : z.value().values()) mx = std::max(mx, v);
    for (double v : z.value().values()) total += std::exp(v - mx);
    for (std::size_t i = 0; i < c; ++i) {
      const double expected = std::exp(z.value()[i] - mx) / total - (i == label ? 1.0 : 0.0);
      worst = std::max(worst, std::abs(g[i] - expected));
    }
    const double fd = max_grad_error({z}, [&] { return softmax_cross_entropy(z, label); });
    CHECK(fd < 1e-6);
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("softmax cross-entropy rejects an out-of-range label") {
  CHECK_THROWS_AS(softmax_cross_entropy(Var::constant(Tensor::vector({0, 0})), 2), Error);
}

TEST_CASE("binary cross-entropy equals two-class softmax on [0, z]") {
  for (double z : {-30.0, -2.0, 0.0, 0.7, 40.0}) {
    for (int y : {0, 1}) {
      const double a = sigmoid_cross_entropy(Var::constant(Tensor::scalar(z)), y).value().item();
      const double b =
          softmax_cross_entropy(Var::constant(Tensor::vector({0, z})), static_cast<std::size_t>(y))
              .value()
              .item();
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }
}

TEST_CASE("remaining kernels pass central-difference checks") {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Var a = Var::parameter(random_tensor({3, 4}, rng));
    Var b = Var::parameter(random_tensor({3, 4}, rng));
    Var z = Var::parameter(random_tensor({5}, rng, 2.0));
    const Tensor probe = random_tensor({3, 4}, rng);
    const Tensor probe_rows = random_tensor({4, 4}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back((trial + i) % 2);
    worst = std::max(worst, max_grad_error({a, b}, [&] {
                       return weighted_sum(gelu(add(a, scale(b, -0.7))), probe);
                     }));
    worst = std::max(worst, max_grad_error({a, b}, [&] {
                       Var stacked = concat_rows({a, row(b, 1)});
                       return weighted_sum(gather_rows(stacked, {3, 0, 0, 2}), probe_rows);
                     }));
    worst = std::max(worst, max_grad_error({z}, [&] {
                       return sigmoid_cross_entropy_mean(z, labels);
                     }));
    worst = std::max(worst, max_grad_error({z}, [&] {
                       return sigmoid_cross_entropy(
                           weighted_sum(row(concat_rows({z}), 0), Tensor::vector({0.3, -0.2, 0.5, 0.1, -0.4})),
                           labels[0]);
                     }));
    Rng drop_seed(static_cast<std::uint64_t>(trial));
    worst = std::max(worst, max_grad_error({a}, [&] {
                       Rng local = drop_seed;  // same mask on every evaluation
                       return weighted_sum(dropout(a, 0.3, local), probe);
                     }));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("dropout with p = 0 is the identity and p outside [0,1) is rejected") {
  Rng rng(1);
  Var x = Var::constant(Tensor::vector({1, 2, 3}));
  CHECK(dropout(x, 0.0, rng).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, rng), Error);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  Var x = Var::parameter(Tensor::scalar(3.0));
  backward(add(x, x));
  CHECK(x.grad().item() == 2.0);
  Var y = Var::parameter(Tensor::vector({1.5, -2.0}));
  Var sq = weighted_sum(add(y, y), Tensor::vector({1, 1}));
  backward(add(sq, weighted_sum(y, Tensor::vector({1, 1}))));
  CHECK(y.grad()[0] == 3.0);
  CHECK(y.grad()[1] == 3.0);
}

TEST_CASE("kernels stay finite across input magnitudes") {
  Rng rng(37);
  for (double mag : {1e-6, 1e-3, 1.0, 1e2, 1e3}) {
    Var x = Var::parameter(random_tensor({3, 4}, rng, mag));
    Var w = Var::parameter(random_tensor({4, 4}, rng, 1.0));
    Var g = Var::constant(Tensor({4}, 1.0));
    Var b = Var::constant(Tensor({4}, 0.0));
    Var h = layer_norm(gelu(linear(x, w, b)), g, b);
    AttentionResult att = masked_multi_head_attention(h, h, h, {false, false, true}, 2);
    Var probe = weighted_sum(att.output, random_tensor({3, 4}, rng));
    Var loss = add(probe, sigmoid_cross_entropy(row(concat_rows({probe}), 0), 1));
    backward(loss);
    CHECK(loss.value().all_finite());
    CHECK(att.attention.all_finite());
    CHECK(x.grad().all_finite());
    CHECK(w.grad().all_finite());
  }
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  std::vector<Var> params{Var::parameter(Tensor::vector({1, -2, 3}))};
  AdamState st = make_adam_state(params);
  params[0].grad_storage().fill(0.0);
  const Tensor before = params[0].value();
  adam_step(params, st, 0.1);
  CHECK(params[0].value() == before);
  CHECK(st.step_count == 1);
}

TEST_CASE("adam first step moves each weight by lr g / (|g| + eps)") {
  std::vector<Var> params{Var::parameter(Tensor::vector({0.5, 0.5, 0.5}))};
  AdamState st = make_adam_state(params);
  const std::vector<double> g{0.3, -2e-9, 4.0};
  for (std::size_t i = 0; i < 3; ++i) params[0].grad_storage()[i] = g[i];
  const double lr = 0.01;
  adam_step(params, st, lr);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = 0.5 - lr * g[i] / (std::abs(g[i]) + st.eps);
    CHECK(params[0].value()[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adam converges on a quadratic bowl") {
  std::vector<Var> params{Var::parameter(Tensor::scalar(1.0))};
  AdamState st = make_adam_state(params);
  for (int step = 0; step < 200; ++step) {
    zero_grads(params);
    const double w = params[0].value().item();
    params[0].grad_storage()[0] = 2.0 * w;
    adam_step(params, st, 0.1);
  }
  CHECK(std::abs(params[0].value().item()) < 1e-2);
  CHECK(st.step_count == 200);
}

TEST_CASE("adam refuses non-finite gradients and names the tensor") {
  std::vector<Var> params{Var::parameter(Tensor::vector({1, 2}))};
  AdamState st = make_adam_state(params);
  params[0].grad_storage()[1] = std::numeric_limits<double>::quiet_NaN();
  const Tensor before = params[0].value();
  try {
    adam_step(params, st, 0.1, {"weights"});
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("weights") != std::string::npos);
  }
  CHECK(params[0].value() == before);
  CHECK(st.step_count == 0);
}

}  // TEST_SUITE
