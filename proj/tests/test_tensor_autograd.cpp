#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "xsfl/autograd.hpp"

using namespace xsfl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> vec(const Tensor& t) { return t.values(); }

}  // namespace

TEST_CASE("tensor construction validates shapes", "[tensor]") {
  CHECK_THROWS_AS(Tensor(Shape{}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 2) == 6);
  CHECK(t.reshaped({3, 2}).at(2, 1) == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("dense matches the naive loop", "[dense]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 1 + rng() % 9, out = 1 + rng() % 7;
    auto x = oracle::random_vector(rng, in), w = oracle::random_vector(rng, in * out), b = oracle::random_vector(rng, out);
    Tape tape;
    Var y = dense(tape.constant(Tensor({in}, x)), tape.constant(Tensor({out, in}, w)), tape.constant(Tensor({out}, b)));
    CHECK(oracle::max_rel_err(vec(y.value()), oracle::dense(x, w, b)) < 1e-12);
  }
  SECTION("identity weights, zero bias -> input") {
    Tape tape;
    Var y = dense(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor({2, 2}, {1, 0, 0, 1})),
                  tape.constant(Tensor({2})));
    CHECK(y.value() == Tensor::vector({1, 2}));
  }
  SECTION("shape mismatch") {
    Tape tape;
    CHECK_THROWS_AS(dense(tape.constant(Tensor({3})), tape.constant(Tensor({2, 2})), tape.constant(Tensor({2}))),
                    DimensionError);
  }
}

TEST_CASE("conv2d matches the naive six-loop oracle", "[conv2d]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t C = 1 + rng() % 3, H = 4 + rng() % 5, W = 4 + rng() % 5, K = 1 + rng() % 4;
    const std::size_t kh = 1 + rng() % 3, kw = 1 + rng() % 3, stride = 1 + rng() % 2;
    auto x = oracle::random_vector(rng, C * H * W), k = oracle::random_vector(rng, K * C * kh * kw);
    auto b = oracle::random_vector(rng, K);
    Tape tape;
    Var y = conv2d(tape.constant(Tensor({C, H, W}, x)), tape.constant(Tensor({K, C, kh, kw}, k)),
                   tape.constant(Tensor({K}, b)), stride);
    CHECK(oracle::max_rel_err(vec(y.value()), oracle::conv2d(x, C, H, W, k, K, kh, kw, stride, b)) < 1e-12);

    // Batched input gives the per-sample results stacked.
    auto x2 = oracle::random_vector(rng, C * H * W);
    std::vector<double> both = x;
    both.insert(both.end(), x2.begin(), x2.end());
    Var yb = conv2d(tape.constant(Tensor({2, C, H, W}, both)), tape.constant(Tensor({K, C, kh, kw}, k)), stride);
    auto expect = oracle::conv2d(x, C, H, W, k, K, kh, kw, stride);
    auto second = oracle::conv2d(x2, C, H, W, k, K, kh, kw, stride);
    expect.insert(expect.end(), second.begin(), second.end());
    CHECK(oracle::max_rel_err(vec(yb.value()), expect) < 1e-12);
  }
  SECTION("1x1 identity kernel on one channel -> input") {
    Tape tape;
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Var y = conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, {1.0})), 1);
    CHECK(y.value() == x);
  }
  SECTION("kernel larger than input") {
    Tape tape;
    CHECK_THROWS_AS(conv2d(tape.constant(Tensor({1, 2, 2})), tape.constant(Tensor({1, 1, 3, 3})), 1), DimensionError);
  }
}

TEST_CASE("cross-entropy matches the long-double oracle", "[ce]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng() % 5;
    auto z = oracle::random_vector(rng, m, -5, 5);
    const std::size_t label = rng() % m;
    CHECK(oracle::rel_err(softmax_cross_entropy(std::span<const double>(z), label), oracle::cross_entropy(z, label)) <
          1e-12);
  }
  CHECK_THAT(softmax_cross_entropy(std::vector<double>{0, 0}, 1), WithinRel(std::log(2.0), 1e-15));
  CHECK(softmax_cross_entropy(std::vector<double>{1000, 0}, 0) < 1e-300);
  CHECK(std::isfinite(softmax_cross_entropy(std::vector<double>{1000, -1000}, 1)));
  CHECK_THROWS_AS(softmax_cross_entropy(std::vector<double>{1, 2}, 2), IndexError);
}

TEST_CASE("leaky ReLU slope range", "[leaky]") {
  Tape tape;
  Var x = tape.constant(Tensor::vector({-2, 3}));
  CHECK(leaky_relu(x, 0.2).value() == Tensor::vector({-0.4, 3}));
  CHECK_THROWS_AS(leaky_relu(x, 0.0), ParameterError);
  CHECK_THROWS_AS(leaky_relu(x, 1.0), ParameterError);
  CHECK_THAT(leaky_relu(-1.0, 0.999), WithinAbs(-0.999, 1e-15));
}

TEST_CASE("backward semantics", "[tape]") {
  SECTION("constants get no gradient, unreached parameters get zeros") {
    Tape tape;
    Var a = tape.parameter("a", Tensor::vector({1, 2}));
    Var unused = tape.parameter("unused", Tensor::vector({5}));
    Var c = tape.constant(Tensor::vector({3, 4}));
    (void)unused;
    Var loss = sum(square(affine(a, 2.0, c.value())));
    auto g = tape.backward(loss);
    CHECK(g.size() == 2);
    // d/da sum (2a + c)^2 = 4 (2a + c)
    CHECK(g.at("a") == Tensor::vector({20, 32}));
    CHECK(g.at("unused") == Tensor::vector({0}));
  }
  SECTION("non-scalar loss") {
    Tape tape;
    Var a = tape.parameter("a", Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(square(a)), ContractError);
  }
  SECTION("grad_of a global sum is all ones") {
    Tape tape;
    Var x = tape.input(Tensor({2, 2, 2}));
    auto g = tape.grad_of(sum(x), x);
    CHECK(g == Tensor::full({2, 2, 2}, 1.0));
  }
  SECTION("grad_of an unreachable output") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1, 2}));
    Var y = tape.input(Tensor::vector({3}));
    Var q = sum(y);
    CHECK_THROWS_AS(tape.grad_of(q, x), ContractError);
  }
  SECTION("gradient accumulates over fan-out") {
    Tape tape;
    Var a = tape.parameter("a", Tensor::vector({3}));
    // y = a * a + 1 through dense(a, reshape(a), 1)
    Var y = dense(a, reshape(a, {1, 1}), tape.constant(Tensor::vector({1})));
    CHECK(y.value().item() == 10.0);
    auto g = tape.backward(y);
    CHECK(g.at("a")[0] == 6.0);
  }
}

// Randomized conv -> leaky -> dense -> CE networks; analytic gradients of
// parameters and input against central differences of an independent forward.
TEST_CASE("gradients match finite differences on random small networks", "[gradcheck]") {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t C = 1 + rng() % 2, H = 4 + rng() % 3, W = 4 + rng() % 3, K = 1 + rng() % 3;
    const std::size_t kh = 2 + rng() % 2, stride = 1 + rng() % 2, M = 2 + rng() % 3;
    const double slope = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
    const std::size_t oh = (H - kh) / stride + 1, ow = (W - kh) / stride + 1, flat = K * oh * ow;
    const std::size_t label = rng() % M;
    auto x = oracle::random_vector(rng, C * H * W);
    auto k = oracle::random_vector(rng, K * C * kh * kh);
    auto kb = oracle::random_vector(rng, K);
    auto w = oracle::random_vector(rng, M * flat);
    auto b = oracle::random_vector(rng, M);

    auto forward = [&](const std::vector<double>& xv, const std::vector<double>& kv, const std::vector<double>& kbv,
                       const std::vector<double>& wv, const std::vector<double>& bv) {
      auto h = oracle::conv2d(xv, C, H, W, kv, K, kh, kh, stride, kbv);
      for (auto& v : h) v = oracle::leaky(v, slope);
      return oracle::cross_entropy(oracle::dense(h, wv, bv), label);
    };

    Tape tape;
    Var xi = tape.input(Tensor({C, H, W}, x));
    Var kp = tape.parameter("k", Tensor({K, C, kh, kh}, k));
    Var kbp = tape.parameter("kb", Tensor({K}, kb));
    Var wp = tape.parameter("w", Tensor({M, flat}, w));
    Var bp = tape.parameter("b", Tensor({M}, b));
    Var loss = softmax_cross_entropy(dense(flatten(leaky_relu(conv2d(xi, kp, kbp, stride), slope)), wp, bp), label);
    CHECK_THAT(loss.value().item(), WithinAbs(forward(x, k, kb, w, b), 1e-12));
    auto g = tape.backward(loss);
    auto gx = tape.grad_of(loss, xi);

    const auto fk = oracle::fd_gradient([&](const std::vector<double>& v) { return forward(x, v, kb, w, b); }, k);
    const auto fkb = oracle::fd_gradient([&](const std::vector<double>& v) { return forward(x, k, v, w, b); }, kb);
    const auto fw = oracle::fd_gradient([&](const std::vector<double>& v) { return forward(x, k, kb, v, b); }, w);
    const auto fb = oracle::fd_gradient([&](const std::vector<double>& v) { return forward(x, k, kb, w, v); }, b);
    const auto fx = oracle::fd_gradient([&](const std::vector<double>& v) { return forward(v, k, kb, w, b); }, x);
    CHECK(oracle::rel_err(vec(g.at("k")), fk) < 1e-4);
    CHECK(oracle::rel_err(vec(g.at("kb")), fkb) < 1e-4);
    CHECK(oracle::rel_err(vec(g.at("w")), fw) < 1e-4);
    CHECK(oracle::rel_err(vec(g.at("b")), fb) < 1e-4);
    CHECK(oracle::rel_err(vec(gx), fx) < 1e-4);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("batched cross-entropy is the mean of per-row losses", "[ce]") {
  std::mt19937_64 rng(5);
  auto z = oracle::random_vector(rng, 3 * 4, -3, 3);
  std::vector<std::size_t> labels{0, 3, 2};
  Tape tape;
  Var zp = tape.parameter("z", Tensor({3, 4}, z));
  Var loss = softmax_cross_entropy(zp, std::span<const std::size_t>(labels));
  double mean = 0;
  for (std::size_t r = 0; r < 3; ++r)
    mean += oracle::cross_entropy(std::vector<double>(z.begin() + 4 * r, z.begin() + 4 * r + 4), labels[r]) / 3;
  CHECK(oracle::rel_err(loss.value().item(), mean) < 1e-12);
  auto g = tape.backward(loss);
  auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) {
        double m = 0;
        for (std::size_t r = 0; r < 3; ++r)
          m += oracle::cross_entropy(std::vector<double>(v.begin() + 4 * r, v.begin() + 4 * r + 4), labels[r]) / 3;
        return m;
      },
      z);
  CHECK(oracle::rel_err(vec(g.at("z")), fd) < 1e-6);
}

TEST_CASE("small worked examples", "[examples]") {
  Tape tape;
  CHECK(dense(tape.constant(Tensor::vector({1, 1})), tape.constant(Tensor({1, 2}, {2, 3})),
              tape.constant(Tensor::vector({1})))
            .value() == Tensor::vector({6}));
  CHECK(conv2d(tape.constant(Tensor::full({1, 2, 2}, 1)), tape.constant(Tensor::full({1, 1, 2, 2}, 1)), 1).value() ==
        Tensor({1, 1, 1}, {4.0}));
  CHECK(leaky_relu(5.0, 0.2) == 5.0);
  CHECK(leaky_relu(-1.0, 0.2) == -0.2);
  for (double s : {0.01, 0.5, 0.99}) CHECK(leaky_relu(0.0, s) == 0.0);

  Var w = tape.parameter("w", Tensor::vector({3}));
  CHECK(tape.backward(square(w)).at("w")[0] == 6.0);

  Tape t2;
  Var a = t2.input(Tensor({1, 2, 2}, {3, 1, 4, 1}));
  Tensor g = t2.grad_of(sum(square(element(a, 0))), a);
  CHECK(g == Tensor({1, 2, 2}, {6, 0, 0, 0}));
}

TEST_CASE("dense + leaky + CE gradient at step 1e-5", "[gradcheck]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 3 + rng() % 5, hid = 2 + rng() % 5, M = 2 + rng() % 3, label = rng() % M;
    auto x = oracle::random_vector(rng, in);
    auto w1 = oracle::random_vector(rng, hid * in), b1 = oracle::random_vector(rng, hid);
    auto w2 = oracle::random_vector(rng, M * hid), b2 = oracle::random_vector(rng, M);
    auto f = [&](const std::vector<double>& w1v) {
      auto h = oracle::dense(x, w1v, b1);
      for (auto& v : h) v = oracle::leaky(v, 0.1);
      return oracle::cross_entropy(oracle::dense(h, w2, b2), label);
    };
    Tape tape;
    Var p = tape.parameter("w1", Tensor({hid, in}, w1));
    Var z = dense(leaky_relu(dense(tape.constant(Tensor({in}, x)), p, tape.constant(Tensor({hid}, b1))), 0.1),
                  tape.constant(Tensor({M, hid}, w2)), tape.constant(Tensor({M}, b2)));
    auto g = tape.backward(softmax_cross_entropy(z, label));
    CHECK(oracle::rel_err(vec(g.at("w1")), oracle::fd_gradient(f, w1, 1e-5)) < 1e-6);
  }
}

TEST_CASE("forward is repeatable", "[tape]") {
  std::mt19937_64 rng(1);
  auto x = oracle::random_vector(rng, 2 * 6 * 6), k = oracle::random_vector(rng, 3 * 2 * 3 * 3);
  auto run = [&] {
    Tape tape;
    return conv2d(tape.constant(Tensor({2, 6, 6}, x)), tape.constant(Tensor({3, 2, 3, 3}, k)), 1).value();
  };
  CHECK(run() == run());
}
