#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "selfboost/ops.hpp"
#include "test_support.hpp"

using namespace selfboost;
using testutil::random_tensor;

namespace {

// Scalar half-pixel bilinear sample of a single H x W plane.
double bilinear_sample(const std::vector<double>& plane, std::size_t H, std::size_t W, std::size_t oi, std::size_t oj) {
  auto coord = [](std::size_t o, std::size_t n) {
    double c = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(n - 1));
  };
  const double y = coord(oi, H), x = coord(oj, W);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  auto at = [&](std::size_t r, std::size_t c) { return plane[r * W + c]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST_CASE("tensor length must equal the shape product") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), DimensionError);
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
}

TEST_CASE("conv2d identity kernel and zero input") {
  Tape<double> tape;
  auto x = random_tensor({2, 1, 4, 5}, 1);
  auto id = tape.constant(Tensor<double>({1, 1, 1, 1}, {1.0}));
  auto y = conv2d(tape.constant(x), id, tape.constant(Tensor<double>({1})), {1, 0});
  CHECK(y.value() == x);

  auto zero = tape.constant(Tensor<double>({1, 3, 6, 6}));
  auto k = tape.constant(random_tensor({4, 3, 3, 3}, 2));
  auto z = conv2d(zero, k, tape.constant(Tensor<double>({4})), {1, 1});
  for (auto v : z.value().data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches the sextuple-loop oracle") {
  Tape<double> tape;
  auto x = random_tensor({1, 2, 5, 5}, 3);
  auto k = random_tensor({3, 2, 3, 3}, 4);
  auto b = random_tensor({3}, 5);
  const std::vector<double> bias(b.data().begin(), b.data().end());
  for (std::size_t stride : {1, 2}) {
    for (std::size_t pad : {0, 1, 2}) {
      auto y = conv2d(tape.constant(x), tape.constant(k), tape.constant(b), {stride, pad});
      auto ref = testutil::naive_conv(x, k, bias, stride, pad);
      REQUIRE(y.shape() == ref.shape());
      CHECK(testutil::max_abs_diff(y.value(), ref) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d shape errors") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 2, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<double>({3, 3, 3, 3})), {1, 1}), DimensionError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<double>({3, 2, 3, 3})), tape.constant(Tensor<double>({2})), {1, 1}),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor<double>({3, 2, 3, 3})), {0, 1}), Error);
}

TEST_CASE("conv2d reports non-finite results") {
  Tape<double> tape;
  Tensor<double> x({1, 1, 2, 2}, 1.0);
  x.mutable_data()[0] = std::numeric_limits<double>::infinity();
  auto k = tape.constant(Tensor<double>({1, 1, 1, 1}, {-1.0}));
  CHECK_THROWS_AS(add(conv2d(tape.constant(x), k, {1, 0}), tape.constant(x)), NumericError);
}

TEST_CASE("bilinear upsample of constants and single samples") {
  Tape<double> tape;
  auto c = upsample_bilinear2x(tape.constant(Tensor<double>({2, 3, 3, 5}, 1.75)));
  CHECK(c.shape() == Shape{2, 3, 6, 10});
  for (auto v : c.value().data()) CHECK(v == doctest::Approx(1.75).epsilon(1e-15));

  auto s = upsample_bilinear2x(tape.constant(Tensor<double>({1, 1, 1, 1}, {-2.5})));
  CHECK(s.shape() == Shape{1, 1, 2, 2});
  for (auto v : s.value().data()) CHECK(v == -2.5);
}

TEST_CASE("bilinear upsample 2x2 against the scalar interpolation oracle") {
  Tape<double> tape;
  const std::vector<double> plane{0, 1, 2, 3};
  auto up = upsample_bilinear2x(tape.constant(Tensor<double>({1, 1, 2, 2}, plane)));
  // Frozen output of bilinear_sample for this plane.
  const std::vector<double> frozen{0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5,
                                   1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double v = up.value()[i * 4 + j];
      CHECK(std::abs(v - bilinear_sample(plane, 2, 2, i, j)) <= 1e-12);
      CHECK(std::abs(v - frozen[i * 4 + j]) <= 1e-12);
    }
}

TEST_CASE("bilinear upsample on a random plane matches the oracle") {
  Tape<double> tape;
  auto x = random_tensor({1, 1, 3, 5}, 9);
  auto up = upsample_bilinear2x(tape.constant(x));
  const std::vector<double> plane(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 10; ++j)
      CHECK(std::abs(up.value()[i * 10 + j] - bilinear_sample(plane, 3, 5, i, j)) <= 1e-12);
}

TEST_CASE("adjoint pairs satisfy <A x, y> = <x, A^T y>") {
  Tape<double> tape;
  auto dot = [](const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto x = random_tensor({2, 3, 4, 6}, 11);
  auto y = random_tensor({2, 3, 8, 12}, 12);
  CHECK(dot(upsample_bilinear2x(tape.constant(x)).value(), y) ==
        doctest::Approx(dot(x, upsample_bilinear2x_adjoint(tape.constant(y)).value())).epsilon(1e-12));
  auto yp = random_tensor({2, 3, 2, 3}, 13);
  CHECK(dot(avg_pool2x(tape.constant(x)).value(), yp) ==
        doctest::Approx(dot(x, avg_pool2x_adjoint(tape.constant(yp)).value())).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
  Tape<double> tape;
  auto a = softmax_tempered(tape.constant(Tensor<double>({1, 2}, {0.0, 0.0})), 1.0);
  CHECK(a.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.value()[1] == doctest::Approx(0.5).epsilon(1e-15));
  auto b = softmax_tempered(tape.constant(Tensor<double>({1, 2}, {std::numbers::ln2, 0.0})), 1.0);
  CHECK(std::abs(b.value()[0] - 2.0 / 3.0) <= 1e-15);
  CHECK(std::abs(b.value()[1] - 1.0 / 3.0) <= 1e-15);
  auto c = softmax_tempered(tape.constant(Tensor<double>({1, 3}, {5.0, -5.0, 0.0})), 1e6);
  for (auto v : c.value().data()) CHECK(std::abs(v - 1.0 / 3.0) <= 1e-5);
  CHECK_THROWS_AS(softmax_tempered(tape.constant(Tensor<double>({1, 2})), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_tempered(tape.constant(Tensor<double>({1, 2})), -1.0), ParameterError);
}

TEST_CASE("softmax rows are stochastic even for large logits") {
  Tape<double> tape;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto z = random_tensor({7, 9}, seed, 40.0);
    for (double tau : {0.5, 1.0, 4.0}) {
      auto p = softmax_tempered(tape.constant(z), tau).value();
      for (std::size_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) {
          CHECK(p[r * 9 + c] >= 0.0);
          s += p[r * 9 + c];
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("first and second derivatives of powers") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::scalar(3.0), true);
  auto g = gradients(sum(mul(x, x)), std::span<const Var<double>>(&x, 1));
  CHECK(g[0].item() == 6.0);

  auto y = tape.leaf(Tensor<double>::scalar(2.0), true);
  auto cube = sum(mul(mul(y, y), y));
  const Var<double> leaves[] = {y};
  auto dy = backward(cube, std::span<const Var<double>>(leaves), true);
  CHECK(dy[0].value().item() == 12.0);
  auto d2 = gradients(sum(dy[0]), std::span<const Var<double>>(leaves));
  CHECK(d2[0].item() == 12.0);
}

TEST_CASE("backward errors") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3}, {1.0, 2.0, 3.0}), true);
  auto other = tape.leaf(Tensor<double>({2}), true);
  const Var<double> xs[] = {x};
  const Var<double> both[] = {x, other};
  CHECK_THROWS_AS(backward(mul(x, x), std::span<const Var<double>>(xs)), DimensionError);
  CHECK_THROWS_AS(backward(sum(x), std::span<const Var<double>>(both)), GraphError);
  auto g = backward(sum(x), std::span<const Var<double>>(both), false, Unreachable::zero);
  CHECK(g[1].value() == Tensor<double>({2}));
}

TEST_CASE("elementwise and reduction examples") {
  Tape<double> tape;
  auto r = relu(tape.constant(Tensor<double>({3}, {-1.0, 0.0, 2.0})));
  CHECK(r.value() == Tensor<double>({3}, {0.0, 0.0, 2.0}));

  auto x = tape.leaf(Tensor<double>({3}, {-1.0, 0.0, 2.0}), true);
  const Var<double> xs[] = {x};
  auto g = gradients(sum(relu(x)), std::span<const Var<double>>(xs));
  CHECK(g[0] == Tensor<double>({3}, {0.0, 0.0, 1.0}));

  auto gap = global_avg_pool(tape.constant(Tensor<double>({2, 3, 4, 4}, -0.3)));
  CHECK(gap.shape() == Shape{2, 3});
  for (auto v : gap.value().data()) CHECK(v == doctest::Approx(-0.3).epsilon(1e-15));

  CHECK_THROWS_AS(add(tape.constant(Tensor<double>({2})), tape.constant(Tensor<double>({3}))), DimensionError);
  CHECK_THROWS_AS(matmul(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 3}))),
                  DimensionError);
  CHECK_THROWS_AS(log(tape.constant(Tensor<double>({1}, {-1.0}))), NumericError);
}

TEST_CASE("linear layer against a naive dot-product oracle") {
  Tape<double> tape;
  auto x = random_tensor({5, 8}, 21), w = random_tensor({4, 8}, 22), b = random_tensor({4}, 23);
  auto y = linear(tape.constant(x), tape.constant(w), tape.constant(b));
  REQUIRE(y.shape() == Shape{5, 4});
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 8; ++i) acc += x[n * 8 + i] * w[o * 8 + i];
      CHECK(std::abs(y.value()[n * 4 + o] - acc) <= 1e-12);
    }

  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      auto a = random_tensor(ta ? Shape{6, 3} : Shape{3, 6}, 31);
      auto c = random_tensor(tb ? Shape{4, 6} : Shape{6, 4}, 32);
      auto m = matmul(tape.constant(a), tape.constant(c), ta, tb);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double acc = 0;
          for (std::size_t k = 0; k < 6; ++k)
            acc += (ta ? a[k * 3 + i] : a[i * 6 + k]) * (tb ? c[j * 6 + k] : c[k * 4 + j]);
          CHECK(std::abs(m.value()[i * 4 + j] - acc) <= 1e-12);
        }
    }
}

TEST_CASE("two-layer network gradients match central differences") {
  const std::vector<int> labels{0, 2, 1, 2};
  auto loss_on = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
    auto h = relu(linear(v[0], v[1], v[2]));
    auto z = linear(h, v[3], v[4]);
    // mean CE written out from the op suite
    auto logp = log_softmax(z);
    Tensor<double> onehot({4, 3});
    for (std::size_t n = 0; n < 4; ++n) onehot.mutable_data()[n * 3 + labels[n]] = -0.25;
    return sum(mul(logp, tape.constant(onehot)));
  };
  std::vector<Tensor<double>> inputs{random_tensor({4, 5}, 41), random_tensor({6, 5}, 42),
                                     random_tensor({6}, 43), random_tensor({3, 6}, 44), random_tensor({3}, 45)};
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
  auto analytic = gradients(loss_on(tape, vars), std::span<const Var<double>>(vars));
  auto numeric = testutil::numeric_gradient(
      [&](const std::vector<Tensor<double>>& in) {
        Tape<double> t;
        std::vector<Var<double>> v;
        for (const auto& x : in) v.push_back(t.constant(x));
        return loss_on(t, v).value().item();
      },
      inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(analytic[i].shape() == inputs[i].shape());
    CHECK(testutil::max_rel_err(analytic[i], numeric[i]) < 1e-4);
  }
}

namespace {

// Random chain over the op suite applied to a (3, 4) input, ending in a scalar.
Var<double> random_graph(Tape<double>& tape, const std::vector<Var<double>>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var<double> h = v[0];
  const int steps = 3 + static_cast<int>(rng() % 4);
  for (int s = 0; s < steps; ++s) {
    switch (rng() % 9) {
      case 0: h = add(h, v[1]); break;
      case 1: h = mul(h, v[1]); break;
      case 2: h = relu(h); break;
      case 3: h = log(add(exp(scale(h, 0.3)), tape.constant(Tensor<double>(h.shape(), 1.0)))); break;
      case 4: h = softmax(h); break;
      case 5: h = matmul(h, v[2]); h = matmul(h, v[2], false, true); break;
      case 6: h = sub(h, scale(v[1], 0.5)); break;
      case 7: h = reciprocal(add(mul(h, h), tape.constant(Tensor<double>(h.shape(), 1.0)))); break;
      default: h = expand_rows(sum_rows(h), 4); break;
    }
  }
  return sum(mul(h, v[1]));
}

}  // namespace

TEST_CASE("property: random composite graphs match central differences") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    std::vector<Tensor<double>> inputs{random_tensor({3, 4}, 100 + seed), random_tensor({3, 4}, 200 + seed),
                                       random_tensor({4, 5}, 300 + seed, 0.5)};
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    auto out = random_graph(tape, vars, seed);
    auto analytic = gradients(out, std::span<const Var<double>>(vars), Unreachable::zero);
    // central differences carry roundoff of order eps * |f| / h even where the true gradient is 0
    const double noise = 100 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(out.value().item())) / 1e-5;
    auto numeric = testutil::numeric_gradient(
        [&](const std::vector<Tensor<double>>& in) {
          Tape<double> t;
          std::vector<Var<double>> v;
          for (const auto& x : in) v.push_back(t.constant(x));
          return random_graph(t, v, seed).value().item();
        },
        inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      INFO("seed " << seed << " input " << i);
      for (std::size_t j = 0; j < inputs[i].size(); ++j) {
        const double a = analytic[i][j], b = numeric[i][j];
        CHECK(std::abs(a - b) <= 1e-4 * std::max(std::abs(a), std::abs(b)) + noise);
      }
    }
  }
}

TEST_CASE("property: gradient of gradient along a direction matches differences of gradients") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<Tensor<double>> inputs{random_tensor({3, 4}, 500 + seed), random_tensor({3, 4}, 600 + seed),
                                       random_tensor({4, 5}, 700 + seed, 0.5)};
    auto u = random_tensor({3, 4}, 800 + seed);
    // g(x) = <grad_x f, u>; its gradient is the Hessian-vector product.
    auto directional = [&](const std::vector<Tensor<double>>& in, bool create) {
      Tape<double> tape;
      std::vector<Var<double>> v;
      for (const auto& t : in) v.push_back(tape.leaf(t, true));
      const Var<double> x0[] = {v[0]};
      auto g = backward(random_graph(tape, v, seed), std::span<const Var<double>>(x0), true, Unreachable::zero);
      auto gu = sum(mul(g[0], tape.constant(u)));
      if (!create) return std::pair{gu.value().item(), std::vector<Tensor<double>>{}};
      return std::pair{gu.value().item(),
                       gradients(gu, std::span<const Var<double>>(v), Unreachable::zero)};
    };
    auto analytic = directional(inputs, true).second;
    auto numeric = testutil::numeric_gradient(
        [&](const std::vector<Tensor<double>>& in) { return directional(in, false).first; }, inputs);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      INFO("seed " << seed << " input " << i);
      CHECK(testutil::max_rel_err(analytic[i], numeric[i]) < 1e-3);
    }
  }
}

TEST_CASE("tape replay determinism") {
  auto run = [] {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 3, 8, 8}, 5), true);
    auto k = tape.leaf(random_tensor({4, 3, 3, 3}, 6), true);
    auto y = global_avg_pool(relu(conv2d(upsample_bilinear2x(avg_pool2x(x)), k, {2, 1})));
    auto loss = sum(log_softmax(y));
    const Var<double> leaves[] = {x, k};
    auto g = gradients(loss, std::span<const Var<double>>(leaves));
    return std::tuple{checksum(y.value()), checksum(g[0]), checksum(g[1])};
  };
  CHECK(run() == run());
}

TEST_CASE("gradients are shape-equal to their leaves and ids are topological") {
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 3, 4, 4}, 1), true);
  auto k = tape.leaf(random_tensor({5, 3, 3, 3}, 2), true);
  auto b = tape.leaf(random_tensor({5}, 3), true);
  auto loss = mean(conv2d(x, k, b, {1, 1}));
  const Var<double> leaves[] = {x, k, b};
  auto g = gradients(loss, std::span<const Var<double>>(leaves));
  for (std::size_t i = 0; i < 3; ++i) CHECK(g[i].shape() == leaves[i].shape());
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (auto p : tape.node(id).parents) CHECK(p < id);
}

TEST_CASE("no-grad recording keeps values but drops the graph") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1.0, 2.0}), true);
  Var<double> y;
  {
    NoGradGuard<double> guard(tape);
    y = mul(x, x);
  }
  CHECK(tape.recording());
  CHECK(y.value() == Tensor<double>({2}, {1.0, 4.0}));
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(detach(mul(x, x)).requires_grad());
}

TEST_CASE("float and double agree on a conv forward up to rounding") {
  auto xd = random_tensor({1, 2, 6, 6}, 71), kd = random_tensor({3, 2, 3, 3}, 72);
  Tape<double> td;
  Tape<float> tf;
  auto yd = conv2d(td.constant(xd), td.constant(kd), {1, 1}).value();
  auto yf = conv2d(tf.constant(xd.cast<float>()), tf.constant(kd.cast<float>()), {1, 1}).value();
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK(std::abs(yd[i] - static_cast<double>(yf[i])) < 1e-4);
}
