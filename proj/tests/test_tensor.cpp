#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "vidqa/errors.hpp"
#include "vidqa/grad_check.hpp"
#include "vidqa/ops.hpp"
#include "vidqa/rng.hpp"
#include "vidqa/tensor.hpp"

using namespace vidqa;

namespace {

Tensor random_leaf(Shape shape, RngStream& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.5, 1.5);
  return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor random_dist(std::size_t n, RngStream& rng) {
  std::vector<double> v(n);
  double total = 0.0;
  for (double& x : v) {
    x = rng.uniform(0.05, 1.0);
    total += x;
  }
  for (double& x : v) x /= total;
  return Tensor::leaf({n}, std::move(v), true);
}

}  // namespace

TEST_CASE("rng streams are deterministic and purpose-isolated") {
  RngStream a(42), b(42);
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream base(42);
  RngStream c1 = base.derive("crops");
  RngStream c2 = base.derive("crops");
  RngStream m = base.derive("mask");
  CHECK(c1.next_u64() == c2.next_u64());
  RngStream c3 = base.derive("crops");
  CHECK(c3.next_u64() != m.next_u64());

  RngStream u(7);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    std::size_t k = u.uniform_index(13);
    CHECK(k < 13);
  }
}

TEST_CASE("matmul: identity, pinned value, oracle comparison") {
  Tensor i2 = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::leaf({2, 2}, {3, -1, 2, 5});
  Tensor r = matmul(i2, m);
  for (std::size_t k = 0; k < 4; ++k) CHECK(r.value()[k] == m.value()[k]);

  Tensor a = Tensor::leaf({1, 2}, {1, 2});
  Tensor b = Tensor::leaf({2, 1}, {3, 4});
  CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-15));

  RngStream rng(11);
  Tensor x = random_leaf({3, 4}, rng, false);
  Tensor y = random_leaf({4, 2}, rng, false);
  Tensor z = matmul(x, y);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += x.at(i, k) * y.at(k, j);
      CHECK(std::abs(z.at(i, j) - acc) <= 1e-12);
    }

  CHECK_THROWS_AS(matmul(x, x), ShapeError);
}

TEST_CASE("softmax: pinned values, temperature, domain checks") {
  Tensor logits = Tensor::leaf({3}, {2, 1, 0});

  Tensor p1 = softmax(logits, 1.0);
  CHECK(std::abs(p1.value()[0] - 0.66524) < 1e-5);
  CHECK(std::abs(p1.value()[1] - 0.24473) < 1e-5);
  CHECK(std::abs(p1.value()[2] - 0.09003) < 1e-5);

  Tensor phalf = softmax(logits, 0.5);
  CHECK(std::abs(phalf.value()[0] - 0.86681) < 1e-5);
  CHECK(std::abs(phalf.value()[1] - 0.11731) < 1e-5);
  CHECK(std::abs(phalf.value()[2] - 0.01587) < 1e-5);

  CHECK_THROWS_AS(softmax(logits, 0.0), std::domain_error);
  CHECK_THROWS_AS(softmax(logits, -2.0), std::domain_error);

  // Max subtraction keeps huge logits finite.
  Tensor big = Tensor::leaf({3}, {1000.0, 999.0, 998.0});
  Tensor pb = softmax(big, 1.0);
  CHECK(all_finite(pb));
  CHECK(std::abs(pb.value()[0] - 0.66524) < 1e-5);

  RngStream rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor l = random_leaf({7}, rng, false);
    Tensor p = softmax(l, rng.uniform(0.05, 3.0));
    double total = 0.0;
    std::size_t amax_l = 0, amax_p = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      total += p.value()[i];
      if (l.value()[i] > l.value()[amax_l]) amax_l = i;
      if (p.value()[i] > p.value()[amax_p]) amax_p = i;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK(amax_l == amax_p);
  }
}

TEST_CASE("soft_cross_entropy: pinned values and Gibbs inequality") {
  Tensor t10 = Tensor::leaf({2}, {1, 0});
  Tensor half = Tensor::leaf({2}, {0.5, 0.5});
  CHECK(std::abs(soft_cross_entropy(t10, half).item() - 0.693147) < 1e-6);

  Tensor p73 = Tensor::leaf({2}, {0.7, 0.3});
  CHECK(std::abs(soft_cross_entropy(p73, p73).item() - 0.610864) < 1e-6);

  Tensor onehot = Tensor::leaf({2}, {1, 0});
  CHECK(soft_cross_entropy(onehot, onehot).item() == 0.0);

  // Hard zero in predicted hits the clamp, stays finite.
  Tensor tz = Tensor::leaf({2}, {0.5, 0.5});
  Tensor pz = Tensor::leaf({2}, {1.0, 0.0});
  CHECK(std::isfinite(soft_cross_entropy(tz, pz).item()));

  Tensor bad = Tensor::leaf({2}, {0.9, 0.3});
  CHECK_THROWS_AS(soft_cross_entropy(t10, bad), std::invalid_argument);
  Tensor neg = Tensor::leaf({2}, {1.2, -0.2});
  CHECK_THROWS_AS(soft_cross_entropy(neg, half), std::invalid_argument);

  RngStream rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor p = random_dist(5, rng);
    Tensor q = random_dist(5, rng);
    double cross = soft_cross_entropy(p, q).item();
    double self_h = soft_cross_entropy(p, p).item();
    CHECK(cross >= self_h - 1e-12);
  }
}

TEST_CASE("backward: diamond reuse, unused tensors, linearity") {
  // y = x*x + x, dy/dx = 2x + 1; reuse of x must not double-count.
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = add(mul(x, x), x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-15));

  // A leaf never touched by the loss keeps an exactly zero gradient.
  Tensor unused = Tensor::scalar(5.0, true);
  Tensor z = Tensor::scalar(2.0, true);
  Tensor loss = mul(z, z);
  loss.backward();
  CHECK(unused.grad()[0] == 0.0);

  // Gradients accumulate linearly across separate losses.
  RngStream rng(17);
  Tensor a1 = random_leaf({3}, rng);
  std::vector<double> snapshot = a1.value();
  Tensor l1 = sum(mul(a1, a1));
  Tensor l2 = sum(scale(a1, 2.0));
  add(l1, l2).backward();
  std::vector<double> combined = a1.grad();

  Tensor a2 = Tensor::leaf({3}, snapshot, true);
  sum(mul(a2, a2)).backward();
  std::vector<double> g1 = a2.grad();
  a2.zero_grad();
  sum(scale(a2, 2.0)).backward();
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(combined[i] - (g1[i] + a2.grad()[i])) <= 1e-12);
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::scalar(2.0, true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y2 = mul(x, x);
  CHECK(y2.requires_grad());
}

TEST_CASE("grad_check: quadratic, softmax+cross-entropy, epsilon domain") {
  Tensor x = Tensor::scalar(3.0, true);
  double err = grad_check([](const std::vector<Tensor>& in) { return mul(in[0], in[0]); },
                          {x});
  CHECK(err < 1e-9);

  RngStream rng(23);
  Tensor logits = random_leaf({5}, rng);
  Tensor target = random_dist(5, rng);
  target = Tensor::leaf({5}, target.value(), false);
  double err2 = grad_check(
      [&target](const std::vector<Tensor>& in) {
        return soft_cross_entropy(target, softmax(in[0], 1.0));
      },
      {logits});
  CHECK(err2 < 1e-6);

  CHECK_THROWS_AS(grad_check([](const std::vector<Tensor>& in) { return in[0]; },
                             {Tensor::scalar(1.0, true)}, 1e-8),
                  std::invalid_argument);
  CHECK_THROWS_AS(grad_check([](const std::vector<Tensor>& in) { return in[0]; },
                             {Tensor::scalar(1.0, true)}, 1e-2),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      grad_check(
          [](const std::vector<Tensor>& in) { return scale(in[0], 1.0 / 0.0); },
          {Tensor::scalar(1.0, true)}),
      NumericError);
}

TEST_CASE("grad_check sweep across primitives") {
  RngStream rng(31);
  auto check = [](double err) { CHECK(err < 1e-6); };

  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({3, 4}, rng);
    Tensor w = random_leaf({4, 2}, rng);
    Tensor v = random_leaf({4}, rng);
    Tensor g = random_leaf({4}, rng);
    Tensor s = Tensor::scalar(rng.uniform(0.3, 2.0), true);

    check(grad_check([](const std::vector<Tensor>& in) { return sum(add(in[0], in[1])); },
                     {a, b}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(mul(sub(in[0], in[1]), in[0])); },
        {a, b}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); }, {a, w}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(matmul(transpose(in[0]), in[1])); },
        {w, random_leaf({4, 3}, rng)}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(add_bias(in[0], in[1])); },
        {a, random_leaf({4}, rng)}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(gelu(in[0])); }, {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(sigmoid(in[0])); }, {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(exp_elem(scale(in[0], 0.5))); },
        {a}));
    Tensor smw = random_leaf({3, 4}, rng, false);
    check(grad_check(
        [&smw](const std::vector<Tensor>& in) {
          return sum(mul(softmax_rows(in[0], 0.7), smw));
        },
        {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(l2_normalize_rows(in[0])); },
        {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(layer_norm_rows(in[0], in[1], in[2]));
        },
        {a, random_leaf({4}, rng), random_leaf({4}, rng)}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(scale_by(in[0], in[1])); },
        {a, s}));
    check(grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(gather_rows(in[0], {0, 2, 2, 1}));
        },
        {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(concat_cols({slice_cols(in[0], 0, 2), slice_cols(in[0], 2, 4)}));
        },
        {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(concat_rows({slice_rows(in[0], 0, 1), slice_rows(in[0], 1, 3)}));
        },
        {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(mean_rows(in[0])); }, {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(row_vector(in[0], 1)); }, {a}));
    check(grad_check(
        [](const std::vector<Tensor>& in) { return sum(as_row(in[0])); }, {v}));
    check(grad_check(
        [](const std::vector<Tensor>& in) {
          return sum(embed_rows(in[0], {0, 1, 1, 2}));
        },
        {random_leaf({3, 4}, rng)}));
  }

  // The distribution-valued primitive is checked through softmax so every
  // perturbed evaluation still feeds it valid simplex points; this also
  // exercises both partials (target and predicted).
  for (int rep = 0; rep < 10; ++rep) {
    Tensor tl = random_leaf({5}, rng);
    Tensor pl = random_leaf({5}, rng);
    double err = grad_check(
        [](const std::vector<Tensor>& in) {
          return soft_cross_entropy(softmax(in[0], 1.0), softmax(in[1], 1.0));
        },
        {tl, pl});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("dropout: identity off, mask scaling on") {
  RngStream rng(5);
  Tensor a = random_leaf({4, 4}, rng, false);
  Tensor off = dropout(a, 0.5, rng, false);
  CHECK(off.id() == a.id());

  RngStream r2(6);
  Tensor on = dropout(a, 0.5, r2, true);
  for (std::size_t i = 0; i < on.size(); ++i) {
    double ratio = on.value()[i];
    CHECK((ratio == 0.0 || std::abs(ratio - a.value()[i] * 2.0) < 1e-12));
  }
  CHECK_THROWS_AS(dropout(a, 1.0, rng, true), std::invalid_argument);
}

TEST_CASE("shape errors name both shapes") {
  Tensor a = Tensor::leaf({2, 3}, std::vector<double>(6, 0.0));
  Tensor b = Tensor::leaf({3, 2}, std::vector<double>(6, 0.0));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}
