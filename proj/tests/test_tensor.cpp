#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "claw/adam.hpp"
#include "claw/rng.hpp"
#include "claw/tensor.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace claw;
using test_support::max_rel_grad_err;
using test_support::rel_err;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = true) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return Tensor::from(rng.normal_vector(n), std::move(shape), requires_grad);
}

// Reference product, three explicit loops.
std::vector<double> triple_loop_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                       std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < k; ++r) c[i * n + j] += a[i * k + r] * b[r * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
  Rng rng(7);
  Tensor b = random_tensor({3, 2}, rng, false);

  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  Tensor i3 = Tensor::from(eye, {3, 3});
  Tensor out = matmul(i3, b);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(out.values()[i] == b.values()[i]);

  Tensor z = Tensor::zeros({2, 2});
  Tensor b2 = random_tensor({2, 2}, rng, false);
  Tensor out2 = matmul(z, b2);
  for (double v : out2.values()) CHECK(v == 0.0);
}

TEST_CASE("matmul agrees with the triple-loop reference") {
  Rng rng(11);
  SUBCASE("4x5 times 5x3") {
    Tensor a = random_tensor({4, 5}, rng, false);
    Tensor b = random_tensor({5, 3}, rng, false);
    auto ref = triple_loop_matmul(a.values(), b.values(), 4, 5, 3);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c.values()[i] - ref[i]) < 1e-12);
  }
  SUBCASE("shapes up to 16x16") {
    for (std::size_t m : {1u, 7u, 16u}) {
      for (std::size_t k : {1u, 5u, 16u}) {
        for (std::size_t n : {2u, 16u}) {
          Tensor a = random_tensor({m, k}, rng, false);
          Tensor b = random_tensor({k, n}, rng, false);
          auto ref = triple_loop_matmul(a.values(), b.values(), m, k, n);
          Tensor c = matmul(a, b);
          for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(c.values()[i] - ref[i]) < 1e-12);
        }
      }
    }
  }
  SUBCASE("inner dimension mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
  }
}

TEST_CASE("elementwise forward values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(relu(Tensor::scalar(-3.2)).item() == 0.0);
  CHECK(relu(Tensor::scalar(3.2)).item() == 3.2);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)));
  CHECK(softplus(Tensor::scalar(-800.0)).item() == 0.0);  // no overflow
  CHECK(std::isfinite(softplus(Tensor::scalar(800.0)).item()));

  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::domain_error);
  CHECK_THROWS_AS(sqrt(Tensor::scalar(-0.5)), std::domain_error);

  Tensor a = Tensor::from({1.0, 2.0}, {2});
  Tensor b = Tensor::from({1.0, 2.0, 3.0}, {3});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 2}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("sigmoid gradient at zero matches the central difference") {
  Tensor x = Tensor::scalar(0.0, true);
  auto loss = [&]() { return sigmoid(x); };
  CHECK(max_rel_grad_err({&x}, loss, 1e-5) < 1e-7);
  x.zero_grad();
  backward(sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gradient check across every differentiable op") {
  Rng rng(23);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor v = random_tensor({4}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  Tensor pos = Tensor::from({0.3, 1.7, 0.9, 2.4}, {4}, true);

  auto check = [&](const std::vector<Tensor*>& leaves, const std::function<Tensor()>& fn) {
    CHECK(max_rel_grad_err(leaves, fn) < 1e-4);
  };

  check({&a, &b}, [&] { return sum(add(a, b)); });
  check({&a, &b}, [&] { return sum(sub(a, b)); });
  check({&a, &b}, [&] { return sum(mul(a, b)); });
  check({&a}, [&] { return sum(div(a, 3.7)); });
  check({&a, &b}, [&] { return sum(div(a, add(square(b), 1.0))); });
  check({&a}, [&] { return sum(sigmoid(a)); });
  check({&a}, [&] { return sum(exp(mul(a, 0.5))); });
  check({&pos}, [&] { return sum(log(pos)); });
  check({&pos}, [&] { return sum(sqrt(pos)); });
  check({&a}, [&] { return sum(softplus(a)); });
  check({&a}, [&] { return sum(square(a)); });
  check({&a}, [&] { return sum(neg(a)); });
  check({&a}, [&] { return mean(square(a)); });
  check({&a, &v}, [&] { return sum(add_rowvec(a, v)); });
  check({&a, &v}, [&] { return sum(mul_rowvec(a, v)); });
  check({&a, &w}, [&] { return sum(square(matmul(a, w))); });
  check({&a}, [&] { return sum(mul(relu(a), a)); });
  // scalar broadcast, gradient flows into both sides
  Tensor s = Tensor::scalar(0.7, true);
  check({&a, &s}, [&] { return sum(mul(a, s)); });
  check({&a, &s}, [&] { return sum(div(a, add(square(s), 0.5))); });
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits over 4 classes give ln 4") {
    Tensor logits = Tensor::full({3, 4}, 1.25);
    Tensor loss = softmax_cross_entropy(logits, {0, 1, 3});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("saturated correct logit drives the loss to zero") {
    Tensor logits = Tensor::from({1e6, 0.0, 0.0, 0.0}, {1, 4});
    CHECK(softmax_cross_entropy(logits, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("matches the direct unstabilized formula on random logits") {
    Rng rng(5);
    Tensor logits = random_tensor({3, 5}, rng, false);
    std::vector<int> labels{2, 0, 4};
    double ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < 5; ++j) denom += std::exp(logits.values()[i * 5 + j]);
      ref += -std::log(std::exp(logits.values()[i * 5 + labels[i]]) / denom);
    }
    ref /= 3.0;
    CHECK(std::abs(softmax_cross_entropy(logits, labels).item() - ref) < 1e-9);
  }
  SUBCASE("translation invariance per row") {
    Rng rng(6);
    Tensor logits = random_tensor({4, 6}, rng, false);
    std::vector<int> labels{0, 5, 2, 3};
    const double base = softmax_cross_entropy(logits, labels).item();
    Tensor shifted = Tensor::from(logits.values(), logits.shape());
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 6; ++j) shifted.values()[i * 6 + j] += 100.0 * (i + 1.0);
    CHECK(std::abs(softmax_cross_entropy(shifted, labels).item() - base) < 1e-10);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(9);
    Tensor logits = random_tensor({4, 3}, rng);
    std::vector<int> labels{1, 0, 2, 2};
    CHECK(max_rel_grad_err({&logits}, [&] { return softmax_cross_entropy(logits, labels); }) <
          1e-4);
  }
  SUBCASE("out-of-range label") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), std::out_of_range);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1, 0}), std::out_of_range);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("identity chain gives dx = 1") {
    Tensor x = Tensor::scalar(4.2, true);
    backward(x);
    CHECK(x.grad()[0] == 1.0);
  }
  SUBCASE("sum of squares gives dx = 2x") {
    Tensor x = Tensor::from({1.0, -2.0, 0.5}, {3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(-4.0));
    CHECK(x.grad()[2] == doctest::Approx(1.0));
  }
  SUBCASE("non-scalar root rejected") {
    Tensor x = Tensor::from({1.0, 2.0}, {2}, true);
    CHECK_THROWS_AS(backward(x), std::invalid_argument);
  }
  SUBCASE("repeated calls accumulate") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, 2.0));
    backward(mul(x, 2.0));
    CHECK(x.grad()[0] == doctest::Approx(4.0));
  }
  SUBCASE("shared subexpression gets both contributions") {
    Tensor x = Tensor::scalar(1.5, true);
    Tensor y = mul(x, x);           // used twice below
    backward(add(y, mul(y, 2.0)));  // d/dx 3x^2 = 6x
    CHECK(x.grad()[0] == doctest::Approx(9.0));
  }
}

TEST_CASE("backward on a rebuilt graph is bit-identical") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = random_tensor({6, 4}, rng);
    Tensor x = random_tensor({3, 6}, rng, false);
    Tensor v = random_tensor({4}, rng);
    Tensor loss = mean(square(add_rowvec(relu(matmul(x, w)), v)));
    backward(loss);
    std::vector<double> g = w.grad();
    auto gv = v.grad();
    g.insert(g.end(), gv.begin(), gv.end());
    return g;
  };
  auto g1 = run(1234);
  auto g2 = run(1234);
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("adam step") {
  AdamConfig cfg;
  SUBCASE("zero gradient leaves the parameter unchanged") {
    Tensor p = Tensor::from({0.4, -1.2}, {2}, true);
    p.zero_grad();
    AdamState st;
    adam_step(p, st, cfg);
    CHECK(p.values()[0] == 0.4);
    CHECK(p.values()[1] == -1.2);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by about -lr on unit gradient") {
    Tensor p = Tensor::scalar(0.0, true);
    p.grad()[0] = 1.0;
    AdamState st;
    adam_step(p, st, cfg);
    // m_hat = 1, v_hat = 1 after bias correction
    CHECK(p.values()[0] == doctest::Approx(-0.001).epsilon(1e-6));
  }
  SUBCASE("two identical steps match a scalar reference recurrence") {
    Tensor p = Tensor::scalar(0.25, true);
    AdamState st;
    double theta = 0.25, m = 0.0, v = 0.0;
    const double g = -0.75;
    for (int t = 1; t <= 2; ++t) {
      p.zero_grad();
      p.grad()[0] = g;
      adam_step(p, st, cfg);
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      const double mhat = m / (1 - std::pow(cfg.beta1, t));
      const double vhat = v / (1 - std::pow(cfg.beta2, t));
      theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      CHECK(std::abs(p.values()[0] - theta) < 1e-12);
    }
    CHECK(st.step == 2);
  }
  SUBCASE("state shape mismatch rejected") {
    Tensor p = Tensor::from({1.0, 2.0}, {2}, true);
    AdamState st;
    st.m.assign(3, 0.0);
    st.v.assign(3, 0.0);
    CHECK_THROWS_AS(adam_step(p, st, cfg), ShapeError);
  }
}
