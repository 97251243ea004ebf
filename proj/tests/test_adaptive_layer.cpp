#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "claw/adaptive_layer.hpp"
#include "claw/model.hpp"
#include "claw/rng.hpp"
#include "claw/snapshot.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace claw;
using test_support::max_rel_grad_err;

namespace {

// Adaptive Simpson quadrature.
double simpson(const std::function<double(double)>& f, double a, double b) {
  const double m = 0.5 * (a + b);
  return (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double eps,
                        double whole, int depth) {
  const double m = 0.5 * (a + b);
  const double left = simpson(f, a, m);
  const double right = simpson(f, m, b);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * eps) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson(f, a, m, eps / 2.0, left, depth - 1) +
         adaptive_simpson(f, m, b, eps / 2.0, right, depth - 1);
}

// E[log|eps|] by quadrature: with x = e^u, integral of 2*phi(e^u)*e^u*u over u.
double quadrature_elog_abs_eps() {
  auto integrand = [](double u) {
    const double x = std::exp(u);
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 2.0 * phi * x * u;
  };
  const double a = -40.0, b = 4.0;
  return adaptive_simpson(integrand, a, b, 1e-12, simpson(integrand, a, b), 40);
}

AdaptiveVariationalLayer make_layer(std::size_t in, std::size_t out, Activation act,
                                    AdaptMode mode, std::uint64_t seed) {
  Rng rng(seed);
  return AdaptiveVariationalLayer(in, out, act, mode, rng);
}

// Plain dense reference: x * gamma + bias.
std::vector<double> dense_reference(const AdaptiveVariationalLayer& layer,
                                    const std::vector<double>& x, std::size_t batch) {
  const std::size_t in = layer.in(), out = layer.out();
  std::vector<double> z(batch * out, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t r = 0; r < in; ++r) {
      for (std::size_t j = 0; j < out; ++j) {
        z[i * out + j] += x[i * in + r] * layer.gamma().values()[r * out + j];
      }
    }
    for (std::size_t j = 0; j < out; ++j) z[i * out + j] += layer.bias_gamma().values()[j];
  }
  return z;
}

}  // namespace

TEST_CASE("adaptation multiplier") {
  SUBCASE("neutral start: s=2, a=0 gives b=0 and m=1") {
    for (double p : {0.1, 0.5, 0.9}) {
      CHECK(adaptation_multiplier(p, 0.0, 2.0, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
      CHECK(adaptation_multiplier(p, 0.0, 2.0, 1.7) == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("saturated a drives m to 1 + p") {
    const double p = 1.0 - kPMin;
    CHECK(adaptation_multiplier(p, 50.0, 2.0, 0.0) == doctest::Approx(2.0 - kPMin).epsilon(1e-9));
  }
  SUBCASE("direct substitution") {
    const double p = 0.4, a = 1.0, s = 3.0, eps = 0.5;
    const double b = s / (1.0 + std::exp(-a)) - 1.0;
    const double expected = 1.0 + b * p + b * std::sqrt(p * (1.0 - p)) * eps;
    CHECK(std::abs(adaptation_multiplier(p, a, s, eps) - expected) < 1e-12);
  }
  SUBCASE("domain checks") {
    CHECK_THROWS_AS(adaptation_multiplier(0.0, 0.0, 2.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(adaptation_multiplier(1.0, 0.0, 2.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(adaptation_multiplier(0.5, 0.0, 0.5, 0.0), std::domain_error);
  }
}

TEST_CASE("bernoulli moment matching") {
  CHECK(bernoulli_moment_match(0.5) == std::pair{0.5, 0.25});
  CHECK(bernoulli_moment_match(0.0) == std::pair{0.0, 0.0});
  CHECK_THROWS_AS(bernoulli_moment_match(1.2), std::domain_error);
  CHECK_THROWS_AS(bernoulli_moment_match(-0.1), std::domain_error);

  // Empirical moments of 1e6 draws within 4 standard errors.
  const double p = 0.3;
  const std::size_t n = 1000000;
  Rng rng(99);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += rng.uniform() < p ? 1.0 : 0.0;
  const double mean = sum / n;
  const auto [mm, mv] = bernoulli_moment_match(p);
  const double se_mean = std::sqrt(mv / n);
  CHECK(std::abs(mean - mm) < 4.0 * se_mean);
}

TEST_CASE("neutral initialization equals a plain dense layer") {
  auto layer = make_layer(5, 3, Activation::identity, AdaptMode::stochastic, 42);
  Rng rng(7);
  std::vector<double> xv = rng.normal_vector(4 * 5);
  Tensor x = Tensor::from(xv, {4, 5});
  auto ref = dense_reference(layer, xv, 4);

  SUBCASE("mean forward") {
    Tensor out = layer.forward(x);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.values()[i] == ref[i]);
  }
  SUBCASE("any eps: multiplier is identically 1") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Rng erng(seed);
      Tensor eps = Tensor::from(erng.normal_vector(3), {3});
      Tensor out = layer.forward(x, eps);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.values()[i] == ref[i]);
    }
  }
  SUBCASE("never-adapt forward equals the dense reference") {
    auto frozen = make_layer(5, 3, Activation::identity, AdaptMode::never, 42);
    Tensor out = frozen.forward(x);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.values()[i] == ref[i]);
  }
}

TEST_CASE("monotonicity of 1 + b in s and a") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = 4.0 * rng.normal();
    const double s1 = kSMin + 18.0 * rng.uniform();
    const double s2 = s1 + 0.1 + rng.uniform();
    const double one_b_1 = s1 * stable_sigmoid(a);
    const double one_b_2 = s2 * stable_sigmoid(a);
    CHECK(one_b_2 > one_b_1);

    const double s = kSMin + 18.0 * rng.uniform();
    const double a1 = 4.0 * rng.normal();
    const double a2 = a1 + 0.1 + rng.uniform();
    CHECK(s * stable_sigmoid(a2) > s * stable_sigmoid(a1));
  }
}

TEST_CASE("sample_forward moments match the induced distribution") {
  // Single neuron, gamma = 1, x = 1: the pre-activation is exactly the
  // multiplier, so its mean and variance must match 1+bp and b^2 p(1-p).
  auto layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 5);
  layer.gamma().values() = {1.0};
  layer.bias_gamma().values() = {0.0};
  layer.p().values() = {0.3};
  layer.a().values() = {0.7};
  layer.s().values() = {3.0};

  const double b = 3.0 * stable_sigmoid(0.7) - 1.0;
  const double want_mean = 1.0 + b * 0.3;
  const double want_var = b * b * 0.3 * 0.7;

  const std::size_t n = 10000;
  Rng rng(11);
  Tensor x = Tensor::from(std::vector<double>(n, 1.0), {n, 1});
  Tensor eps = Tensor::from(rng.normal_vector(n), {n, 1});
  Tensor out = layer.forward(x, eps);

  double mean = 0.0;
  for (double v : out.values()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : out.values()) var += (v - mean) * (v - mean);
  var /= (n - 1);

  const double se_mean = std::sqrt(want_var / n);
  const double se_var = want_var * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(mean - want_mean) < 4.0 * se_mean);
  CHECK(std::abs(var - want_var) < 4.0 * se_var);

  // And the induced Gaussian reports the same moments.
  InducedGaussian ig = layer.induced_gaussian();
  CHECK(ig.w_mean[0] == doctest::Approx(want_mean).epsilon(1e-12));
  CHECK(ig.w_var[0] == doctest::Approx(want_var + kVarFloor).epsilon(1e-9));
}

TEST_CASE("induced gaussian closed forms") {
  auto layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 8);
  SUBCASE("b = 0 gives mean gamma and floor variance") {
    layer.gamma().values() = {1.4};
    InducedGaussian ig = layer.induced_gaussian();  // fresh layer: s=2, a=0
    CHECK(ig.w_mean[0] == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(ig.w_var[0] == doctest::Approx(kVarFloor).epsilon(1e-12));
  }
  SUBCASE("gamma = 0 gives zero mean and floor variance") {
    layer.gamma().values() = {0.0};
    layer.a().values() = {1.3};
    layer.s().values() = {4.0};
    InducedGaussian ig = layer.induced_gaussian();
    CHECK(ig.w_mean[0] == 0.0);
    CHECK(ig.w_var[0] == doctest::Approx(kVarFloor).epsilon(1e-12));
  }
  SUBCASE("direct substitution: gamma=2, p=0.5, 1+b=1.5") {
    layer.gamma().values() = {2.0};
    layer.p().values() = {0.5};
    layer.a().values() = {0.0};
    layer.s().values() = {3.0};  // 3 * sigmoid(0) = 1.5, so b = 0.5
    InducedGaussian ig = layer.induced_gaussian();
    CHECK(ig.w_mean[0] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(ig.w_var[0] == doctest::Approx(0.25 + kVarFloor).epsilon(1e-9));
  }
}

TEST_CASE("expected log abs eps") {
  const double v = expected_log_abs_eps();
  CHECK(v < 0.0);
  CHECK(v == doctest::Approx(-0.6351814227307391).epsilon(1e-12));
  SUBCASE("within 1e-4 of quadrature") {
    CHECK(std::abs(v - quadrature_elog_abs_eps()) < 1e-4);
  }
  SUBCASE("within 3 standard errors of a large Monte-Carlo estimate") {
    const std::size_t n = 10000000;
    Rng rng(123);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = std::log(std::abs(rng.normal()));
      sum += l;
      sum2 += l * l;
    }
    const double mean = sum / n;
    const double sd = std::sqrt((sum2 - n * mean * mean) / (n - 1));
    CHECK(std::abs(v - mean) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("KL to the log-scale prior") {
  SUBCASE("one neuron, s=2, a=0, p=0.5") {
    auto layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 2);
    const double got = layer.kl_to_logscale_prior().item();
    const double expected = std::log(2.0) + expected_log_abs_eps();
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("p = 0.5 minimizes the symmetric p-term") {
    auto layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 2);
    auto value_at = [&](double p) {
      layer.p().values() = {p};
      return layer.kl_to_logscale_prior().item();
    };
    const double at_half = value_at(0.5);
    CHECK(at_half < value_at(0.3));
    CHECK(at_half < value_at(0.7));
    CHECK(value_at(0.3) == doctest::Approx(value_at(0.7)).epsilon(1e-12));
  }
  SUBCASE("gradients match finite differences") {
    auto layer = make_layer(4, 3, Activation::identity, AdaptMode::stochastic, 21);
    layer.p().values() = {0.37, 0.61, 0.23};
    layer.a().values() = {0.4, -0.8, 1.2};
    layer.s().values() = {1.5, 2.5, 4.0};
    auto loss = [&] { return layer.kl_to_logscale_prior(); };
    CHECK(max_rel_grad_err({&layer.p(), &layer.a(), &layer.s()}, loss) < 1e-6);
  }
  SUBCASE("domain violation raises") {
    auto layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 2);
    layer.p().values() = {0.0};
    CHECK_THROWS_AS(layer.kl_to_logscale_prior().item(), std::domain_error);
  }
}

TEST_CASE("KL to the previous posterior") {
  SUBCASE("a layer against its own snapshot is exactly zero") {
    auto layer = make_layer(6, 4, Activation::relu, AdaptMode::stochastic, 31);
    Rng rng(5);
    layer.p().values() = {0.2, 0.5, 0.7, 0.9};
    layer.a().values() = {0.5, -1.0, 2.0, 0.0};
    layer.s().values() = {1.5, 2.0, 3.0, 8.0};
    layer.bias_gamma().values() = rng.normal_vector(4);
    CHECK(layer.kl_to_previous_posterior(layer.snapshot()).item() == 0.0);
  }
  SUBCASE("closed form: same mean, sigma 1 vs previous sigma 2") {
    // Current: gamma=2, p=0.5, s=4, a=0  -> mean 3, var 1 (+floor).
    // Previous: gamma=1, p=0.5, s=10, a=0 -> mean 3, var 4 (+floor).
    auto cur = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 1);
    cur.gamma().values() = {2.0};
    cur.bias_gamma().values() = {0.0};
    cur.p().values() = {0.5};
    cur.a().values() = {0.0};
    cur.s().values() = {4.0};
    auto prev_layer = make_layer(1, 1, Activation::identity, AdaptMode::stochastic, 1);
    prev_layer.gamma().values() = {1.0};
    prev_layer.bias_gamma().values() = {0.0};
    prev_layer.p().values() = {0.5};
    prev_layer.a().values() = {0.0};
    prev_layer.s().values() = {10.0};
    LayerSnapshot prev = prev_layer.snapshot();

    const double vc = 1.0 + kVarFloor, vp = 4.0 + kVarFloor;
    const double bias_kl = 0.0;  // identical zero-mean floor Gaussians
    const double expected =
        0.5 * std::log(vp / vc) + vc / (2.0 * vp) - 0.5 + bias_kl;
    const double got = cur.kl_to_previous_posterior(prev).item();
    CHECK(got == doctest::Approx(expected).epsilon(1e-9));
    CHECK(got == doctest::Approx(std::log(2.0) + 0.125 - 0.5).epsilon(1e-6));

    // Monte-Carlo cross-check of the same Gaussian KL.
    Rng rng(77);
    const std::size_t n = 1000000;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = 3.0 + std::sqrt(vc) * rng.normal();
      const double log_q = -0.5 * std::log(2.0 * M_PI * vc) - (x - 3.0) * (x - 3.0) / (2.0 * vc);
      const double log_p = -0.5 * std::log(2.0 * M_PI * vp) - (x - 3.0) * (x - 3.0) / (2.0 * vp);
      acc += log_q - log_p;
    }
    CHECK(std::abs(acc / n - got) < 1e-2);
  }
  SUBCASE("non-negative on random parameter pairs") {
    Rng rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
      auto a = make_layer(3, 2, Activation::relu, AdaptMode::stochastic, 100 + trial);
      auto b = make_layer(3, 2, Activation::relu, AdaptMode::stochastic, 5000 + trial);
      for (auto* layer : {&a, &b}) {
        for (auto& v : layer->p().values()) v = kPMin + (1.0 - 2.0 * kPMin) * rng.uniform();
        for (auto& v : layer->a().values()) v = 2.0 * rng.normal();
        for (auto& v : layer->s().values()) v = kSMin + 10.0 * rng.uniform();
        for (auto& v : layer->bias_gamma().values()) v = rng.normal();
      }
      CHECK(a.kl_to_previous_posterior(b.snapshot()).item() >= -1e-9);
    }
  }
  SUBCASE("gradients match finite differences") {
    auto layer = make_layer(3, 2, Activation::relu, AdaptMode::stochastic, 17);
    layer.p().values() = {0.31, 0.64};
    layer.a().values() = {0.9, -0.4};
    layer.s().values() = {2.2, 3.7};
    auto prev = make_layer(3, 2, Activation::relu, AdaptMode::stochastic, 18);
    prev.p().values() = {0.55, 0.45};
    prev.a().values() = {0.2, 0.6};
    prev.s().values() = {1.8, 2.6};
    LayerSnapshot snap = prev.snapshot();
    auto loss = [&] { return layer.kl_to_previous_posterior(snap); };
    CHECK(max_rel_grad_err(
              {&layer.gamma(), &layer.bias_gamma(), &layer.p(), &layer.a(), &layer.s()}, loss) <
          1e-6);
  }
  SUBCASE("structural mismatch raises") {
    auto layer = make_layer(3, 2, Activation::relu, AdaptMode::stochastic, 1);
    auto other = make_layer(4, 2, Activation::relu, AdaptMode::stochastic, 1);
    CHECK_THROWS_AS(layer.kl_to_previous_posterior(other.snapshot()), ShapeError);
  }
}

TEST_CASE("projection clamps and is idempotent") {
  auto layer = make_layer(2, 3, Activation::relu, AdaptMode::stochastic, 4);
  layer.p().values() = {1.3, 0.5, -0.2};
  layer.s().values() = {0.4, 25.0, 2.0};
  layer.project();
  CHECK(layer.p().values()[0] == doctest::Approx(1.0 - kPMin));
  CHECK(layer.p().values()[1] == 0.5);
  CHECK(layer.p().values()[2] == doctest::Approx(kPMin));
  CHECK(layer.s().values()[0] == doctest::Approx(kSMin));
  CHECK(layer.s().values()[1] == doctest::Approx(kSMax));
  CHECK(layer.s().values()[2] == 2.0);

  const auto p_once = layer.p().values();
  const auto s_once = layer.s().values();
  layer.project();
  CHECK(layer.p().values() == p_once);
  CHECK(layer.s().values() == s_once);
}

TEST_CASE("full objective gradient check on a tiny network") {
  // Two-neuron hidden layer plus a binary head; both KL forms.
  ClawModel model(3, {2}, HeadMode::single, AdaptMode::stochastic, 912);
  model.ensure_head(1, 2);
  Rng rng(6);
  Tensor x = Tensor::from(rng.normal_vector(4 * 3), {4, 3});
  std::vector<int> y{0, 1, 1, 0};
  std::vector<Tensor> eps{Tensor::from(rng.normal_vector(2), {2}),
                          Tensor::from(rng.normal_vector(2), {2})};
  // Nudge the adaptation parameters off their symmetric init.
  model.hidden()[0].p().values() = {0.4, 0.6};
  model.hidden()[0].a().values() = {0.3, -0.5};
  model.head(1).p().values() = {0.45, 0.55};
  model.head(1).a().values() = {0.2, -0.1};

  std::vector<Tensor*> leaves = model.trainable(1);
  leaves.push_back(&model.hidden()[0].s());
  leaves.push_back(&model.head(1).s());

  SUBCASE("first-task objective (log-scale prior KL)") {
    auto loss = [&] {
      Tensor ce = softmax_cross_entropy(model.forward(x, 1, eps), y);
      return add(model.kl(nullptr, 1), mul(ce, 100.0));
    };
    CHECK(max_rel_grad_err(leaves, loss) < 1e-4);
  }
  SUBCASE("later-task objective (previous-posterior KL)") {
    PosteriorSnapshot prev = model.snapshot();
    // Move away from the snapshot so the KL has curvature.
    for (auto& v : model.hidden()[0].gamma().values()) v += 0.05;
    for (auto& v : model.head(1).gamma().values()) v -= 0.03;
    auto loss = [&] {
      Tensor ce = softmax_cross_entropy(model.forward(x, 1, eps), y);
      return add(model.kl(&prev, 1), mul(ce, 100.0));
    };
    CHECK(max_rel_grad_err(leaves, loss) < 1e-4);
  }
}

TEST_CASE("snapshot serialization round trip") {
  ClawModel model(4, {3, 3}, HeadMode::multi, AdaptMode::stochastic, 77);
  model.ensure_head(1, 2);
  model.ensure_head(2, 2);
  Rng rng(8);
  for (auto& layer : model.hidden()) {
    for (auto& v : layer.p().values()) v = kPMin + (1.0 - 2.0 * kPMin) * rng.uniform();
    for (auto& v : layer.a().values()) v = rng.normal();
    for (auto& v : layer.s().values()) v = kSMin + 5.0 * rng.uniform();
  }

  const std::string path = (std::filesystem::temp_directory_path() / "claw_snap_test.bin").string();
  PosteriorSnapshot snap = model.snapshot();
  save_snapshot(snap, path);
  PosteriorSnapshot loaded = load_snapshot(path);

  REQUIRE(loaded.hidden.size() == snap.hidden.size());
  REQUIRE(loaded.heads.size() == snap.heads.size());
  for (std::size_t i = 0; i < snap.hidden.size(); ++i) {
    CHECK(loaded.hidden[i].gamma == snap.hidden[i].gamma);
    CHECK(loaded.hidden[i].p == snap.hidden[i].p);
    CHECK(loaded.hidden[i].w_var == snap.hidden[i].w_var);
  }

  // Predictions from the restored model are bit-identical.
  ClawModel restored = ClawModel::from_snapshot(loaded);
  Tensor x = Tensor::from(rng.normal_vector(5 * 4), {5, 4});
  Tensor out_a = model.forward(x, 2);
  Tensor out_b = restored.forward(x, 2);
  for (std::size_t i = 0; i < out_a.size(); ++i) CHECK(out_a.values()[i] == out_b.values()[i]);

  SUBCASE("corrupted magic is a format error") {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "WRONG" << std::string(64, '\0');
    os.close();
    CHECK_THROWS_AS(load_snapshot(path), FormatError);
  }
  SUBCASE("truncated file is a format error") {
    save_snapshot(snap, path);
    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_snapshot(path), FormatError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("ablation modes change the forward semantics") {
  Rng rng(9);
  std::vector<double> xv = rng.normal_vector(3 * 4);
  Tensor x = Tensor::from(xv, {3, 4});

  auto always = make_layer(4, 2, Activation::identity, AdaptMode::always, 55);
  auto never = make_layer(4, 2, Activation::identity, AdaptMode::never, 55);

  SUBCASE("always with a=0, s=2 equals never (b=0 both ways)") {
    Tensor out_a = always.forward(x);
    Tensor out_n = never.forward(x);
    for (std::size_t i = 0; i < out_a.size(); ++i) {
      CHECK(out_a.values()[i] == doctest::Approx(out_n.values()[i]).epsilon(1e-12));
    }
  }
  SUBCASE("always ignores eps and excludes p from training") {
    Tensor eps = Tensor::from(rng.normal_vector(2), {2});
    Tensor with_eps = always.forward(x, eps);
    Tensor without = always.forward(x);
    for (std::size_t i = 0; i < with_eps.size(); ++i) {
      CHECK(with_eps.values()[i] == without.values()[i]);
    }
    auto params = always.trainable();
    CHECK(std::find(params.begin(), params.end(), &always.p()) == params.end());
  }
  SUBCASE("never KL against the log-scale prior is constant zero") {
    CHECK(never.kl_to_logscale_prior().item() == 0.0);
  }
}
