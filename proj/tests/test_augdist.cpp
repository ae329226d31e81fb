#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "auglab/augdist.hpp"
#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"
#include "oracles.hpp"

using namespace auglab;

namespace {

UniformParams make_uniform(std::vector<double> lo, std::vector<double> hi,
                           std::vector<TransformDim> dims) {
  UniformParams p;
  const int k = static_cast<int>(lo.size());
  p.lo = Tensor(Shape{k}, std::move(lo));
  p.hi = Tensor(Shape{k}, std::move(hi));
  p.dims = std::move(dims);
  return p;
}

}  // namespace

TEST_CASE("uniform entropy closed forms") {
  auto u01 = make_uniform({0.0}, {1.0}, {TransformDim::kSatShift});
  CHECK(uniform_entropy(u01).item() == 0.0);

  auto quarter = make_uniform({-kPi / 4}, {kPi / 4}, {TransformDim::kRotation});
  CHECK(uniform_entropy(quarter).item() == doctest::Approx(std::log(kPi / 2)).epsilon(1e-12));
  CHECK(uniform_entropy(quarter).item() == doctest::Approx(0.45158).epsilon(1e-4));

  auto two_dim = make_uniform({0.0, 0.0}, {std::exp(1.0), std::exp(1.0)},
                              {TransformDim::kRotation, TransformDim::kRotation});
  CHECK(uniform_entropy(two_dim).item() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("uniform entropy matches a Monte-Carlo histogram estimate") {
  auto quarter = make_uniform({-kPi / 4}, {kPi / 4}, {TransformDim::kRotation});
  RngStream rng(31);
  std::vector<double> samples(1000000);
  for (auto& s : samples) {
    Tensor theta = sample_uniform(quarter, rng);
    s = theta.value()[0];
  }
  const double est = oracles::histogram_entropy(samples, -kPi / 4, kPi / 4, 1000);
  CHECK(std::abs(est - uniform_entropy(quarter).item()) < 1e-2);
}

TEST_CASE("uniform entropy adds over independent dimensions") {
  RngStream rng(32);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> lo(3), hi(3);
    double expect = 0.0;
    for (int k = 0; k < 3; ++k) {
      lo[k] = rng.uniform(-1.0, 0.0);
      hi[k] = lo[k] + rng.uniform(0.01, 1.0);
      expect += std::log(hi[k] - lo[k]);
    }
    auto p = make_uniform(lo, hi,
                          {TransformDim::kHueShift, TransformDim::kSatShift,
                           TransformDim::kValShift});
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
      auto single = make_uniform({lo[k]}, {hi[k]}, {p.dims[k]});
      total += uniform_entropy(single).item();
    }
    CHECK(uniform_entropy(p).item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(uniform_entropy(p).item() == doctest::Approx(total).epsilon(1e-12));
  }
}

TEST_CASE("uniform entropy rejects zero-width intervals") {
  auto p = make_uniform({0.3}, {0.3}, {TransformDim::kSatShift});
  CHECK_THROWS_AS(uniform_entropy(p), TensorError);
}

TEST_CASE("categorical entropy closed forms") {
  CategoricalParams uniform20{Tensor::zeros({20})};
  CHECK(categorical_entropy(uniform20).item() == doctest::Approx(std::log(20.0)).epsilon(1e-12));

  std::vector<double> spiked(20, 0.0);
  spiked[7] = 1e6;
  CategoricalParams onehot{Tensor({20}, spiked)};
  CHECK(std::abs(categorical_entropy(onehot).item()) < 1e-6);

  CategoricalParams p{Tensor({3}, {std::log(0.5), std::log(0.25), std::log(0.25)})};
  CHECK(categorical_entropy(p).item() ==
        doctest::Approx(oracles::discrete_entropy({0.5, 0.25, 0.25})).epsilon(1e-12));
  CHECK(categorical_entropy(p).item() == doctest::Approx(1.03972).epsilon(1e-5));
}

TEST_CASE("categorical entropy matches a Monte-Carlo frequency estimate") {
  RngStream rng(33);
  std::vector<double> logits(12);
  for (auto& l : logits) l = rng.uniform(-1.5, 1.5);
  CategoricalParams p{Tensor({12}, logits)};
  std::vector<long long> counts(12, 0);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) ++counts[categorical_index(logits, rng.uniform())];
  std::vector<double> freq(12);
  for (int k = 0; k < 12; ++k) freq[k] = counts[k] / static_cast<double>(n);
  CHECK(std::abs(oracles::discrete_entropy(freq) - categorical_entropy(p).item()) < 1e-2);
}

TEST_CASE("categorical entropy is invariant to logit shifts") {
  RngStream rng(34);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> logits(6);
    for (auto& l : logits) l = rng.uniform(-2.0, 2.0);
    CategoricalParams p{Tensor({6}, logits)};
    const double base = categorical_entropy(p).item();
    const double shift = rng.uniform(-50.0, 50.0);
    for (auto& l : logits) l += shift;
    CategoricalParams q{Tensor({6}, logits)};
    CHECK(std::abs(categorical_entropy(q).item() - base) < 1e-12);
  }
}

TEST_CASE("sample_uniform endpoints and midpoint") {
  auto p = make_uniform({-1.0}, {3.0}, {TransformDim::kRotation});
  CHECK(sample_uniform(p, std::vector<double>{0.0}).value()[0] == -1.0);
  CHECK(sample_uniform(p, std::vector<double>{1.0}).value()[0] == 3.0);
  CHECK(sample_uniform(p, std::vector<double>{0.5}).value()[0] == 1.0);
  CHECK_THROWS_AS(sample_uniform(p, std::vector<double>{1.5}), TensorError);
}

TEST_CASE("sample_uniform pathwise derivatives are 1-u and u") {
  for (double u : {0.0, 0.25, 0.7, 1.0}) {
    auto p = make_uniform({-0.5}, {0.8}, {TransformDim::kRotation});
    p.lo.set_requires_grad(true);
    p.hi.set_requires_grad(true);
    Tensor theta = sample_uniform(p, std::vector<double>{u});
    backward(sum(theta));
    CHECK(p.lo.grad()[0] == doctest::Approx(1.0 - u).epsilon(1e-12));
    CHECK(p.hi.grad()[0] == doctest::Approx(u).epsilon(1e-12));
  }
}

TEST_CASE("reparameterized samples pass a Kolmogorov-Smirnov uniformity test") {
  auto p = make_uniform({-0.7}, {1.9}, {TransformDim::kRotation});
  RngStream rng(35);
  const int n = 10000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = sample_uniform(p, rng).value()[0];
  std::sort(xs.begin(), xs.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = (xs[i] + 0.7) / 2.6;
    d = std::max(d, std::max(cdf - i / static_cast<double>(n),
                             (i + 1) / static_cast<double>(n) - cdf));
  }
  // 1% critical value for the one-sample KS statistic.
  CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sample_categorical basics") {
  std::vector<double> spiked(5, -1e6);
  spiked[3] = 0.0;
  CategoricalParams onehot{Tensor({5}, spiked)};
  for (double u : {0.0, 0.3, 0.6, 0.999})
    CHECK(sample_categorical(onehot, u).index == 3);

  CategoricalParams two{Tensor({2}, {std::log(0.25), std::log(0.75)})};
  CHECK(sample_categorical(two, 0.1).index == 0);
  CHECK(sample_categorical(two, 0.5).index == 1);
  CHECK_THROWS_AS(sample_categorical(two, 1.0), TensorError);

  // Sampled log-probability is tape-connected to the logits.
  CategoricalParams live{Tensor({3}, {0.1, 0.4, -0.2})};
  live.logits.set_requires_grad(true);
  auto s = sample_categorical(live, 0.5);
  backward(s.log_prob);
  CHECK(live.logits.has_grad());
}

TEST_CASE("categorical sampling frequencies match the probabilities") {
  RngStream rng(46);
  std::vector<double> logits = {0.2, -0.7, 1.1, 0.0};
  CategoricalParams p{Tensor({4}, logits)};
  std::vector<double> probs = exp(log_softmax(p.logits)).value();

  const int n = 100000;
  std::vector<long long> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[categorical_index(logits, rng.uniform())];
  for (int k = 0; k < 4; ++k) {
    const double freq = counts[k] / static_cast<double>(n);
    const double se = std::sqrt(probs[k] * (1.0 - probs[k]) / n);
    CHECK(std::abs(freq - probs[k]) < 3.0 * se);
  }
}

TEST_CASE("equal losses with a mean baseline give an exactly zero gradient") {
  Tensor logits({3}, {0.4, -0.2, 0.9});
  std::vector<long long> idx = {0, 2, 1, 1};
  std::vector<double> losses(4, 1.37);
  auto grad = reinforce_grad(logits, idx, losses, 1.37);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("the surrogate backward equals the direct estimate") {
  RngStream rng(37);
  std::vector<double> logits = {0.3, -0.5, 0.2, 1.0};
  std::vector<long long> idx;
  std::vector<double> losses;
  for (int b = 0; b < 16; ++b) {
    idx.push_back(categorical_index(logits, rng.uniform()));
    losses.push_back(rng.uniform(0.0, 2.0));
  }
  Tensor live({4}, logits);
  live.set_requires_grad(true);
  Tensor lp = gather(log_softmax(live), idx);
  backward(reinforce_surrogate(lp, losses, 0.8));
  auto direct = reinforce_grad(Tensor({4}, logits), idx, losses, 0.8);
  for (int j = 0; j < 4; ++j)
    CHECK(live.grad()[j] == doctest::Approx(direct[j]).epsilon(1e-12));
}

TEST_CASE("REINFORCE is unbiased on the two-category example") {
  std::vector<double> logits = {0.0, 0.0};
  std::vector<double> costs = {0.0, 1.0};
  auto exact = oracles::categorical_expected_cost_grad(logits, costs);
  CHECK(exact[0] == doctest::Approx(-0.25).epsilon(1e-12));

  RngStream rng(38);
  Tensor lt({2}, logits);
  const int n = 100000;
  double mean0 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const long long s = categorical_index(logits, rng.uniform());
    auto g = reinforce_grad(lt, {s}, {costs[s]}, 0.5);
    const double delta = g[0] - mean0;
    mean0 += delta / (i + 1);
    m2 += delta * (g[0] - mean0);
  }
  const double se = std::sqrt(m2 / (n - 1.0) / n);
  CHECK(std::abs(mean0 - exact[0]) <= 3.0 * se + 1e-12);
}

TEST_CASE("REINFORCE is unbiased vs exact enumeration up to 8 categories") {
  RngStream rng(39);
  for (int k : {3, 5, 8}) {
    std::vector<double> logits(k), costs(k);
    for (auto& l : logits) l = rng.uniform(-1.0, 1.0);
    for (auto& c : costs) c = rng.uniform(0.0, 3.0);
    auto exact = oracles::categorical_expected_cost_grad(logits, costs);
    double mean_cost = 0.0;
    for (double c : costs) mean_cost += c / k;

    Tensor lt({k}, logits);
    const int n = 100000;
    std::vector<double> mean(k, 0.0), m2(k, 0.0);
    for (int i = 0; i < n; ++i) {
      const long long s = categorical_index(logits, rng.uniform());
      auto g = reinforce_grad(lt, {s}, {costs[s]}, mean_cost);
      for (int j = 0; j < k; ++j) {
        const double delta = g[j] - mean[j];
        mean[j] += delta / (i + 1);
        m2[j] += delta * (g[j] - mean[j]);
      }
    }
    for (int j = 0; j < k; ++j) {
      const double se = std::sqrt(m2[j] / (n - 1.0) / n);
      CAPTURE(k);
      CAPTURE(j);
      CHECK(std::abs(mean[j] - exact[j]) < 3.0 * se);
    }
  }
}

TEST_CASE("leave-one-out baselines preserve the batch estimator's mean") {
  // E[g] with LOO baselines equals the exact gradient; a same-batch mean
  // baseline would shrink it by (1 - 1/B). Checked with B = 2 where the
  // effect is largest.
  RngStream rng(40);
  std::vector<double> logits = {0.3, -0.4, 0.1};
  std::vector<double> costs = {0.2, 1.4, 0.7};
  auto exact = oracles::categorical_expected_cost_grad(logits, costs);

  const int n = 200000;
  std::vector<double> mean(3, 0.0), m2(3, 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<long long> idx = {categorical_index(logits, rng.uniform()),
                                  categorical_index(logits, rng.uniform())};
    std::vector<double> ls = {costs[idx[0]], costs[idx[1]]};
    auto bl = loo_baselines(ls);
    Tensor live({3}, logits);
    live.set_requires_grad(true);
    Tensor lp = gather(log_softmax(live), idx);
    backward(reinforce_surrogate(lp, ls, bl));
    for (int j = 0; j < 3; ++j) {
      const double delta = live.grad()[j] - mean[j];
      mean[j] += delta / (i + 1);
      m2[j] += delta * (live.grad()[j] - mean[j]);
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double se = std::sqrt(m2[j] / (n - 1.0) / n);
    CHECK(std::abs(mean[j] - exact[j]) < 3.5 * se);
  }
}

TEST_CASE("empty batches are rejected") {
  Tensor logits({2}, {0.0, 0.0});
  CHECK_THROWS_AS(reinforce_grad(logits, {}, {}, 0.0), TensorError);
  CHECK_THROWS_AS(reinforce_surrogate(Tensor({1}, {0.0}), {}, 0.0), TensorError);
}

TEST_CASE("UniformParams invariants are enforced") {
  auto bad_width = make_uniform({0.0}, {0.0005}, {TransformDim::kRotation});
  CHECK_THROWS_AS(bad_width.validate(), TensorError);
  auto bad_range = make_uniform({-4.0}, {1.0}, {TransformDim::kRotation});
  CHECK_THROWS_AS(bad_range.validate(), TensorError);
  auto ok = make_uniform({-0.3}, {0.4}, {TransformDim::kHueShift});
  CHECK_NOTHROW(ok.validate());
}
