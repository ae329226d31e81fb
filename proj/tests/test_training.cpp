#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "auglab/data.hpp"
#include "auglab/experiment.hpp"
#include "auglab/training.hpp"

using namespace auglab;

namespace {

RunOptions small_glyph_options(Mode mode, std::uint64_t seed = 3) {
  RunOptions opt;
  opt.task = Task::kGlyphs;
  opt.mode = mode;
  opt.seed = seed;
  opt.cls_c1 = 2;
  opt.cls_c2 = 2;
  opt.cls_hidden = 8;
  opt.phi_c1 = 2;
  opt.phi_c2 = 2;
  opt.phi_hidden = 4;
  opt.h_min = 0.3;
  opt.h_max = 0.9;
  return opt;
}

}  // namespace

TEST_CASE("objective value is mean cross-entropy minus lambda times mean entropy") {
  GlyphTask task = gen_glyphs(41, 8, 2);
  auto s = make_session(small_glyph_options(Mode::kInstaAug));
  std::vector<long long> idx = {0, 1, 2, 3, 4, 5};
  Tensor batch = task.train.stack(idx);
  auto labels = task.train.label_vector(idx);

  for (double lambda : {0.0, 0.1, 1.3}) {
    RngStream rng(77);
    ObjectiveStats stats;
    Tensor obj = instaaug_objective(s->classifier, *s->aug, batch, labels, lambda, rng, &stats);
    CHECK(stats.has_entropy);
    CHECK(obj.item() ==
          doctest::Approx(stats.mean_ce - lambda * stats.mean_entropy).epsilon(1e-12));
    Graph::active().clear();
  }
  // lambda = 0.1 with cross-entropy 2.0 and entropy 3.0 would read 1.7.
  CHECK(2.0 - 0.1 * 3.0 == doctest::Approx(1.7));
}

TEST_CASE("identity-only transform at lambda zero equals the plain classifier loss") {
  GlyphTask task = gen_glyphs(42, 8, 2);
  auto s = make_session(small_glyph_options(Mode::kNoAug));
  std::vector<long long> idx = {0, 1, 2, 3};
  Tensor batch = task.train.stack(idx);
  auto labels = task.train.label_vector(idx);

  RngStream rng(5);
  Tensor obj = instaaug_objective(s->classifier, *s->aug, batch, labels, 0.0, rng);
  Graph::active().clear();
  NoGradGuard ng;
  Tensor plain_loss = cross_entropy(s->classifier.forward(batch), labels);
  CHECK(obj.item() == plain_loss.item());
}

namespace {

// Fresh sessions start with zero biases, which parks thousands of relu units
// (zero glyph background) exactly on their kink where central differences
// and the subgradient legitimately disagree. Nudge every parameter to a
// generic point first.
void jitter_params(Session& s, std::uint64_t seed) {
  RngStream jitter(seed);
  for (auto* reg : {&s.f_reg, &s.phi_reg})
    for (const auto& [name, t] : reg->items()) {
      Tensor handle = t;
      for (auto& v : handle.data())
        v += jitter.uniform(0.01, 0.05) * (jitter.uniform() < 0.5 ? -1.0 : 1.0);
    }
}

}  // namespace

TEST_CASE("objective gradients match finite differences under frozen draws") {
  GlyphTask task = gen_glyphs(43, 6, 2);
  std::vector<long long> idx = {0, 1, 2, 3};
  Tensor batch = task.train.stack(idx);
  auto labels = task.train.label_vector(idx);

  SUBCASE("uniform law: every classifier and head parameter") {
    auto s = make_session(small_glyph_options(Mode::kInstaAug));
    jitter_params(*s, 987);
    auto f = [&](const std::vector<Tensor>&) {
      RngStream rng(123);
      return instaaug_objective(s->classifier, *s->aug, batch, labels, 0.05, rng);
    };
    std::vector<Tensor> params;
    for (const auto& [name, t] : s->f_reg.items()) params.push_back(t);
    for (const auto& [name, t] : s->phi_reg.items()) params.push_back(t);
    CHECK(finite_difference_check(f, params, 1e-6) < 1e-3);
  }

  SUBCASE("global uniform law (shared intervals)") {
    auto s = make_session(small_glyph_options(Mode::kAugerino));
    jitter_params(*s, 654);
    auto f = [&](const std::vector<Tensor>&) {
      RngStream rng(321);
      return instaaug_objective(s->classifier, *s->aug, batch, labels, 0.05, rng);
    };
    std::vector<Tensor> params;
    for (const auto& [name, t] : s->phi_reg.items()) params.push_back(t);
    CHECK(finite_difference_check(f, params, 1e-6) < 1e-3);
  }
}

TEST_CASE("categorical entropy path gradient matches finite differences") {
  // The crop law's loss term flows through REINFORCE (checked against exact
  // enumeration elsewhere); the entropy term is the differentiable path.
  CompositeTask task = gen_composites(44, 6, 2);
  RunOptions opt;
  opt.task = Task::kComposites;
  opt.mode = Mode::kInstaAug;
  opt.seed = 9;
  opt.lrp_blocks = 3;
  opt.lrp_channels = 2;
  opt.crop_out_side = 12;
  auto s = make_session(opt);
  Tensor batch = task.train.stack({0, 1, 2});

  auto f = [&](const std::vector<Tensor>&) {
    Tensor logits = s->lrp->forward_logits(batch);
    return mean(categorical_entropy_rows(logits));
  };
  std::vector<Tensor> params;
  for (const auto& [name, t] : s->phi_reg.items()) params.push_back(t);
  CHECK(finite_difference_check(f, params, 1e-5) < 1e-3);
}

TEST_CASE("lambda controller moves multiplicatively and only outside the band") {
  LambdaState s{0.5, 1.0, 2.0, 0.1};
  CHECK(lambda_update(s, 1.5).lambda == 0.5);             // inside: hold
  CHECK(lambda_update(s, 0.8).lambda ==
        doctest::Approx(0.55).epsilon(1e-12));            // below: raise
  CHECK(lambda_update(s, 2.5).lambda ==
        doctest::Approx(0.5 / 1.1).epsilon(1e-12));       // above: lower

  // Equal counts of up and down return to the start (multiplicative symmetry).
  LambdaState t{0.37, 1.0, 2.0, 0.25};
  for (int i = 0; i < 6; ++i) t = lambda_update(t, 0.5);
  for (int i = 0; i < 6; ++i) t = lambda_update(t, 3.0);
  CHECK(t.lambda == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("log lambda changes by exactly +-ln(1+eta) or zero, and stays positive") {
  RngStream rng(71);
  LambdaState s{1e-3, 1.0, 2.0, 0.1};
  const double delta = std::log(1.1);
  for (int i = 0; i < 2000; ++i) {
    const double h = rng.uniform(0.0, 3.0);
    LambdaState next = lambda_update(s, h);
    const double change = std::log(next.lambda) - std::log(s.lambda);
    if (h < s.h_min)
      CHECK(change == doctest::Approx(delta).epsilon(1e-9));
    else if (h > s.h_max)
      CHECK(change == doctest::Approx(-delta).epsilon(1e-9));
    else
      CHECK(change == 0.0);
    CHECK(next.lambda > 0.0);
    s = next;
  }
}

TEST_CASE("ntxent closed forms") {
  SUBCASE("orthogonal cross pairs at temperature 1") {
    // Two examples, identical positives, orthogonal everything else.
    Tensor z({4, 4}, {1, 0, 0, 0,
                      0, 1, 0, 0,
                      1, 0, 0, 0,
                      0, 1, 0, 0});
    Tensor per_view = ntxent_per_view(z, 1.0);
    const double expect = std::log(std::exp(1.0) + 2.0) - 1.0;
    CHECK(expect == doctest::Approx(0.5514).epsilon(1e-3));
    for (long long i = 0; i < 4; ++i)
      CHECK(per_view.value()[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("identical embeddings for every view give ln(2N-1)") {
    const int n = 3;
    std::vector<double> data;
    for (int i = 0; i < 2 * n; ++i) {
      data.push_back(0.6);
      data.push_back(-0.8);
    }
    Tensor z({2 * n, 2}, data);
    Tensor per_view = ntxent_per_view(z, 0.7);
    for (long long i = 0; i < 2 * n; ++i)
      CHECK(per_view.value()[i] == doctest::Approx(std::log(2.0 * n - 1.0)).epsilon(1e-12));
  }

  SUBCASE("loss is invariant to a global rotation of the embedding space") {
    RngStream rng(72);
    std::vector<double> data(8 * 4);
    for (auto& v : data) v = rng.uniform(-1.0, 1.0);
    Tensor z({8, 4}, data);
    const double base = mean(ntxent_per_view(z, 0.5)).item();

    const double c = std::cos(1.1), s = std::sin(1.1);
    std::vector<double> rotated = data;
    for (int i = 0; i < 8; ++i) {
      const double a = data[i * 4], b = data[i * 4 + 2];
      rotated[i * 4] = c * a - s * b;
      rotated[i * 4 + 2] = s * a + c * b;
    }
    Tensor zr({8, 4}, rotated);
    CHECK(mean(ntxent_per_view(zr, 0.5)).item() == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("tta with one sample equals the single-view prediction path") {
  GlyphTask task = gen_glyphs(45, 8, 8);
  auto s = make_session(small_glyph_options(Mode::kNoAug));
  for (long long i = 0; i < 8; ++i) {
    RngStream rng(100 + i);
    Tensor img = task.test.example(i);
    auto tta = tta_predict(s->classifier, *s->aug, img, 1, rng);
    NoGradGuard ng;
    Tensor logits =
        s->classifier.forward(reshape(img, {1, img.shape()[0], img.shape()[1], img.shape()[2]}));
    CHECK(tta.label == argmax_row(logits, 0));
    for (long long j = 0; j < logits.size(); ++j)
      CHECK(tta.mean_logits[j] == logits.value()[j]);
  }
}

TEST_CASE("a law collapsed onto the identity crop matches the plain prediction for any n") {
  CompositeTask task = gen_composites(46, 4, 4);
  RunOptions opt;
  opt.task = Task::kComposites;
  opt.mode = Mode::kGlobalInstaAug;
  opt.seed = 11;
  opt.lrp_blocks = 0;  // single whole-image patch: the identity transform
  opt.crop_out_side = 16;
  auto s = make_session(opt);

  for (long long i = 0; i < 4; ++i) {
    Tensor img = task.test.example(i);
    RngStream rng(7);
    auto plain_view = s->aug->plain(task.test.stack({i}));
    NoGradGuard ng;
    Tensor plain_logits = s->classifier.forward(plain_view);
    for (int n : {1, 3, 9}) {
      RngStream rng_n(7);
      auto tta = tta_predict(s->classifier, *s->aug, img, n, rng_n);
      CHECK(tta.label == argmax_row(plain_logits, 0));
      for (long long j = 0; j < plain_logits.size(); ++j)
        CHECK(tta.mean_logits[j] == doctest::Approx(plain_logits.value()[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("exact logit ties break to the lowest class index") {
  GlyphTask task = gen_glyphs(47, 2, 2);
  auto opt = small_glyph_options(Mode::kNoAug);
  auto s = make_session(opt);
  // Zero the classifier's head: every class logit becomes the same bias.
  for (const auto& [name, t] : s->f_reg.items())
    if (name == "f.fc2.w" || name == "f.fc2.b") {
      Tensor handle = t;
      for (auto& v : handle.data()) v = 0.0;
    }
  RngStream rng(3);
  auto tta = tta_predict(s->classifier, *s->aug, task.test.example(0), 2, rng);
  CHECK(tta.mean_logits[0] == tta.mean_logits[1]);
  CHECK(tta.label == 0);
}

TEST_CASE("tta mean-logit variance shrinks like 1/n") {
  GlyphTask task = gen_glyphs(48, 4, 1);
  auto s = make_session(small_glyph_options(Mode::kInstaAug, 21));
  Tensor img = task.train.example(0);

  RngStream stream(55);
  auto variance_at = [&](int n, int reps) {
    std::vector<double> firsts(reps);
    for (int r = 0; r < reps; ++r) {
      RngStream rng = stream.split(static_cast<std::uint64_t>(n) * 10000 + r);
      firsts[r] = tta_predict(s->classifier, *s->aug, img, n, rng).mean_logits[0];
    }
    double mean_v = 0.0, m2 = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double d = firsts[r] - mean_v;
      mean_v += d / (r + 1);
      m2 += d * (firsts[r] - mean_v);
    }
    return m2 / (reps - 1.0);
  };

  const int reps = 1000;
  const double v1 = variance_at(1, reps);
  const double v10 = variance_at(10, reps);
  const double v100 = variance_at(100, reps);
  REQUIRE(v1 > 0.0);
  CHECK(v10 == doctest::Approx(v1 / 10.0).epsilon(0.35));
  CHECK(v100 == doctest::Approx(v1 / 100.0).epsilon(0.35));
}
