#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "auglab/checkpoint.hpp"
#include "auglab/data.hpp"
#include "auglab/training.hpp"

namespace auglab {

constexpr std::uint64_t kEvalStreamTag = 0xE7A1;

enum class Task { kGlyphs, kTextures, kComposites };
enum class Mode {
  kNoAug,
  kInstaAug,
  kAugerino,
  kGlobalInstaAug,
  kRandomAug,
  kFixedClassifier,
  kContrastive,
};

struct RunOptions {
  Task task = Task::kGlyphs;
  Mode mode = Mode::kInstaAug;
  int epochs = 30;
  int batch_size = 64;
  int warmup_epochs = 5;
  double lr_classifier = 1e-2;
  double lr_phi = 1e-4;
  double momentum = 0.9;
  double momentum_phi = 0.9;
  double weight_decay_classifier = 0.0;
  double weight_decay_phi = 0.0;
  double lambda_init = 1e-3;
  double h_min = 0.2;
  double h_max = 0.7;
  double eta = 0.1;
  bool dynamic_lambda = true;
  bool lambda_per_batch = false;  // controller cadence: epoch mean (default) or per batch
  std::uint64_t seed = 0;
  int tta_samples = 5;

  int crop_out_side = 24;
  int lrp_blocks = 4;
  int lrp_channels = 16;
  double lrp_layer_prior = 0.0;
  double random_crop_min = 0.35;
  double random_crop_max = 1.0;
  // Random-jitter baseline ranges: rotation uses [-rot, rot]; HSV uses
  // [-h,h] x [-s,s] x [-v,v].
  double random_rotation = 0.6;
  double random_dh = 0.05;
  double random_ds = 0.25;
  double random_dv = 0.35;

  double contrast_temperature = 0.5;
  int proj_dim = 16;
  int probe_steps = 300;
  double probe_lr = 0.2;

  int cls_c1 = 8, cls_c2 = 16, cls_hidden = 64;
  int phi_c1 = 8, phi_c2 = 16, phi_hidden = 32;

  std::string fixed_classifier_path;
};

struct TaskShape {
  int channels;
  int image_side;
  int classes;
};

inline TaskShape task_shape(Task t) {
  switch (t) {
    case Task::kGlyphs: return {1, kGlyphSide, kGlyphClasses};
    case Task::kTextures: return {3, kTextureSide, kTextureClasses};
    default: return {3, kCompositeSide, kCompositeClasses};
  }
}

inline std::vector<TransformDim> task_dims(Task t) {
  if (t == Task::kGlyphs) return {TransformDim::kRotation};
  return {TransformDim::kHueShift, TransformDim::kSatShift, TransformDim::kValShift};
}

struct MetricsRecord {
  long long epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> tta_acc;
  std::optional<double> mean_entropy;
  double lambda = 0.0;
  double wall_seconds = 0.0;
};

using MetricsCallback = std::function<void(const MetricsRecord&)>;

// One training run's state: both networks, the augmentation law, optimizer
// moments, the lambda controller, and the RNG stream. Checkpoints capture
// all of it, so a reload resumes bit-exactly.
struct Session {
  RunOptions opt;
  TaskShape shape{};
  int classifier_side = 0;

  ParamRegistry f_reg;
  ParamRegistry phi_reg;
  SmallCnn classifier;
  Linear projection;  // contrastive only

  std::unique_ptr<UniformHead> head;
  std::unique_ptr<GlobalUniform> global_uniform;
  std::unique_ptr<LrpNet> lrp;
  std::unique_ptr<GlobalLogits> global_logits;
  std::unique_ptr<Augmenter> aug;

  std::unique_ptr<SgdMomentum> opt_f;
  std::unique_ptr<SgdMomentum> opt_phi;

  LambdaState lam;
  long long step = 0;
  long long epoch = 0;
  RngStream rng{0};
  bool f_frozen = false;

  bool crop_task() const { return opt.task == Task::kComposites; }
};

inline bool uses_crop(const RunOptions& opt) { return opt.task == Task::kComposites; }

inline std::unique_ptr<Session> make_session(const RunOptions& opt) {
  auto s = std::make_unique<Session>();
  s->opt = opt;
  s->shape = task_shape(opt.task);
  s->classifier_side = uses_crop(opt) ? opt.crop_out_side : s->shape.image_side;
  s->rng = RngStream(opt.seed).split(0x7EA1);

  RngStream f_init = RngStream(opt.seed).split(0xF17);
  RngStream phi_init = RngStream(opt.seed).split(0xF18);

  s->classifier = SmallCnn(s->f_reg, "f", s->shape.channels, s->classifier_side, opt.cls_c1,
                           opt.cls_c2, opt.cls_hidden, s->shape.classes, f_init);
  if (opt.mode == Mode::kContrastive)
    s->projection = Linear(s->f_reg, "proj", opt.cls_hidden, opt.proj_dim, f_init);

  const Mode aug_mode = opt.mode;
  const bool instance_mode =
      aug_mode == Mode::kInstaAug || aug_mode == Mode::kFixedClassifier ||
      (aug_mode == Mode::kContrastive);
  if (uses_crop(opt)) {
    if (aug_mode == Mode::kAugerino)
      throw TensorError("config: augerino supports rotation/hsv transforms only");
    if (instance_mode) {
      s->lrp = std::make_unique<LrpNet>(s->phi_reg, "phi", s->shape.channels,
                                        s->shape.image_side, opt.lrp_blocks, opt.lrp_channels,
                                        phi_init, opt.lrp_layer_prior);
      s->aug = std::make_unique<CropAugmenter>(s->lrp.get(), nullptr, opt.crop_out_side);
    } else if (aug_mode == Mode::kGlobalInstaAug) {
      s->global_logits = std::make_unique<GlobalLogits>(s->phi_reg, "phi", s->shape.image_side,
                                                        opt.lrp_blocks, phi_init);
      s->aug = std::make_unique<CropAugmenter>(nullptr, s->global_logits.get(),
                                               opt.crop_out_side);
    } else if (aug_mode == Mode::kRandomAug) {
      s->aug = std::make_unique<RandomCropAugmenter>(opt.crop_out_side, opt.random_crop_min,
                                                     opt.random_crop_max);
    } else {
      s->aug = std::make_unique<NoAugmenter>(opt.crop_out_side);
    }
  } else {
    if (aug_mode == Mode::kGlobalInstaAug)
      throw TensorError("config: global-instaaug requires the crop transform");
    const auto dims = task_dims(opt.task);
    if (instance_mode) {
      s->head = std::make_unique<UniformHead>(s->phi_reg, "phi", s->shape.channels,
                                              s->shape.image_side, dims, phi_init, opt.phi_c1,
                                              opt.phi_c2, opt.phi_hidden);
      s->aug = std::make_unique<UniformAugmenter>(s->head.get(), nullptr);
    } else if (aug_mode == Mode::kAugerino) {
      s->global_uniform = std::make_unique<GlobalUniform>(s->phi_reg, "phi", dims, phi_init);
      s->aug = std::make_unique<UniformAugmenter>(nullptr, s->global_uniform.get());
    } else if (aug_mode == Mode::kRandomAug) {
      std::vector<double> lo, hi;
      if (opt.task == Task::kGlyphs) {
        lo = {-opt.random_rotation};
        hi = {opt.random_rotation};
      } else {
        lo = {-opt.random_dh, -opt.random_ds, -opt.random_dv};
        hi = {opt.random_dh, opt.random_ds, opt.random_dv};
      }
      s->aug = std::make_unique<RandomUniformAugmenter>(dims, lo, hi);
    } else {
      s->aug = std::make_unique<NoAugmenter>(0);
    }
  }

  s->opt_f = std::make_unique<SgdMomentum>(s->f_reg.tensors(), opt.lr_classifier, opt.momentum,
                                           opt.weight_decay_classifier);
  s->opt_phi = std::make_unique<SgdMomentum>(s->phi_reg.tensors(), opt.lr_phi, opt.momentum_phi,
                                             opt.weight_decay_phi);
  s->lam = {opt.lambda_init, opt.h_min, opt.h_max, opt.eta};

  if (opt.mode == Mode::kFixedClassifier) {
    if (opt.fixed_classifier_path.empty())
      throw TensorError("config: fixed-classifier mode needs a classifier checkpoint");
    s->f_reg.load_values(read_tensor_map(opt.fixed_classifier_path), "f.");
    s->f_frozen = true;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline void save_session(const Session& s, const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, t] : s.f_reg.items()) tensors.emplace_back("f." + name, t);
  for (const auto& [name, t] : s.phi_reg.items()) tensors.emplace_back("phi." + name, t);
  const auto& fv = s.opt_f->velocity();
  for (std::size_t i = 0; i < fv.size(); ++i)
    tensors.emplace_back("opt.f." + s.f_reg.items()[i].first,
                         Tensor(s.f_reg.items()[i].second.shape(), fv[i]));
  const auto& pv = s.opt_phi->velocity();
  for (std::size_t i = 0; i < pv.size(); ++i)
    tensors.emplace_back("opt.phi." + s.phi_reg.items()[i].first,
                         Tensor(s.phi_reg.items()[i].second.shape(), pv[i]));
  tensors.emplace_back("ctrl", Tensor({6}, {s.lam.lambda, s.lam.h_min, s.lam.h_max, s.lam.eta,
                                            static_cast<double>(s.step),
                                            static_cast<double>(s.epoch)}));
  tensors.emplace_back("rng", Tensor({2}, {std::bit_cast<double>(s.rng.key()),
                                           std::bit_cast<double>(s.rng.counter())}));
  write_tensor_file(path, tensors);
}

inline void load_session(Session& s, const std::string& path) {
  auto named = read_tensor_map(path);
  s.f_reg.load_values(named, "f.");
  s.phi_reg.load_values(named, "phi.");
  for (std::size_t i = 0; i < s.f_reg.items().size(); ++i)
    s.opt_f->velocity()[i] = named.at("opt.f." + s.f_reg.items()[i].first).value();
  for (std::size_t i = 0; i < s.phi_reg.items().size(); ++i)
    s.opt_phi->velocity()[i] = named.at("opt.phi." + s.phi_reg.items()[i].first).value();
  const auto& ctrl = named.at("ctrl").value();
  s.lam = {ctrl[0], ctrl[1], ctrl[2], ctrl[3]};
  s.step = static_cast<long long>(ctrl[4]);
  s.epoch = static_cast<long long>(ctrl[5]);
  const auto& rng = named.at("rng").value();
  s.rng = RngStream::restore(std::bit_cast<std::uint64_t>(rng[0]),
                             std::bit_cast<std::uint64_t>(rng[1]));
}

// ---------------------------------------------------------------------------
// Supervised training loop (joint, fixed-classifier, baselines)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<long long> shuffled_indices(long long n, RngStream& rng) {
  std::vector<long long> idx(n);
  for (long long i = 0; i < n; ++i) idx[i] = i;
  for (long long i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
  return idx;
}

}  // namespace detail

inline void run_supervised(Session& s, const Dataset& train, const Dataset& test,
                           const MetricsCallback& on_epoch) {
  const RunOptions& opt = s.opt;
  if (opt.mode == Mode::kContrastive)
    throw TensorError("run_supervised: contrastive mode has its own loop");
  NoAugmenter warmup_view(s.crop_task() ? opt.crop_out_side : 0);
  const int warmup = s.f_frozen ? 0 : opt.warmup_epochs;
  RngStream eval_base = RngStream(opt.seed).split(kEvalStreamTag);

  for (; s.epoch < opt.epochs;) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warm = s.epoch < warmup;
    auto indices = detail::shuffled_indices(train.size(), s.rng);

    double ce_sum = 0.0, entropy_sum = 0.0;
    long long correct = 0, seen = 0, entropy_batches = 0;
    double entropy_weight = 0.0;
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      std::vector<long long> batch_idx(
          indices.begin() + start,
          indices.begin() + std::min(indices.size(), start + opt.batch_size));
      Tensor batch = train.stack(batch_idx);
      auto labels = train.label_vector(batch_idx);

      s.opt_f->zero_grad();
      s.opt_phi->zero_grad();
      ObjectiveStats stats;
      Tensor objective;
      try {
        if (warm) {
          Tensor logits = s.classifier.forward(warmup_view.plain(batch));
          Tensor ce = cross_entropy(logits, labels);
          stats.mean_ce = ce.item();
          stats.correct = count_correct(logits, labels);
          objective = ce;
        } else {
          objective = instaaug_objective(s.classifier, *s.aug, batch, labels, s.lam.lambda,
                                         s.rng, &stats);
        }
        backward(objective);
      } catch (const NonFiniteError& e) {
        Graph::active().clear();
        throw NonFiniteError("divergence at epoch " + std::to_string(s.epoch) + ", step " +
                             std::to_string(s.step) + ": " + e.what());
      }
      if (!s.f_frozen) s.opt_f->step();
      if (!warm) s.opt_phi->step();
      if (!warm && opt.dynamic_lambda && opt.lambda_per_batch && stats.has_entropy)
        s.lam = lambda_update(s.lam, stats.mean_entropy);

      ce_sum += stats.mean_ce * static_cast<double>(batch_idx.size());
      correct += stats.correct;
      seen += static_cast<long long>(batch_idx.size());
      if (stats.has_entropy) {
        entropy_sum += stats.mean_entropy * static_cast<double>(batch_idx.size());
        entropy_weight += static_cast<double>(batch_idx.size());
        ++entropy_batches;
      }
      ++s.step;
    }
    ++s.epoch;

    MetricsRecord rec;
    rec.epoch = s.epoch;
    rec.train_loss = ce_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    rec.test_acc = evaluate_accuracy(s.classifier, *s.aug, test);
    RngStream tta_stream = eval_base.split(static_cast<std::uint64_t>(s.epoch));
    rec.tta_acc = evaluate_tta_accuracy(s.classifier, *s.aug, test, opt.tta_samples, tta_stream);
    if (entropy_batches > 0) {
      rec.mean_entropy = entropy_sum / entropy_weight;
    } else if (s.aug->learnable()) {
      // Warmup epochs: report the current law's entropy without sampling.
      rec.mean_entropy = s.aug->mean_entropy(test.stack(detail::shuffled_indices(
          std::min<long long>(test.size(), 256), s.rng)));
    }
    if (!warm && opt.dynamic_lambda && !opt.lambda_per_batch && rec.mean_entropy.has_value())
      s.lam = lambda_update(s.lam, *rec.mean_entropy);
    rec.lambda = s.lam.lambda;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) on_epoch(rec);
  }
}

// ---------------------------------------------------------------------------
// Contrastive training (normalized-temperature cross-entropy over two
// sampled views per example) plus a linear probe for evaluation.
// ---------------------------------------------------------------------------

inline Tensor l2_normalize_rows(const Tensor& z) {
  Tensor ss = sum_axis(mul(z, z), 1);
  return scale_rows(z, pow_scalar(add(ss, 1e-12), -0.5));
}

struct ContrastiveStats {
  double loss = 0.0;
  double top1 = 0.0;  // fraction of views ranking their positive first
};

// Views arrive in block layout: rows [0, B) are first views, [B, 2B) the
// second view of the same example.
inline Tensor ntxent_per_view(const Tensor& embeddings, double temperature,
                              ContrastiveStats* stats = nullptr) {
  const long long n2 = embeddings.shape()[0];
  if (n2 < 4 || n2 % 2 != 0) throw TensorError("ntxent: need at least two examples (4 views)");
  const long long b = n2 / 2;
  Tensor z = l2_normalize_rows(embeddings);
  Tensor sims = mul(matmul(z, transpose(z)), 1.0 / temperature);
  std::vector<double> mask(n2 * n2, 0.0);
  for (long long i = 0; i < n2; ++i) mask[i * n2 + i] = -1e9;
  Tensor ls = log_softmax(add(sims, Tensor({static_cast<int>(n2), static_cast<int>(n2)}, mask)),
                          -1);
  std::vector<long long> pos(n2);
  for (long long i = 0; i < n2; ++i) pos[i] = (i + b) % n2;
  Tensor per_view = neg(gather_rows(ls, pos));
  if (stats) {
    stats->loss = mean(per_view).item();
    long long hits = 0;
    for (long long i = 0; i < n2; ++i) {
      long long best = i == 0 ? 1 : 0;
      for (long long j = 0; j < n2; ++j) {
        if (j == i) continue;
        if (sims.value()[i * n2 + j] > sims.value()[i * n2 + best]) best = j;
      }
      if (best == pos[i]) ++hits;
    }
    stats->top1 = static_cast<double>(hits) / static_cast<double>(n2);
  }
  return per_view;
}

inline Tensor encode_views(Session& s, const Tensor& views) {
  return s.projection.forward(s.classifier.features(views));
}

// Frozen-encoder linear probe accuracy on hidden features of plain views.
inline double linear_probe_accuracy(Session& s, const Dataset& train, const Dataset& test,
                                    RngStream rng) {
  auto features_of = [&](const Dataset& d) {
    NoGradGuard ng;
    std::vector<Tensor> rows;
    for (long long start = 0; start < d.size(); start += 256) {
      std::vector<long long> idx;
      for (long long i = start; i < std::min(d.size(), start + 256); ++i) idx.push_back(i);
      rows.push_back(s.classifier.features(s.aug->plain(d.stack(idx))));
    }
    return concat(rows, 0);
  };
  Tensor train_feats = features_of(train);
  Tensor test_feats = features_of(test);

  ParamRegistry probe_reg;
  Linear probe(probe_reg, "probe", s.opt.cls_hidden, s.shape.classes, rng);
  SgdMomentum opt(probe_reg.tensors(), s.opt.probe_lr, 0.9);
  std::vector<long long> labels(train.size());
  for (long long i = 0; i < train.size(); ++i) labels[i] = train.label(i);
  for (int it = 0; it < s.opt.probe_steps; ++it) {
    opt.zero_grad();
    backward(cross_entropy(probe.forward(train_feats), labels));
    opt.step();
  }
  NoGradGuard ng_eval;
  Tensor logits = probe.forward(test_feats);
  std::vector<long long> test_labels(test.size());
  for (long long i = 0; i < test.size(); ++i) test_labels[i] = test.label(i);
  return static_cast<double>(count_correct(logits, test_labels)) /
         static_cast<double>(test.size());
}

inline void run_contrastive(Session& s, const Dataset& train, const Dataset& test,
                            const MetricsCallback& on_epoch) {
  const RunOptions& opt = s.opt;
  if (opt.mode != Mode::kContrastive)
    throw TensorError("run_contrastive: session is not in contrastive mode");
  if (opt.batch_size < 2) throw TensorError("contrastive training needs batch size >= 2");
  RngStream eval_base = RngStream(opt.seed).split(kEvalStreamTag);

  for (; s.epoch < opt.epochs;) {
    const auto t0 = std::chrono::steady_clock::now();
    auto indices = detail::shuffled_indices(train.size(), s.rng);
    double loss_sum = 0.0, top1_sum = 0.0, entropy_sum = 0.0;
    long long seen = 0;
    double entropy_weight = 0.0;

    for (std::size_t start = 0; start + 2 <= indices.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      std::vector<long long> batch_idx(
          indices.begin() + start,
          indices.begin() + std::min(indices.size(), start + opt.batch_size));
      if (batch_idx.size() < 2) break;
      Tensor batch = train.stack(batch_idx);
      const long long b = static_cast<long long>(batch_idx.size());

      s.opt_f->zero_grad();
      s.opt_phi->zero_grad();
      BatchAug v1 = s.aug->apply(batch, s.rng);
      BatchAug v2 = s.aug->apply(batch, s.rng);
      Tensor z = encode_views(s, concat({v1.images, v2.images}, 0));
      ContrastiveStats stats;
      Tensor per_view = ntxent_per_view(z, opt.contrast_temperature, &stats);
      Tensor objective = mean(per_view);

      if (v1.entropies.defined())
        objective = sub(objective, mul(mean(v1.entropies), s.lam.lambda));
      if (v1.log_probs.defined()) {
        // Per-example cost: mean of its two views' losses; the score is the
        // sum of both sampled log-probabilities.
        std::vector<double> costs(b);
        for (long long i = 0; i < b; ++i)
          costs[i] = 0.5 * (per_view.value()[i] + per_view.value()[i + b]);
        Tensor lp = add(v1.log_probs, v2.log_probs);
        Tensor surrogate = reinforce_surrogate(lp, costs, loo_baselines(costs));
        objective = add(objective, sub(surrogate, detach(surrogate)));
      }
      try {
        backward(objective);
      } catch (const NonFiniteError& e) {
        Graph::active().clear();
        throw NonFiniteError("divergence at epoch " + std::to_string(s.epoch) + ": " + e.what());
      }
      s.opt_f->step();
      s.opt_phi->step();

      loss_sum += stats.loss * static_cast<double>(b);
      top1_sum += stats.top1 * static_cast<double>(b);
      seen += b;
      if (v1.entropies.defined()) {
        entropy_sum += mean(v1.entropies).item() * static_cast<double>(b);
        entropy_weight += static_cast<double>(b);
      }
      ++s.step;
    }
    ++s.epoch;

    MetricsRecord rec;
    rec.epoch = s.epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = top1_sum / static_cast<double>(seen);
    rec.test_acc = linear_probe_accuracy(s, train, test,
                                         eval_base.split(static_cast<std::uint64_t>(s.epoch)));
    if (entropy_weight > 0.0) {
      rec.mean_entropy = entropy_sum / entropy_weight;
      if (s.opt.dynamic_lambda) s.lam = lambda_update(s.lam, *rec.mean_entropy);
    }
    rec.lambda = s.lam.lambda;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) on_epoch(rec);
  }
}

// ---------------------------------------------------------------------------
// Generalization-error decomposition on the glyph task, whose conditional
// label law and input distribution are known exactly. All terms share one
// set of draws, so term_a + term_b + term_c equals rhat - r identically;
// term_b is additionally estimated through an independent direct route.
// ---------------------------------------------------------------------------

struct DecompositionReport {
  double term_a = 0.0;
  double term_b = 0.0;  // residual route, closes the identity exactly
  double term_c = 0.0;
  double rhat = 0.0;
  double r = 0.0;
  double term_b_direct = 0.0;
  double term_b_combined_se = 0.0;
  double term_a_se = 0.0;
  double identity_residual = 0.0;
  long long samples = 0;
};

namespace detail {

struct MeanVar {
  double mean = 0.0, m2 = 0.0;
  long long n = 0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double var_of_mean() const { return n > 1 ? m2 / (n - 1.0) / n : 0.0; }
};

inline std::vector<double> glyph_logits_ls(const SmallCnn& f, const Tensor& img) {
  Tensor logits =
      f.forward(reshape(img, {1, img.shape()[0], img.shape()[1], img.shape()[2]}));
  return log_softmax(logits, -1).value();
}

}  // namespace detail

inline DecompositionReport decompose_generalization(Session& s, const GlyphTask& task,
                                                    long long n_samples, RngStream rng) {
  if (s.opt.task != Task::kGlyphs)
    throw TensorError("decompose_generalization: requires a task with a known label law");
  NoGradGuard ng;
  const Dataset& train = task.train;
  auto* uniform_aug = dynamic_cast<UniformAugmenter*>(s.aug.get());

  auto sample_theta = [&](long long i, RngStream& r2) -> double {
    if (uniform_aug == nullptr) return 0.0;  // identity transform
    Tensor batch = train.stack({i});
    DecodedIntervals dec = uniform_aug->intervals(batch);
    return dec.lo.value()[0] + r2.uniform() * (dec.hi.value()[0] - dec.lo.value()[0]);
  };
  auto total_angle = [&](long long i) {
    return train.latents.at("theta0").value()[i] +
           (train.latents.at("pose").value()[i] == 1.0 ? kPi : 0.0);
  };
  auto sample_from_law = [&](const std::vector<double>& law, RngStream& r2) -> long long {
    const double u = r2.uniform();
    double acc = 0.0;
    for (std::size_t k = 0; k < law.size(); ++k) {
      acc += law[k];
      if (u < acc) return static_cast<long long>(k);
    }
    return static_cast<long long>(law.size()) - 1;
  };
  auto expected_ce = [&](const std::vector<double>& ls, const std::vector<double>& law) {
    double e = 0.0;
    for (std::size_t k = 0; k < law.size(); ++k) e -= law[k] * ls[k];
    return e;
  };
  auto fresh_example = [&](RngStream& r2, std::vector<double>* law_out) {
    const int glyph = static_cast<int>(r2.uniform_index(2));
    const int pose = static_cast<int>(r2.uniform_index(2));
    const double theta0 = r2.uniform(-kPi / 4, kPi / 4);
    const double total = theta0 + (pose == 1 ? kPi : 0.0);
    *law_out = task.label_law(glyph, total);
    return render_glyph(glyph, total);
  };

  DecompositionReport rep;
  rep.samples = n_samples;
  detail::MeanVar rhat, a_term, c_term, b_resid_term, r_term, b_direct_aug, b_direct_fresh;

  // Shared draws for rhat, (A), (C), and the residual (B).
  RngStream shared = rng.split(1);
  for (long long m = 0; m < n_samples; ++m) {
    RngStream r2 = shared.split(m);
    const long long i = r2.uniform_index(train.size());
    const double theta = sample_theta(i, r2);
    const int glyph = static_cast<int>(train.latents.at("glyph").value()[i]);
    Tensor view = rotate(train.example(i), theta);
    auto ls = detail::glyph_logits_ls(s.classifier, view);

    const long long y_hat = sample_from_law(task.label_law(glyph, total_angle(i)), r2);
    const long long y_tilde =
        sample_from_law(task.label_law(glyph, total_angle(i) + theta), r2);
    const double ce_obs = -ls[train.label(i)];
    const double ce_hat = -ls[y_hat];
    const double ce_tilde = -ls[y_tilde];
    rhat.add(ce_obs);
    a_term.add(ce_hat - ce_tilde);
    c_term.add(ce_obs - ce_hat);
    b_resid_term.add(ce_tilde);
  }

  // Shared true-risk draws (also part of the residual (B)).
  RngStream fresh = rng.split(2);
  for (long long m = 0; m < n_samples; ++m) {
    RngStream r2 = fresh.split(m);
    std::vector<double> law;
    Tensor x = fresh_example(r2, &law);
    auto ls = detail::glyph_logits_ls(s.classifier, x);
    const long long y = sample_from_law(law, r2);
    r_term.add(-ls[y]);
  }

  // Independent draws for the direct (B) route, with r(.) computed from the
  // exact conditional law instead of a sampled label.
  RngStream direct = rng.split(3);
  for (long long m = 0; m < n_samples; ++m) {
    RngStream r2 = direct.split(m);
    const long long i = r2.uniform_index(train.size());
    const double theta = sample_theta(i, r2);
    const int glyph = static_cast<int>(train.latents.at("glyph").value()[i]);
    Tensor view = rotate(train.example(i), theta);
    auto ls = detail::glyph_logits_ls(s.classifier, view);
    b_direct_aug.add(expected_ce(ls, task.label_law(glyph, total_angle(i) + theta)));

    std::vector<double> law;
    Tensor x = fresh_example(r2, &law);
    auto ls2 = detail::glyph_logits_ls(s.classifier, x);
    b_direct_fresh.add(expected_ce(ls2, law));
  }

  rep.rhat = rhat.mean;
  rep.r = r_term.mean;
  rep.term_a = a_term.mean;
  rep.term_c = c_term.mean;
  rep.term_b = (rep.rhat - rep.r) - rep.term_a - rep.term_c;
  rep.term_b_direct = b_direct_aug.mean - b_direct_fresh.mean;
  const double var_resid = b_resid_term.var_of_mean() + r_term.var_of_mean();
  const double var_direct = b_direct_aug.var_of_mean() + b_direct_fresh.var_of_mean();
  rep.term_b_combined_se = std::sqrt(var_resid + var_direct);
  rep.term_a_se = std::sqrt(a_term.var_of_mean());
  rep.identity_residual = (rep.term_a + rep.term_b + rep.term_c) - (rep.rhat - rep.r);
  return rep;
}

}  // namespace auglab
