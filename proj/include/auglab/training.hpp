#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "auglab/augdist.hpp"
#include "auglab/data.hpp"
#include "auglab/invariance.hpp"
#include "auglab/nets.hpp"
#include "auglab/tensor.hpp"
#include "auglab/transforms.hpp"

namespace auglab {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Tensor cross_entropy_per_example(const Tensor& logits,
                                        const std::vector<long long>& labels) {
  return neg(gather_rows(log_softmax(logits, -1), labels));
}

inline Tensor cross_entropy(const Tensor& logits, const std::vector<long long>& labels) {
  return mean(cross_entropy_per_example(logits, labels));
}

inline long long argmax_row(const Tensor& logits, long long row) {
  const long long c = logits.shape()[1];
  long long best = 0;
  for (long long j = 1; j < c; ++j)
    if (logits.value()[row * c + j] > logits.value()[row * c + best]) best = j;
  return best;
}

inline long long count_correct(const Tensor& logits, const std::vector<long long>& labels) {
  long long correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (argmax_row(logits, static_cast<long long>(b)) == labels[b]) ++correct;
  return correct;
}

// ---------------------------------------------------------------------------
// Dynamic entropy-weight controller
// ---------------------------------------------------------------------------

struct LambdaState {
  double lambda = 1e-3;
  double h_min = 0.0;
  double h_max = 0.0;
  double eta = 0.1;
};

// Multiplicative nudge toward the [h_min, h_max] band: raise lambda when the
// mean entropy is below the band, lower it when above, hold inside.
inline LambdaState lambda_update(LambdaState s, double h_avg) {
  if (!std::isfinite(h_avg)) throw TensorError("lambda_update: non-finite entropy mean");
  if (h_avg < s.h_min)
    s.lambda *= 1.0 + s.eta;
  else if (h_avg > s.h_max)
    s.lambda /= 1.0 + s.eta;
  return s;
}

// ---------------------------------------------------------------------------
// Augmenters: one interface over every mode's transformation machinery.
// apply() returns the transformed batch plus whatever the objective needs
// (closed-form entropies, sampled log-probabilities for REINFORCE).
// ---------------------------------------------------------------------------

struct BatchAug {
  Tensor images;     // [B, C, S, S]
  Tensor entropies;  // [B] closed form, defined when the law is learnable
  Tensor log_probs;  // [B] sampled ln p, defined for categorical laws
};

class Augmenter {
 public:
  virtual ~Augmenter() = default;

  // Transformed training batch; draws come from `rng` in example order.
  virtual BatchAug apply(const Tensor& batch, RngStream& rng) = 0;

  // Untransformed view of the batch at classifier resolution.
  virtual Tensor plain(const Tensor& batch) = 0;

  // One sampled view of a single example (test-time augmentation).
  virtual Tensor sample_view(const Tensor& image, RngStream& rng) = 0;

  // Mean closed-form entropy of a batch's laws, without sampling.
  virtual std::optional<double> mean_entropy(const Tensor& batch) = 0;

  virtual bool uses_reinforce() const { return false; }
  virtual bool learnable() const { return false; }
};

namespace detail {

inline Tensor rows_to_batch(std::vector<Tensor> views) {
  std::vector<Tensor> rows;
  rows.reserve(views.size());
  for (auto& v : views)
    rows.push_back(reshape(v, {1, v.shape()[0], v.shape()[1], v.shape()[2]}));
  return concat(rows, 0);
}

inline Tensor batch_row(const Tensor& batch, long long b) {
  const int c = batch.shape()[1], h = batch.shape()[2], w = batch.shape()[3];
  const long long n = static_cast<long long>(c) * h * w;
  std::vector<double> data(batch.value().begin() + b * n, batch.value().begin() + (b + 1) * n);
  return Tensor({c, h, w}, std::move(data));
}

// theta[k] for one example as scalar tensors, tape-connected to lo/hi rows.
inline std::vector<Tensor> sample_row_thetas(const Tensor& lo, const Tensor& hi, long long row,
                                             RngStream& rng) {
  const long long k = lo.shape()[1];
  std::vector<Tensor> thetas;
  for (long long d = 0; d < k; ++d) {
    Tensor l = gather(lo, {row * k + d});
    Tensor h = gather(hi, {row * k + d});
    const double u = rng.uniform();
    thetas.push_back(add(l, mul(sub(h, l), u)));
  }
  return thetas;
}

inline Tensor uniform_row_entropies(const DecodedIntervals& dec) {
  return sum_axis(log(sub(dec.hi, dec.lo)), 1);
}

}  // namespace detail

// Identity views; crop tasks resize the full frame to the classifier side.
class NoAugmenter : public Augmenter {
 public:
  explicit NoAugmenter(int out_side = 0) : out_side_(out_side) {}

  BatchAug apply(const Tensor& batch, RngStream&) override { return {plain(batch), {}, {}}; }

  Tensor plain(const Tensor& batch) override {
    if (out_side_ == 0 || batch.shape()[2] == out_side_) return batch;
    std::vector<Tensor> views;
    for (long long b = 0; b < batch.shape()[0]; ++b)
      views.push_back(full_frame(detail::batch_row(batch, b)));
    return detail::rows_to_batch(std::move(views));
  }

  Tensor sample_view(const Tensor& image, RngStream&) override {
    return out_side_ == 0 || image.shape()[1] == out_side_ ? image : full_frame(image);
  }

  std::optional<double> mean_entropy(const Tensor&) override { return std::nullopt; }

 private:
  Tensor full_frame(const Tensor& img) const {
    const double side = std::max(img.shape()[1], img.shape()[2]);
    return crop_resize(img, Patch{(img.shape()[1] - 1) / 2.0, (img.shape()[2] - 1) / 2.0, side},
                       out_side_);
  }
  int out_side_;
};

// Instance-specific or global uniform intervals over continuous transform
// dimensions (rotation, or the three HSV shifts), reparameterized sampling.
class UniformAugmenter : public Augmenter {
 public:
  // head != nullptr: instance-specific; global != nullptr: shared intervals.
  UniformAugmenter(const UniformHead* head, const GlobalUniform* global)
      : head_(head), global_(global) {
    if (!head_ == !global_) throw TensorError("UniformAugmenter: exactly one source required");
  }

  const std::vector<TransformDim>& dims() const {
    return head_ ? head_->dims() : global_->dims();
  }

  BatchAug apply(const Tensor& batch, RngStream& rng) override {
    const long long n = batch.shape()[0];
    DecodedIntervals dec = decode(batch, n);
    std::vector<Tensor> views;
    for (long long b = 0; b < n; ++b) {
      auto thetas = detail::sample_row_thetas(dec.lo, dec.hi, b, rng);
      views.push_back(transform_one(detail::batch_row(batch, b), thetas));
    }
    return {detail::rows_to_batch(std::move(views)), detail::uniform_row_entropies(dec), {}};
  }

  Tensor plain(const Tensor& batch) override { return batch; }

  Tensor sample_view(const Tensor& image, RngStream& rng) override {
    NoGradGuard ng;
    Tensor batch = reshape(image, {1, image.shape()[0], image.shape()[1], image.shape()[2]});
    DecodedIntervals dec = decode(batch, 1);
    auto thetas = detail::sample_row_thetas(dec.lo, dec.hi, 0, rng);
    return transform_one(image, thetas);
  }

  std::optional<double> mean_entropy(const Tensor& batch) override {
    NoGradGuard ng;
    DecodedIntervals dec = decode(batch, batch.shape()[0]);
    return mean(detail::uniform_row_entropies(dec)).item();
  }

  // Per-example law for interval dumps.
  DecodedIntervals intervals(const Tensor& batch) { return decode(batch, batch.shape()[0]); }

  bool learnable() const override { return true; }

 private:
  DecodedIntervals decode(const Tensor& batch, long long n) {
    return head_ ? head_->forward(batch) : global_->forward(static_cast<int>(n));
  }

  Tensor transform_one(const Tensor& img, const std::vector<Tensor>& thetas) const {
    const auto& d = dims();
    if (d.size() == 1 && d[0] == TransformDim::kRotation) return rotate(img, thetas[0]);
    if (d.size() == 3 && d[0] == TransformDim::kHueShift)
      return hsv_jitter(img, thetas[0], thetas[1], thetas[2]);
    throw TensorError("UniformAugmenter: unsupported dimension set");
  }

  const UniformHead* head_;
  const GlobalUniform* global_;
};

// Fixed uniform jitter (the tuned random baseline for rotation/HSV).
class RandomUniformAugmenter : public Augmenter {
 public:
  RandomUniformAugmenter(std::vector<TransformDim> dims, std::vector<double> lo,
                         std::vector<double> hi)
      : dims_(std::move(dims)), lo_(std::move(lo)), hi_(std::move(hi)) {}

  BatchAug apply(const Tensor& batch, RngStream& rng) override {
    std::vector<Tensor> views;
    for (long long b = 0; b < batch.shape()[0]; ++b)
      views.push_back(sample_view(detail::batch_row(batch, b), rng));
    return {detail::rows_to_batch(std::move(views)), {}, {}};
  }

  Tensor plain(const Tensor& batch) override { return batch; }

  Tensor sample_view(const Tensor& image, RngStream& rng) override {
    std::vector<double> theta(dims_.size());
    for (std::size_t d = 0; d < dims_.size(); ++d) theta[d] = rng.uniform(lo_[d], hi_[d]);
    if (dims_.size() == 1 && dims_[0] == TransformDim::kRotation)
      return rotate(image, theta[0]);
    if (dims_.size() == 3 && dims_[0] == TransformDim::kHueShift)
      return hsv_jitter(image, theta[0], theta[1], theta[2]);
    throw TensorError("RandomUniformAugmenter: unsupported dimension set");
  }

  std::optional<double> mean_entropy(const Tensor&) override { return std::nullopt; }

 private:
  std::vector<TransformDim> dims_;
  std::vector<double> lo_, hi_;
};

// Categorical crop law over a receptive-field patch table, instance-specific
// (LRP network) or global (shared logits). REINFORCE carries the loss term's
// gradient; the entropy term is closed form.
class CropAugmenter : public Augmenter {
 public:
  CropAugmenter(const LrpNet* lrp, const GlobalLogits* global, int out_side)
      : lrp_(lrp), global_(global), out_side_(out_side) {
    if (!lrp_ == !global_) throw TensorError("CropAugmenter: exactly one source required");
  }

  const PatchTable& table() const { return lrp_ ? lrp_->table() : global_->table(); }

  BatchAug apply(const Tensor& batch, RngStream& rng) override {
    const long long n = batch.shape()[0];
    Tensor logits = forward_logits(batch, n);
    std::vector<long long> indices(n);
    {
      NoGradGuard ng;
      const long long p = logits.shape()[1];
      for (long long b = 0; b < n; ++b) {
        std::vector<double> row(logits.value().begin() + b * p,
                                logits.value().begin() + (b + 1) * p);
        indices[b] = categorical_index(row, rng.uniform());
      }
    }
    std::vector<Tensor> views;
    for (long long b = 0; b < n; ++b)
      views.push_back(crop_resize(detail::batch_row(batch, b), table().patch(indices[b]),
                                  out_side_));
    Tensor lp = gather_rows(log_softmax(logits, -1), indices);
    return {detail::rows_to_batch(std::move(views)), categorical_entropy_rows(logits), lp};
  }

  Tensor plain(const Tensor& batch) override {
    std::vector<Tensor> views;
    for (long long b = 0; b < batch.shape()[0]; ++b) {
      Tensor img = detail::batch_row(batch, b);
      const double side = std::max(img.shape()[1], img.shape()[2]);
      views.push_back(crop_resize(
          img, Patch{(img.shape()[1] - 1) / 2.0, (img.shape()[2] - 1) / 2.0, side}, out_side_));
    }
    return detail::rows_to_batch(std::move(views));
  }

  Tensor sample_view(const Tensor& image, RngStream& rng) override {
    NoGradGuard ng;
    Tensor batch = reshape(image, {1, image.shape()[0], image.shape()[1], image.shape()[2]});
    Tensor logits = forward_logits(batch, 1);
    const long long idx = categorical_index(logits.value(), rng.uniform());
    return crop_resize(image, table().patch(idx), out_side_);
  }

  std::optional<double> mean_entropy(const Tensor& batch) override {
    NoGradGuard ng;
    Tensor logits = forward_logits(batch, batch.shape()[0]);
    return mean(categorical_entropy_rows(logits)).item();
  }

  // Patch probabilities for one example (probability-table dumps).
  std::vector<double> patch_probs(const Tensor& image) {
    NoGradGuard ng;
    Tensor batch = reshape(image, {1, image.shape()[0], image.shape()[1], image.shape()[2]});
    Tensor logits = forward_logits(batch, 1);
    return exp(log_softmax(logits, -1)).value();
  }

  bool uses_reinforce() const override { return true; }
  bool learnable() const override { return true; }

 private:
  Tensor forward_logits(const Tensor& batch, long long n) {
    return lrp_ ? lrp_->forward_logits(batch) : global_->forward_logits(static_cast<int>(n));
  }

  const LrpNet* lrp_;
  const GlobalLogits* global_;
  int out_side_;
};

// Uniform random crops: position uniform over full containment, side uniform
// in [scale_min, scale_max] x frame side (the tuned random-crop baseline).
class RandomCropAugmenter : public Augmenter {
 public:
  RandomCropAugmenter(int out_side, double scale_min, double scale_max)
      : out_side_(out_side), scale_min_(scale_min), scale_max_(scale_max) {}

  BatchAug apply(const Tensor& batch, RngStream& rng) override {
    std::vector<Tensor> views;
    for (long long b = 0; b < batch.shape()[0]; ++b)
      views.push_back(sample_view(detail::batch_row(batch, b), rng));
    return {detail::rows_to_batch(std::move(views)), {}, {}};
  }

  Tensor plain(const Tensor& batch) override {
    NoAugmenter plain_view(out_side_);
    return plain_view.plain(batch);
  }

  Tensor sample_view(const Tensor& image, RngStream& rng) override {
    const double frame = std::max(image.shape()[1], image.shape()[2]);
    const double side = rng.uniform(scale_min_, scale_max_) * frame;
    const double half = (side - 1.0) / 2.0;
    const double cy = rng.uniform(half, image.shape()[1] - 1.0 - half);
    const double cx = rng.uniform(half, image.shape()[2] - 1.0 - half);
    return crop_resize(image, Patch{cy, cx, side}, out_side_);
  }

  std::optional<double> mean_entropy(const Tensor&) override { return std::nullopt; }

 private:
  int out_side_;
  double scale_min_, scale_max_;
};

// ---------------------------------------------------------------------------
// The per-batch objective: mean cross-entropy minus lambda times the mean
// closed-form entropy, one sampled transform per example. Gradients reach
// the classifier through the loss, and the invariance parameters through
// reparameterization (uniform laws) or a value-zero REINFORCE surrogate
// (categorical laws) with leave-one-out mean baselines.
// ---------------------------------------------------------------------------

struct ObjectiveStats {
  double mean_ce = 0.0;
  double mean_entropy = 0.0;
  bool has_entropy = false;
  long long correct = 0;
};

inline Tensor instaaug_objective(const SmallCnn& classifier, Augmenter& aug, const Tensor& batch,
                                 const std::vector<long long>& labels, double lambda,
                                 RngStream& rng, ObjectiveStats* stats = nullptr) {
  if (batch.shape()[0] < 1) throw TensorError("instaaug_objective: empty batch");
  BatchAug views = aug.apply(batch, rng);
  Tensor logits = classifier.forward(views.images);
  Tensor ce_vec = cross_entropy_per_example(logits, labels);
  Tensor objective = mean(ce_vec);

  if (views.entropies.defined()) {
    objective = sub(objective, mul(mean(views.entropies), lambda));
  }
  if (views.log_probs.defined()) {
    const std::vector<double>& losses = ce_vec.value();
    Tensor surrogate = reinforce_surrogate(views.log_probs, losses, loo_baselines(losses));
    objective = add(objective, sub(surrogate, detach(surrogate)));
  }
  if (stats) {
    stats->mean_ce = mean(ce_vec).item();
    stats->has_entropy = views.entropies.defined();
    stats->mean_entropy = stats->has_entropy ? mean(views.entropies).item() : 0.0;
    stats->correct = count_correct(logits, labels);
  }
  return objective;
}

// ---------------------------------------------------------------------------
// Test-time augmentation: mean logit over n sampled transforms, argmax with
// ties broken to the lowest class index.
// ---------------------------------------------------------------------------

struct TtaResult {
  long long label;
  std::vector<double> mean_logits;
};

inline TtaResult tta_predict(const SmallCnn& classifier, Augmenter& aug, const Tensor& image,
                             int n, RngStream& rng) {
  if (n < 1) throw TensorError("tta_predict: need at least one sample");
  NoGradGuard ng;
  std::vector<double> mean_logits;
  for (int s = 0; s < n; ++s) {
    Tensor view = aug.sample_view(image, rng);
    Tensor logits = classifier.forward(
        reshape(view, {1, view.shape()[0], view.shape()[1], view.shape()[2]}));
    if (mean_logits.empty()) mean_logits.assign(logits.size(), 0.0);
    for (long long j = 0; j < logits.size(); ++j) mean_logits[j] += logits.value()[j] / n;
  }
  long long best = 0;
  for (std::size_t j = 1; j < mean_logits.size(); ++j)
    if (mean_logits[j] > mean_logits[best]) best = static_cast<long long>(j);
  return {best, std::move(mean_logits)};
}

// Plain accuracy over a dataset split (untransformed views).
inline double evaluate_accuracy(const SmallCnn& classifier, Augmenter& aug, const Dataset& data,
                                int batch_size = 128) {
  NoGradGuard ng;
  long long correct = 0;
  for (long long start = 0; start < data.size(); start += batch_size) {
    std::vector<long long> idx;
    for (long long i = start; i < std::min(data.size(), start + batch_size); ++i)
      idx.push_back(i);
    Tensor views = aug.plain(data.stack(idx));
    Tensor logits = classifier.forward(views);
    correct += count_correct(logits, data.label_vector(idx));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// TTA accuracy with per-example derived streams, so the sample count of one
// example never shifts another's draws.
inline double evaluate_tta_accuracy(const SmallCnn& classifier, Augmenter& aug,
                                    const Dataset& data, int n, RngStream& stream) {
  long long correct = 0;
  for (long long i = 0; i < data.size(); ++i) {
    RngStream rng = stream.split(i);
    if (tta_predict(classifier, aug, data.example(i), n, rng).label == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace auglab
