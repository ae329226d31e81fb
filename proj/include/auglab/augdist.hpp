#pragma once

#include <string>
#include <variant>
#include <vector>

#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"

namespace auglab {

struct PatchTable;

// Minimum interval width; keeps uniform entropies finite and intervals
// non-degenerate.
constexpr double kEpsWidth = 1e-3;

constexpr double kPi = 3.14159265358979323846;

// Continuous transform dimensions and their legal parameter ranges.
enum class TransformDim { kRotation, kHueShift, kSatShift, kValShift };

struct DimRange {
  double lo;
  double hi;
};

inline DimRange legal_range(TransformDim d) {
  switch (d) {
    case TransformDim::kRotation: return {-kPi, kPi};
    case TransformDim::kHueShift: return {-0.5, 0.5};
    default: return {-1.0, 1.0};
  }
}

inline const char* dim_name(TransformDim d) {
  switch (d) {
    case TransformDim::kRotation: return "rotation";
    case TransformDim::kHueShift: return "hue";
    case TransformDim::kSatShift: return "sat";
    default: return "val";
  }
}

// Per-dimension uniform intervals U(lo_k, hi_k), sampled independently.
struct UniformParams {
  Tensor lo;  // [K]
  Tensor hi;  // [K]
  std::vector<TransformDim> dims;

  int size() const { return static_cast<int>(dims.size()); }

  void validate() const {
    if (lo.size() != size() || hi.size() != size())
      throw TensorError("UniformParams: bounds must have one entry per dimension");
    for (int k = 0; k < size(); ++k) {
      const double a = lo.value()[k], b = hi.value()[k];
      const DimRange r = legal_range(dims[k]);
      if (!(b - a >= kEpsWidth - 1e-12))
        throw TensorError(std::string("UniformParams: interval narrower than eps_width on ") +
                          dim_name(dims[k]));
      if (a < r.lo - 1e-12 || b > r.hi + 1e-12)
        throw TensorError(std::string("UniformParams: interval outside the legal range of ") +
                          dim_name(dims[k]));
    }
  }
};

// Categorical law over a patch table, parameterized by unnormalized logits.
struct CategoricalParams {
  Tensor logits;  // [P]
};

// Tagged union of the two parameterizations; categorical laws carry a
// reference to the patch table their indices point into.
struct TransformDistribution {
  std::variant<UniformParams, CategoricalParams> params;
  const PatchTable* patch_table = nullptr;

  bool is_uniform() const { return std::holds_alternative<UniformParams>(params); }
  const UniformParams& uniform() const { return std::get<UniformParams>(params); }
  const CategoricalParams& categorical() const { return std::get<CategoricalParams>(params); }
};

// ---------------------------------------------------------------------------
// Entropies (closed form, in nats)
// ---------------------------------------------------------------------------

// Independent dimensions add: H = sum_k ln(hi_k - lo_k).
inline Tensor uniform_entropy(const UniformParams& p) {
  for (int k = 0; k < p.size(); ++k)
    if (!(p.hi.value()[k] - p.lo.value()[k] > 0.0))
      throw TensorError("uniform_entropy: zero-width interval");
  return sum(log(sub(p.hi, p.lo)));
}

// -sum p_i ln p_i over the max-shifted softmax of the logits.
inline Tensor categorical_entropy(const CategoricalParams& p) {
  Tensor ls = log_softmax(p.logits, -1);
  return neg(sum(mul(exp(ls), ls)));
}

inline Tensor entropy(const TransformDistribution& d) {
  return d.is_uniform() ? uniform_entropy(d.uniform()) : categorical_entropy(d.categorical());
}

// Row-wise categorical entropies for a [B, P] logit matrix.
inline Tensor categorical_entropy_rows(const Tensor& logits) {
  Tensor ls = log_softmax(logits, -1);
  return neg(sum_axis(mul(exp(ls), ls), 1));
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// Reparameterized draw: theta_k = lo_k + u_k (hi_k - lo_k). Pathwise
// derivatives (1 - u_k) and u_k flow to the bounds through the tape.
inline Tensor sample_uniform(const UniformParams& p, const std::vector<double>& u) {
  if (static_cast<int>(u.size()) != p.size())
    throw TensorError("sample_uniform: one uniform draw per dimension required");
  for (double v : u)
    if (v < 0.0 || v > 1.0) throw TensorError("sample_uniform: u outside [0,1]");
  Tensor uu(Shape{p.size()}, u);
  return add(p.lo, mul(uu, sub(p.hi, p.lo)));
}

inline Tensor sample_uniform(const UniformParams& p, RngStream& rng) {
  std::vector<double> u(p.size());
  for (auto& v : u) v = rng.uniform();
  return sample_uniform(p, u);
}

// Inverse-CDF draw over softmax probabilities in index order.
inline long long categorical_index(const std::vector<double>& logits, double u) {
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  double acc = 0.0;
  const long long n = static_cast<long long>(logits.size());
  for (long long i = 0; i < n; ++i) {
    acc += std::exp(logits[i] - mx) / z;
    if (u < acc) return i;
  }
  return n - 1;  // u landed in the trailing rounding slack
}

struct CategoricalSample {
  long long index;
  Tensor log_prob;  // scalar, tape-connected to the logits
};

inline CategoricalSample sample_categorical(const CategoricalParams& p, double u) {
  if (u < 0.0 || u >= 1.0) throw TensorError("sample_categorical: u outside [0,1)");
  const long long idx = categorical_index(p.logits.value(), u);
  Tensor lp = gather(log_softmax(p.logits, -1), {idx});
  return {idx, lp};
}

inline CategoricalSample sample_categorical(const CategoricalParams& p, RngStream& rng) {
  return sample_categorical(p, rng.uniform());
}

// ---------------------------------------------------------------------------
// REINFORCE
// ---------------------------------------------------------------------------

// Score-function gradient estimate w.r.t. the logits for sampled indices and
// their costs, with a constant baseline:
//   g_j = (1/B) sum_b (c_b - baseline) (1[s_b = j] - p_j)
inline std::vector<double> reinforce_grad(const Tensor& logits,
                                          const std::vector<long long>& indices,
                                          const std::vector<double>& losses, double baseline) {
  if (indices.empty() || indices.size() != losses.size())
    throw TensorError("reinforce_grad: empty or mismatched batch");
  const long long n = logits.size();
  double mx = logits.value()[0];
  for (double l : logits.value()) mx = std::max(mx, l);
  std::vector<double> probs(n);
  double z = 0.0;
  for (long long j = 0; j < n; ++j) z += (probs[j] = std::exp(logits.value()[j] - mx));
  for (auto& pv : probs) pv /= z;

  std::vector<double> grad(n, 0.0);
  const double inv_b = 1.0 / static_cast<double>(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const double coeff = (losses[b] - baseline) * inv_b;
    for (long long j = 0; j < n; ++j) grad[j] -= coeff * probs[j];
    grad[indices[b]] += coeff;
  }
  return grad;
}

// Tape-connected surrogate (1/B) sum_b coeff_b ln p_{s_b}; backward through
// it deposits the same estimate reinforce_grad computes directly. `log_probs`
// is the [B] tensor of sampled log-probabilities.
inline Tensor reinforce_surrogate(const Tensor& log_probs, const std::vector<double>& losses,
                                  double baseline) {
  if (losses.empty() || static_cast<long long>(losses.size()) != log_probs.size())
    throw TensorError("reinforce_surrogate: empty or mismatched batch");
  std::vector<double> coeff(losses.size());
  for (std::size_t b = 0; b < losses.size(); ++b)
    coeff[b] = (losses[b] - baseline) / static_cast<double>(losses.size());
  return sum(mul(Tensor(Shape{static_cast<int>(coeff.size())}, coeff), log_probs));
}

// Leave-one-out mean baselines: b_i = mean of the other costs. Equivalent to
// a batch-mean baseline scaled by B/(B-1), which keeps the estimator exactly
// unbiased; a plain same-batch mean would shrink it by (1 - 1/B).
inline std::vector<double> loo_baselines(const std::vector<double>& losses) {
  const std::size_t n = losses.size();
  if (n == 1) return {0.0};
  double total = 0.0;
  for (double l : losses) total += l;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = (total - losses[i]) / static_cast<double>(n - 1);
  return out;
}

// Surrogate with per-sample baselines (used by the training loop with
// leave-one-out means).
inline Tensor reinforce_surrogate(const Tensor& log_probs, const std::vector<double>& losses,
                                  const std::vector<double>& baselines) {
  if (losses.empty() || static_cast<long long>(losses.size()) != log_probs.size())
    throw TensorError("reinforce_surrogate: empty or mismatched batch");
  std::vector<double> coeff(losses.size());
  for (std::size_t b = 0; b < losses.size(); ++b)
    coeff[b] = (losses[b] - baselines[b]) / static_cast<double>(losses.size());
  return sum(mul(Tensor(Shape{static_cast<int>(coeff.size())}, coeff), log_probs));
}

}  // namespace auglab
