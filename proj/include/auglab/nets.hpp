#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"

namespace auglab {

// Named parameter store; modules create their weights here so checkpointing
// and optimization see one flat list in a stable order.
class ParamRegistry {
 public:
  Tensor create(const std::string& name, Shape shape, RngStream& rng, double limit) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = limit == 0.0 ? 0.0 : rng.uniform(-limit, limit);
    Tensor t(std::move(shape), std::move(data), true);
    items_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
  }

  long long count() const {
    long long n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  void load_values(const std::map<std::string, Tensor>& named, const std::string& prefix = "") {
    for (auto& [name, t] : items_) {
      auto it = named.find(prefix + name);
      if (it == named.end()) throw TensorError("missing parameter in checkpoint: " + prefix + name);
      if (it->second.shape() != t.shape())
        throw TensorError("parameter shape mismatch for " + prefix + name);
      t.data() = it->second.value();
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

inline double he_limit(long long fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in, int out, RngStream& rng) {
    w = reg.create(name + ".w", {in, out}, rng, he_limit(in));
    b = reg.create(name + ".b", {out}, rng, 0.0);
  }

  Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct Conv {
  Tensor w;  // [out, in, k, k]
  Tensor b;  // [out]
  int stride = 1;

  Conv() = default;
  Conv(ParamRegistry& reg, const std::string& name, int in, int out, int k, int stride_,
       RngStream& rng, double limit_override = -1.0)
      : stride(stride_) {
    const double limit =
        limit_override >= 0.0 ? limit_override : he_limit(static_cast<long long>(in) * k * k);
    w = reg.create(name + ".w", {out, in, k, k}, rng, limit);
    b = reg.create(name + ".b", {out}, rng, 0.0);
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride); }
};

inline int conv_out_side(int side, int k, int stride) { return (side - k) / stride + 1; }

// Two conv blocks plus a two-layer head; the shared classifier/trunk shape
// for every desk-scale task here.
struct SmallCnn {
  Conv conv1, conv2;
  Linear fc1, fc2;
  int in_side = 0, flat = 0, hidden = 0;

  SmallCnn() = default;
  SmallCnn(ParamRegistry& reg, const std::string& name, int in_ch, int in_side_, int c1, int c2,
           int hidden_, int out, RngStream& rng)
      : in_side(in_side_), hidden(hidden_) {
    conv1 = Conv(reg, name + ".conv1", in_ch, c1, 3, 1, rng);
    conv2 = Conv(reg, name + ".conv2", c1, c2, 3, 1, rng);
    int s = conv_out_side(in_side_, 3, 1);
    s = conv_out_side(s, 2, 2);
    s = conv_out_side(s, 3, 1);
    s = conv_out_side(s, 2, 2);
    if (s < 1) throw TensorError("SmallCnn: input side too small");
    flat = c2 * s * s;
    fc1 = Linear(reg, name + ".fc1", flat, hidden_, rng);
    fc2 = Linear(reg, name + ".fc2", hidden_, out, rng);
  }

  // Hidden features after the first fully connected layer.
  Tensor features(const Tensor& x) const {
    Tensor h = max_pool2d(relu(conv1.forward(x)), 2, 2);
    h = max_pool2d(relu(conv2.forward(h)), 2, 2);
    h = reshape(h, {h.shape()[0], flat});
    return relu(fc1.forward(h));
  }

  Tensor forward(const Tensor& x) const { return fc2.forward(features(x)); }
};

// SGD with momentum: v = mu v + g; w -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double lr, double momentum, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;  // untouched this step
      const auto& g = params_[i].grad();
      auto& v = velocity_[i];
      auto& w = params_[i].data();
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j] + weight_decay_ * w[j];
        w[j] -= lr_ * v[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const std::vector<std::vector<double>>& velocity() const { return velocity_; }
  std::vector<std::vector<double>>& velocity() { return velocity_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace auglab
