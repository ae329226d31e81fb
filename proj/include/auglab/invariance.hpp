#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "auglab/augdist.hpp"
#include "auglab/nets.hpp"
#include "auglab/tensor.hpp"
#include "auglab/transforms.hpp"

namespace auglab {

// ---------------------------------------------------------------------------
// Receptive-field patch tables
// ---------------------------------------------------------------------------

struct ConvPoolSpec {
  int kernel;
  int stride;
};

// One crop candidate backed by a network unit's receptive field.
struct PatchSpec {
  double center_y;
  double center_x;
  double side;
  int layer;  // pooled block index, 1-based; 0 is the whole-image fallback
};

struct PatchTable {
  int input_h = 0;
  int input_w = 0;
  std::vector<PatchSpec> entries;  // layer-major, then row-major within a layer

  Patch patch(long long index) const {
    const PatchSpec& e = entries.at(index);
    return Patch{e.center_y, e.center_x, e.side};
  }
  long long size() const { return static_cast<long long>(entries.size()); }
};

// Standard receptive-field arithmetic: starting (r=1, j=1, start=0.5), a
// layer with kernel k and stride s maps r' = r + (k-1) j, start' =
// start + ((k-1)/2) j, j' = j s. Patches are emitted after every
// stride > 1 (pooling) layer; an empty arch yields one whole-image patch.
inline PatchTable build_patch_table(const std::vector<ConvPoolSpec>& arch, int input_h,
                                    int input_w) {
  PatchTable table;
  table.input_h = input_h;
  table.input_w = input_w;
  if (arch.empty()) {
    table.entries.push_back(
        {(input_h - 1) / 2.0, (input_w - 1) / 2.0, static_cast<double>(std::max(input_h, input_w)),
         0});
    return table;
  }
  double rf = 1.0, jump = 1.0, start = 0.5;
  int h = input_h, w = input_w;
  int block = 0;
  for (const auto& layer : arch) {
    h = (h - layer.kernel) / layer.stride + 1;
    w = (w - layer.kernel) / layer.stride + 1;
    if (h < 1 || w < 1) throw TensorError("build_patch_table: layer shrinks feature map below 1x1");
    rf += (layer.kernel - 1) * jump;
    start += ((layer.kernel - 1) / 2.0) * jump;
    jump *= layer.stride;
    if (layer.stride > 1) {
      ++block;
      for (int uy = 0; uy < h; ++uy)
        for (int ux = 0; ux < w; ++ux)
          table.entries.push_back(
              {start - 0.5 + uy * jump, start - 0.5 + ux * jump, rf, block});
    }
  }
  return table;
}

// Alternating conv(k=2, s=1) / pool(k=2, s=2) blocks.
inline std::vector<ConvPoolSpec> lrp_arch(int blocks) {
  std::vector<ConvPoolSpec> arch;
  for (int i = 0; i < blocks; ++i) {
    arch.push_back({2, 1});
    arch.push_back({2, 2});
  }
  return arch;
}

// (index, layer, center_y, center_x, side) rows for density-map plotting.
inline void export_patch_table(const PatchTable& table, std::ostream& out) {
  out << "index,layer,center_y,center_x,side\n";
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto& e = table.entries[i];
    out << i << "," << e.layer << "," << e.center_y << "," << e.center_x << "," << e.side << "\n";
  }
}

// ---------------------------------------------------------------------------
// Location-related parameterization: a conv/pool stack whose unit
// activations are the patch logits. Per block: conv(k=2,s=1, M channels),
// average pool(k=2,s=2), then a 1x1 single-channel conv; the flattened
// single-channel maps concatenate across blocks in patch-table order.
// Collapse convs start at zero, so a fresh net is uniform over patches.
// ---------------------------------------------------------------------------

class LrpNet {
 public:
  LrpNet() = default;
  // layer_prior > 0 biases the initial law toward deeper (larger) patches:
  // block i's logits start at -layer_prior * (blocks - i). Zero keeps the
  // uniform law over all patches.
  LrpNet(ParamRegistry& reg, const std::string& name, int in_ch, int input_side, int blocks,
         int channels, RngStream& rng, double layer_prior = 0.0)
      : table_(build_patch_table(lrp_arch(blocks), input_side, input_side)) {
    int ch = in_ch;
    int side = input_side;
    for (int i = 0; i < blocks; ++i) {
      side = conv_out_side(conv_out_side(side, 2, 1), 2, 2);
      if (side < 1) throw TensorError("LrpNet: too many blocks for the input side");
      convs_.emplace_back(reg, name + ".block" + std::to_string(i + 1) + ".conv", ch, channels, 2,
                          1, rng);
      collapse_.emplace_back(reg, name + ".block" + std::to_string(i + 1) + ".collapse", channels,
                             1, 1, 1, rng, 0.0);
      Tensor bias = collapse_.back().b;
      bias.data()[0] = -layer_prior * (blocks - 1 - i);
      ch = channels;
    }
  }

  const PatchTable& table() const { return table_; }

  // [B, P] patch logits, tape-connected to the weights.
  Tensor forward_logits(const Tensor& x) const {
    Tensor f = x;
    std::vector<Tensor> logit_maps;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      f = avg_pool2d(convs_[i].forward(f), 2, 2);
      Tensor collapsed = collapse_[i].forward(f);
      const int b = collapsed.shape()[0];
      logit_maps.push_back(
          reshape(collapsed, {b, collapsed.shape()[2] * collapsed.shape()[3]}));
    }
    return concat(logit_maps, 1);
  }

 private:
  std::vector<Conv> convs_;
  std::vector<Conv> collapse_;
  PatchTable table_;
};

// Single-example convenience wrapper; training uses the batched path.
inline CategoricalParams lrp_forward(const LrpNet& net, const Tensor& image) {
  Tensor batch = reshape(image, {1, image.shape()[0], image.shape()[1], image.shape()[2]});
  Tensor logits = net.forward_logits(batch);
  return CategoricalParams{reshape(logits, {logits.shape()[1]})};
}

// ---------------------------------------------------------------------------
// Uniform-interval head: raw (c_k, w_k) pairs decode to per-dimension legal
// intervals. Decode map: center = mid + tanh(c) (R - eps/2) and halfwidth =
// (eps + softplus(w))/2 capped at the distance to the range edge, which
// keeps every decoded interval legal with width >= eps.
// ---------------------------------------------------------------------------

struct DecodedIntervals {
  Tensor lo;  // [B, K]
  Tensor hi;  // [B, K]
};

inline DecodedIntervals decode_intervals(const Tensor& raw,
                                         const std::vector<TransformDim>& dims) {
  const int k = static_cast<int>(dims.size());
  if (raw.dim() != 2 || raw.shape()[1] != 2 * k)
    throw TensorError("decode_intervals: raw head output must be [B, 2K]");
  const int b = raw.shape()[0];

  std::vector<long long> c_idx, w_idx;
  for (int r = 0; r < b; ++r)
    for (int d = 0; d < k; ++d) {
      c_idx.push_back(static_cast<long long>(r) * 2 * k + d);
      w_idx.push_back(static_cast<long long>(r) * 2 * k + k + d);
    }
  Tensor c = reshape(gather(raw, c_idx), {b, k});
  Tensor w = reshape(gather(raw, w_idx), {b, k});

  std::vector<double> mid(k), halfrange(k);
  for (int d = 0; d < k; ++d) {
    const DimRange r = legal_range(dims[d]);
    mid[d] = 0.5 * (r.lo + r.hi);
    halfrange[d] = 0.5 * (r.hi - r.lo);
  }
  Tensor mid_t(Shape{k}, mid);
  std::vector<double> span(k);
  for (int d = 0; d < k; ++d) span[d] = halfrange[d] - kEpsWidth / 2.0;
  Tensor span_t(Shape{k}, span);

  Tensor center = add(mul(tanh(c), span_t), mid_t);
  Tensor half_raw = add(mul(softplus(w), 0.5), kEpsWidth / 2.0);

  std::vector<double> lo_legal(k), hi_legal(k);
  for (int d = 0; d < k; ++d) {
    lo_legal[d] = legal_range(dims[d]).lo;
    hi_legal[d] = legal_range(dims[d]).hi;
  }
  Tensor dist_lo = sub(center, Tensor(Shape{k}, lo_legal));
  Tensor dist_hi = neg(sub(center, Tensor(Shape{k}, hi_legal)));
  // min(a, b) = b - relu(b - a)
  Tensor max_half = sub(dist_hi, relu(sub(dist_hi, dist_lo)));
  Tensor half = sub(max_half, relu(sub(max_half, half_raw)));

  return {sub(center, half), add(center, half)};
}

// Inverse of the decode map for intervals strictly inside the legal range
// and away from the halfwidth cap; used to round-trip decode parameters.
inline std::pair<double, double> encode_interval(double lo, double hi, TransformDim dim) {
  const DimRange r = legal_range(dim);
  const double mid = 0.5 * (r.lo + r.hi);
  const double span = 0.5 * (r.hi - r.lo) - kEpsWidth / 2.0;
  const double center = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  const double c = std::atanh((center - mid) / span);
  const double sp = 2.0 * half - kEpsWidth;  // softplus(w)
  const double w = std::log(std::expm1(sp));
  return {c, w};
}

class UniformHead {
 public:
  UniformHead() = default;
  UniformHead(ParamRegistry& reg, const std::string& name, int in_ch, int in_side,
              std::vector<TransformDim> dims, RngStream& rng, int c1 = 8, int c2 = 16,
              int hidden = 32)
      : dims_(std::move(dims)),
        trunk_(reg, name + ".trunk", in_ch, in_side, c1, c2, hidden,
               2 * static_cast<int>(dims_.size()), rng) {
    // Start near the identity augmentation: shrink the head layer so raw
    // centers sit at 0 inside tanh's linear region, and bias the raw
    // halfwidths into the softplus tail. Fresh heads then emit narrow
    // intervals at the neutral pose and widen only as the entropy term
    // earns it, instead of starting saturated at the range edges.
    const int k = static_cast<int>(dims_.size());
    Tensor w = trunk_.fc2.w;
    for (auto& v : w.data()) v *= 0.05;
    Tensor bias = trunk_.fc2.b;
    for (int d = 0; d < k; ++d) bias.data()[k + d] = -4.0;
  }

  const std::vector<TransformDim>& dims() const { return dims_; }

  DecodedIntervals forward(const Tensor& batch) const {
    return decode_intervals(trunk_.forward(batch), dims_);
  }

  // Per-example view satisfying the UniformParams invariants.
  UniformParams forward_single(const Tensor& image) const {
    Tensor batch = reshape(image, {1, image.shape()[0], image.shape()[1], image.shape()[2]});
    auto dec = forward(batch);
    const int k = static_cast<int>(dims_.size());
    UniformParams p;
    p.lo = reshape(dec.lo, {k});
    p.hi = reshape(dec.hi, {k});
    p.dims = dims_;
    return p;
  }

 private:
  std::vector<TransformDim> dims_;
  SmallCnn trunk_;
};

// Input-independent uniform intervals (the global baseline): one raw
// (c, w) pair per dimension, decoded exactly like the head output.
class GlobalUniform {
 public:
  GlobalUniform() = default;
  GlobalUniform(ParamRegistry& reg, const std::string& name, std::vector<TransformDim> dims,
                RngStream& rng, double init_halfwidth = 0.05)
      : dims_(std::move(dims)) {
    const int k = static_cast<int>(dims_.size());
    std::vector<double> init(2 * k);
    for (int d = 0; d < k; ++d) {
      auto [c, w] = encode_interval(-init_halfwidth, init_halfwidth, dims_[d]);
      init[d] = c;
      init[k + d] = w;
    }
    raw_ = reg.create(name + ".raw", {2 * k}, rng, 0.0);
    raw_.data() = init;
  }

  const std::vector<TransformDim>& dims() const { return dims_; }

  DecodedIntervals forward(int batch) const {
    const int k = static_cast<int>(dims_.size());
    Tensor raw2d = reshape(raw_, {1, 2 * k});
    auto dec = decode_intervals(raw2d, dims_);
    if (batch == 1) return dec;
    std::vector<Tensor> los(batch, dec.lo), his(batch, dec.hi);
    return {concat(los, 0), concat(his, 0)};
  }

 private:
  std::vector<TransformDim> dims_;
  Tensor raw_;
};

// Input-independent patch logits (global form of the categorical law).
class GlobalLogits {
 public:
  GlobalLogits() = default;
  GlobalLogits(ParamRegistry& reg, const std::string& name, int input_side, int blocks,
               RngStream& rng)
      : table_(build_patch_table(lrp_arch(blocks), input_side, input_side)) {
    logits_ = reg.create(name + ".logits", {static_cast<int>(table_.size())}, rng, 0.0);
  }

  const PatchTable& table() const { return table_; }

  Tensor forward_logits(int batch) const {
    const int p = static_cast<int>(table_.size());
    Tensor row = reshape(logits_, {1, p});
    if (batch == 1) return row;
    std::vector<Tensor> rows(batch, row);
    return concat(rows, 0);
  }

 private:
  PatchTable table_;
  Tensor logits_;
};

}  // namespace auglab
