#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "auglab/invariance.hpp"
#include "auglab/rng.hpp"
#include "auglab/tensor.hpp"

using namespace auglab;

namespace {

Tensor random_image(int c, int h, int w, RngStream& rng) {
  std::vector<double> data(static_cast<std::size_t>(c) * h * w);
  for (auto& v : data) v = rng.uniform();
  return Tensor({c, h, w}, std::move(data));
}

// Single-pixel perturbation oracle: which logits move when one input pixel
// is flipped. With generic continuous weights a logit moves iff the pixel
// lies in that unit's receptive field.
std::vector<char> changed_logits(const LrpNet& net, const Tensor& img, int py, int px) {
  NoGradGuard ng;
  Tensor batch = reshape(img, {1, img.shape()[0], img.shape()[1], img.shape()[2]});
  std::vector<double> base = net.forward_logits(batch).value();
  Tensor flipped = img.detached_copy();
  const int w = img.shape()[2];
  for (int c = 0; c < img.shape()[0]; ++c)
    flipped.data()[(c * img.shape()[1] + py) * w + px] += 0.731;
  Tensor batch2 = reshape(flipped, {1, img.shape()[0], img.shape()[1], img.shape()[2]});
  std::vector<double> moved = net.forward_logits(batch2).value();
  std::vector<char> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i)
    out[i] = std::abs(moved[i] - base[i]) > 1e-9 ? 1 : 0;
  return out;
}

bool pixel_in_patch(const PatchSpec& e, int py, int px) {
  const double half = (e.side - 1.0) / 2.0;
  return py >= e.center_y - half - 1e-9 && py <= e.center_y + half + 1e-9 &&
         px >= e.center_x - half - 1e-9 && px <= e.center_x + half + 1e-9;
}

// LrpNet with every weight made generic (collapse convs are zero-initialized
// by default, which would hide receptive fields from the oracle).
LrpNet generic_lrp(ParamRegistry& reg, int in_ch, int side, int blocks, int channels,
                   RngStream& rng) {
  LrpNet net(reg, "phi", in_ch, side, blocks, channels, rng);
  for (const auto& [name, t] : reg.items())
    if (name.find("collapse") != std::string::npos) {
      Tensor handle = t;  // shares the underlying buffer
      for (auto& v : handle.data()) v = rng.uniform(0.2, 1.0);
    }
  return net;
}

}  // namespace

TEST_CASE("patch table for one conv/pool block: side 3, stride 2") {
  PatchTable t = build_patch_table(lrp_arch(1), 32, 32);
  // 32 -> conv(2,1) -> 31 -> pool(2,2) -> 15
  CHECK(t.size() == 15 * 15);
  for (const auto& e : t.entries) {
    CHECK(e.side == 3.0);
    CHECK(e.layer == 1);
  }
  CHECK(t.entries[0].center_y == 1.0);
  CHECK(t.entries[0].center_x == 1.0);
  CHECK(t.entries[1].center_x - t.entries[0].center_x == 2.0);  // stride 2 in input pixels

  RngStream rng(51);
  ParamRegistry reg;
  LrpNet net = generic_lrp(reg, 1, 32, 1, 3, rng);
  Tensor img = random_image(1, 32, 32, rng);
  for (auto [py, px] : std::vector<std::pair<int, int>>{{0, 0}, {5, 9}, {31, 31}, {16, 2}}) {
    auto changed = changed_logits(net, img, py, px);
    for (long long i = 0; i < t.size(); ++i)
      CHECK(static_cast<bool>(changed[i]) == pixel_in_patch(t.entries[i], py, px));
  }
}

TEST_CASE("patch table for two blocks: second layer side 7, stride 4") {
  PatchTable t = build_patch_table(lrp_arch(2), 32, 32);
  CHECK(t.size() == 15 * 15 + 7 * 7);
  const PatchSpec& first_l2 = t.entries[15 * 15];
  CHECK(first_l2.layer == 2);
  CHECK(first_l2.side == 7.0);
  CHECK(first_l2.center_y == 3.0);
  CHECK(t.entries[15 * 15 + 1].center_x - first_l2.center_x == 4.0);

  RngStream rng(52);
  ParamRegistry reg;
  LrpNet net = generic_lrp(reg, 1, 32, 2, 3, rng);
  Tensor img = random_image(1, 32, 32, rng);
  for (auto [py, px] : std::vector<std::pair<int, int>>{{0, 0}, {13, 21}, {27, 4}}) {
    auto changed = changed_logits(net, img, py, px);
    for (long long i = 0; i < t.size(); ++i)
      CHECK(static_cast<bool>(changed[i]) == pixel_in_patch(t.entries[i], py, px));
  }
}

TEST_CASE("patch table geometry matches the perturbation oracle exhaustively on 32x32") {
  RngStream rng(53);
  ParamRegistry reg;
  const int blocks = 2;
  PatchTable t = build_patch_table(lrp_arch(blocks), 32, 32);
  LrpNet net = generic_lrp(reg, 1, 32, blocks, 2, rng);
  Tensor img = random_image(1, 32, 32, rng);
  long long mismatches = 0;
  for (int py = 0; py < 32; ++py)
    for (int px = 0; px < 32; ++px) {
      auto changed = changed_logits(net, img, py, px);
      for (long long i = 0; i < t.size(); ++i)
        if (static_cast<bool>(changed[i]) != pixel_in_patch(t.entries[i], py, px)) ++mismatches;
    }
  CHECK(mismatches == 0);
}

TEST_CASE("zero-layer arch degenerates to one whole-image patch") {
  PatchTable t = build_patch_table({}, 24, 24);
  REQUIRE(t.size() == 1);
  CHECK(t.entries[0].side == 24.0);
  CHECK(t.entries[0].center_y == 11.5);
  CHECK(t.entries[0].layer == 0);
}

TEST_CASE("patch sides grow monotonically with layer index") {
  PatchTable t = build_patch_table(lrp_arch(4), 48, 48);
  double last_side = 0.0;
  int last_layer = 0;
  for (const auto& e : t.entries) {
    if (e.layer != last_layer) {
      CHECK(e.side > last_side);
      last_side = e.side;
      last_layer = e.layer;
    } else {
      CHECK(e.side == last_side);
    }
  }
  CHECK(last_layer == 4);
}

TEST_CASE("a feature map shrinking below 1x1 is an error") {
  CHECK_THROWS_AS(build_patch_table(lrp_arch(5), 16, 16), TensorError);
}

TEST_CASE("patch table export is one row per entry") {
  PatchTable t = build_patch_table(lrp_arch(1), 8, 8);
  std::ostringstream out;
  export_patch_table(t, out);
  std::istringstream in(out.str());
  std::string line;
  long long rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == t.size() + 1);  // header + entries
  CHECK(out.str().rfind("index,layer,center_y,center_x,side", 0) == 0);
}

TEST_CASE("fresh LRP net is uniform over patches") {
  RngStream rng(54);
  ParamRegistry reg;
  LrpNet net(reg, "phi", 3, 32, 2, 4, rng);
  Tensor img = random_image(3, 32, 32, rng);
  CategoricalParams p = lrp_forward(net, img);
  const long long n = net.table().size();
  REQUIRE(p.logits.size() == n);
  for (double l : p.logits.value()) CHECK(l == 0.0);
  CHECK(categorical_entropy(p).item() == doctest::Approx(std::log(static_cast<double>(n)))
                                             .epsilon(1e-12));
}

TEST_CASE("patch probabilities normalize and stay positive") {
  RngStream rng(55);
  ParamRegistry reg;
  LrpNet net = generic_lrp(reg, 3, 32, 2, 4, rng);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor img = random_image(3, 32, 32, rng);
    CategoricalParams p = lrp_forward(net, img);
    std::vector<double> probs = exp(log_softmax(p.logits)).value();
    double total = 0.0;
    for (double v : probs) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);

    // Shifting every logit leaves the law unchanged.
    Tensor shifted = add(p.logits, 17.3);
    std::vector<double> probs2 = exp(log_softmax(shifted)).value();
    for (std::size_t i = 0; i < probs.size(); ++i)
      CHECK(std::abs(probs[i] - probs2[i]) < 1e-12);
  }
}

TEST_CASE("argmax logit's receptive field is the max-probability patch") {
  RngStream rng(56);
  ParamRegistry reg;
  LrpNet net = generic_lrp(reg, 1, 32, 2, 3, rng);
  Tensor img = random_image(1, 32, 32, rng);
  CategoricalParams p = lrp_forward(net, img);
  long long argmax = 0;
  for (long long i = 1; i < p.logits.size(); ++i)
    if (p.logits.value()[i] > p.logits.value()[argmax]) argmax = i;

  const PatchSpec& e = net.table().entries[argmax];
  // Perturbing a pixel at the claimed center moves the argmax logit;
  // perturbing outside the claimed field does not.
  auto inside = changed_logits(net, img, static_cast<int>(e.center_y),
                               static_cast<int>(e.center_x));
  CHECK(static_cast<bool>(inside[argmax]));
  for (int py = 0; py < 32 && e.layer == 2; ++py)
    for (int px = 0; px < 32; ++px)
      if (!pixel_in_patch(e, py, px)) {
        auto outside = changed_logits(net, img, py, px);
        CHECK_FALSE(static_cast<bool>(outside[argmax]));
        py = 32;  // one witness is enough
        break;
      }
}

TEST_CASE("decode limits: tiny and saturated halfwidths") {
  std::vector<TransformDim> dims = {TransformDim::kRotation};

  Tensor tiny({1, 2}, {0.0, -50.0});
  auto d1 = decode_intervals(tiny, dims);
  CHECK(d1.hi.value()[0] - d1.lo.value()[0] == doctest::Approx(kEpsWidth).epsilon(1e-9));
  CHECK(0.5 * (d1.hi.value()[0] + d1.lo.value()[0]) == doctest::Approx(0.0).epsilon(1e-12));

  Tensor wide({1, 2}, {0.0, 50.0});
  auto d2 = decode_intervals(wide, dims);
  CHECK(d2.lo.value()[0] == -kPi);
  CHECK(d2.hi.value()[0] == kPi);
}

TEST_CASE("decode then re-encode round-trips") {
  RngStream rng(57);
  for (TransformDim dim : {TransformDim::kRotation, TransformDim::kHueShift,
                           TransformDim::kSatShift}) {
    const DimRange r = legal_range(dim);
    for (int rep = 0; rep < 200; ++rep) {
      // Legal intervals away from the cap.
      const double mid = 0.5 * (r.lo + r.hi), halfrange = 0.5 * (r.hi - r.lo);
      const double center = mid + rng.uniform(-0.8, 0.8) * halfrange;
      const double max_half = std::min(center - r.lo, r.hi - center) * 0.9;
      const double half = rng.uniform(kEpsWidth, std::max(kEpsWidth * 1.01, max_half));
      const double lo = center - half, hi = center + half;

      auto [c, w] = encode_interval(lo, hi, dim);
      Tensor raw({1, 2}, {c, w});
      auto dec = decode_intervals(raw, {dim});
      CHECK(std::abs(dec.lo.value()[0] - lo) < 1e-6);
      CHECK(std::abs(dec.hi.value()[0] - hi) < 1e-6);
    }
  }
}

TEST_CASE("decoded intervals satisfy UniformParams invariants for random raw draws") {
  RngStream rng(58);
  std::vector<TransformDim> dims = {TransformDim::kRotation, TransformDim::kHueShift,
                                    TransformDim::kSatShift, TransformDim::kValShift};
  for (int rep = 0; rep < 10000; ++rep) {
    std::vector<double> raw(8);
    for (auto& v : raw) v = rng.uniform(-20.0, 20.0);
    auto dec = decode_intervals(Tensor({1, 8}, raw), dims);
    UniformParams p;
    p.lo = reshape(dec.lo, {4});
    p.hi = reshape(dec.hi, {4});
    p.dims = dims;
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("uniform head output satisfies the invariants on random weights") {
  RngStream rng(59);
  for (int draw = 0; draw < 100; ++draw) {
    ParamRegistry reg;
    UniformHead head(reg, "phi", 1, 32, {TransformDim::kRotation}, rng, 4, 4, 8);
    Tensor img = random_image(1, 32, 32, rng);
    UniformParams p = head.forward_single(img);
    CHECK_NOTHROW(p.validate());
  }
}

TEST_CASE("global uniform parameter count is input-independent") {
  RngStream rng(60);
  ParamRegistry reg;
  GlobalUniform g(reg, "aug", {TransformDim::kRotation}, rng);
  CHECK(reg.count() == 2);  // one (c, w) pair, however many examples exist
  auto dec = g.forward(5);
  CHECK(dec.lo.shape() == Shape{5, 1});
  for (int b = 0; b < 5; ++b) CHECK(dec.lo.value()[b] == dec.lo.value()[0]);
}
