#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "bhfl/client.hpp"
#include "bhfl/float_client.hpp"
#include "bhfl/lowbit.hpp"

using namespace bhfl;

namespace {

// Two classes of 6x6 images: bright left half vs bright right half, plus noise.
Dataset separable_set(int per_class, Rng& rng) {
  const int n = 2 * per_class;
  Dataset d;
  d.classes = 2;
  d.images = Tensor({n, 1, 6, 6});
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    d.labels.push_back(label);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) {
        const bool lit = label == 0 ? c < 3 : c >= 3;
        const double v = (lit ? 0.8 : 0.1) + rng.uniform(-0.1, 0.1);
        d.images[(static_cast<std::size_t>(i) * 6 + r) * 6 + c] = static_cast<float>(v);
      }
    }
  }
  return d;
}

LayerGraph toy_graph() {
  ArchSpec a{1, 6, {4}, 2};
  return a.build();
}

double train_accuracy(const ClientState& c, const Dataset& d) { return evaluate(c, d); }

double ks_distance(std::vector<float> a, std::vector<float> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const float x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_SUITE("lowbit-engine") {

TEST_CASE("initialization bounds and alpha") {
  CHECK(init_bound(3) == 1.0);
  CHECK(init_bound(144) == 0.75);
  CHECK(layer_alpha(144) == 4.0);
  CHECK(layer_alpha(3) == shift(0.75));
}

TEST_CASE("fresh low-bit models satisfy the containment invariants") {
  Rng rng(1);
  for (int bits : {2, 4, 8, 12}) {
    const auto m = init_lowbit(ArchSpec{}.build(), QuantSpec::fixed(bits), rng);
    CHECK(lowbit_invariants_hold(m));
    for (const auto& t : m.weights) CHECK(max_abs(t) <= QuantSpec::fixed(bits).bound());
  }
}

TEST_CASE("alpha is an exact power of two") {
  for (int fan : {1, 3, 9, 27, 144, 1000}) {
    const double a = layer_alpha(fan);
    for (double v : {0.296875, -0.75, 0.0078125}) CHECK((v / a) * a == v);
  }
}

TEST_CASE("zero weights produce zero logits") {
  Rng rng(2);
  auto m = init_lowbit(ArchSpec{}.build(), QuantSpec::fixed(8), rng);
  for (auto& t : m.weights) t.fill(0.0f);
  Tensor x({2, 1, 12, 12}, 0.5f);
  const auto out = lowbit_forward(m, x);
  for (float v : out.logits.values()) CHECK(v == 0.0f);
}

TEST_CASE("hand-evaluated single layer") {
  LayerGraph g({2});
  g.dense(1);
  LowBitModel m{g, QuantSpec::fixed(8), {Tensor({1, 2}, {0.6f, -0.6f})}, {1.0}};
  const auto out = lowbit_forward(m, Tensor({1, 2}, {0.5f, 0.5f}));
  CHECK(out.logits[0] == 0.0f);
}

TEST_CASE("cached activations stay on the grid and non-negative") {
  Rng rng(3);
  const auto spec = QuantSpec::fixed(8);
  const auto m = init_lowbit(ArchSpec{}.build(), spec, rng);
  Tensor x({4, 1, 12, 12});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
  const auto fwd = lowbit_forward(m, x);
  const auto& layers = m.graph.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    CHECK(on_grid(fwd.cache.inputs[i], spec));
    // Inputs of later weight layers are post-activation values.
    if (i > 0 && layers[i].weight >= 0) {
      for (float v : fwd.cache.inputs[i].values()) CHECK(v >= 0.0f);
    }
  }
}

TEST_CASE("error normalization") {
  const auto s = QuantSpec::fixed(8);
  const auto e = normalize_error(Tensor({3}, {3.0f, -1.0f, 0.5f}), s);
  CHECK(e[0] == 0.75f);
  CHECK(e[1] == -0.25f);
  CHECK(e[2] == 0.125f);
  const auto z = normalize_error(Tensor({4}, 0.0f), s);
  for (float v : z.values()) CHECK(v == 0.0f);
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    Tensor r({16});
    const double scale = std::exp(rng.uniform(-8, 8));
    for (auto& v : r.values()) v = static_cast<float>(rng.normal() * scale);
    CHECK(max_abs(normalize_error(r, s)) <= s.bound());
  }
}

TEST_CASE("update rule") {
  const auto s = QuantSpec::fixed(8);
  LayerGraph g({1});
  g.dense(1);
  Rng rng(5);
  SUBCASE("zero gradient leaves weights unchanged") {
    LowBitModel m{g, s, {Tensor({1, 1}, {0.25f})}, {1.0}};
    lowbit_update(m, {Tensor({1, 1}, 0.0f)}, 8.0, rng);
    CHECK(m.weights[0][0] == 0.25f);
  }
  SUBCASE("one grid unit step is deterministic") {
    for (int t = 0; t < 50; ++t) {
      LowBitModel m{g, s, {Tensor({1, 1}, 0.0f)}, {1.0}};
      lowbit_update(m, {Tensor({1, 1}, {0.25f})}, 1.0, rng);
      CHECK(m.weights[0][0] == static_cast<float>(-s.step()));
    }
  }
  SUBCASE("grid and range hold over many random steps") {
    auto m = init_lowbit(ArchSpec{}.build(), s, rng);
    for (int step = 0; step < 1000; ++step) {
      ModelWeights grads;
      for (const auto& w : m.weights) {
        Tensor gr(w.shape());
        for (auto& v : gr.values()) v = static_cast<float>(rng.normal());
        grads.push_back(std::move(gr));
      }
      lowbit_update(m, grads, 8.0, rng);
    }
    CHECK(lowbit_invariants_hold(m));
    for (const auto& t : m.weights) CHECK(max_abs(t) <= s.bound());
  }
}

TEST_CASE("an Int8 client learns a separable toy task") {
  Rng rng(6);
  const Dataset d = separable_set(40, rng);
  std::vector<int> shard(d.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = static_cast<int>(i);
  auto c = make_client(0, QuantSpec::fixed(8), toy_graph(), shard, rng);
  LocalTrainOptions opt;
  opt.steps = 500;
  opt.batch_size = 16;
  local_update(c, d, opt, rng);
  CHECK(train_accuracy(c, d) >= 95.0);
  CHECK(lowbit_invariants_hold(std::get<LowBitModel>(c.model)));
}

TEST_CASE("float and fixed-point initial weights share a distribution") {
  const LayerGraph g = ArchSpec{}.build();
  std::vector<float> a, b;
  Rng rng(7);
  while (a.size() < 10000) {
    const auto fm = init_float(g, rng);
    // Effective weights carry the 1/alpha activation scale; undo it.
    const auto w = effective_weights(fm);
    for (float v : w[1].values()) a.push_back(static_cast<float>(v * fm.alpha[1]));
    const auto q = sample_init_weights(g, rng);
    b.insert(b.end(), q[1].values().begin(), q[1].values().end());
  }
  CHECK(ks_distance(a, b) <= 0.05);
}

}

TEST_SUITE("float-client") {

TEST_CASE("zero learning rate keeps weights") {
  Rng rng(8);
  const Dataset d = separable_set(8, rng);
  auto m = init_float(toy_graph(), rng);
  const auto before = effective_weights(m);
  FloatStepOptions opt;
  opt.lr = 0;
  float_client_step(m, d.images, d.labels, opt);
  CHECK(effective_weights(m) == before);
}

TEST_CASE("loss decreases and clipped gradients respect the bound") {
  Rng rng(9);
  const Dataset d = separable_set(40, rng);
  auto m = init_float(toy_graph(), rng);
  FloatStepOptions opt;
  std::vector<double> losses;
  std::vector<int> idx(16);
  for (int step = 0; step < 200; ++step) {
    for (auto& i : idx) i = static_cast<int>(rng.index(d.size()));
    const Batch b = gather_batch(d, idx, nullptr, rng);
    const auto r = float_client_step(m, b.images, b.labels, opt);
    CHECK(r.clipped_grad_norm <= 2.0 + 1e-6);
    losses.push_back(r.loss);
  }
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += losses[i];
    last += losses[losses.size() - 1 - i];
  }
  CHECK(last < first);
}

}

TEST_SUITE("client") {

TEST_CASE("zero local steps is the identity") {
  Rng rng(10);
  const Dataset d = separable_set(8, rng);
  std::vector<int> shard{0, 1, 2, 3};
  for (int bits : {8, 32}) {
    auto c = make_client(0, QuantSpec::from_bits(bits), toy_graph(), shard, rng);
    const auto before = c.weights();
    LocalTrainOptions opt;
    opt.steps = 0;
    local_update(c, d, opt, rng);
    CHECK(c.weights() == before);
  }
}

TEST_CASE("Int8 invariants hold after 200 local steps") {
  Rng rng(11);
  const Dataset d = separable_set(20, rng);
  std::vector<int> shard(d.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = static_cast<int>(i);
  auto c = make_client(0, QuantSpec::fixed(8), toy_graph(), shard, rng);
  LocalTrainOptions opt;
  local_update(c, d, opt, rng);
  CHECK(lowbit_invariants_hold(std::get<LowBitModel>(c.model)));
}

TEST_CASE("a huge proximal coefficient pins float weights to the anchor") {
  Rng rng(12);
  const Dataset d = separable_set(20, rng);
  std::vector<int> shard(d.size());
  for (std::size_t i = 0; i < shard.size(); ++i) shard[i] = static_cast<int>(i);
  auto c = make_client(0, QuantSpec::full_precision(), toy_graph(), shard, rng);
  const ModelWeights anchor = c.weights();
  LocalTrainOptions opt;
  opt.steps = 5;
  opt.prox_mu = 1e6;
  opt.prox_anchor = &anchor;
  local_update(c, d, opt, rng);
  const auto after = c.weights();
  for (std::size_t i = 0; i < after.size(); ++i) {
    for (std::size_t j = 0; j < after[i].size(); ++j) CHECK(std::abs(after[i][j] - anchor[i][j]) <= 1e-2);
  }
}

TEST_CASE("uplink payloads") {
  Rng rng(13);
  auto c = make_client(0, QuantSpec::fixed(8), toy_graph(), {0}, rng);
  for (const auto& t : uplink_payload(c, UplinkMode::kTernary).weights) {
    for (float v : t.values()) CHECK((v == 0.0f || v == 0.5f || v == -0.5f));
  }
  const auto native = uplink_payload(c, UplinkMode::kNative);
  CHECK(native.spec == QuantSpec::fixed(8));
  for (const auto& t : native.weights) CHECK(on_grid(t, QuantSpec::fixed(8)));
  auto f = make_client(1, QuantSpec::full_precision(), toy_graph(), {0}, rng);
  CHECK_THROWS_AS(uplink_payload(f, UplinkMode::kTernary), ConfigError);
}

TEST_CASE("downlink puts low-bit weights on their grid") {
  Rng rng(14);
  auto c = make_client(0, QuantSpec::fixed(4), toy_graph(), {0}, rng);
  ModelWeights w = c.weights();
  for (auto& t : w)
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-2, 2));
  receive_weights(c, w);
  for (const auto& t : c.weights()) CHECK(on_grid(t, QuantSpec::fixed(4)));
}

}
