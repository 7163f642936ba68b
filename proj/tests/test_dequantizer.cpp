#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "bhfl/dequantizer.hpp"
#include "bhfl/lowbit.hpp"

using namespace bhfl;

namespace {

const LayerGraph& desk_arch() {
  static const LayerGraph g = ArchSpec{1, 12, {16, 16}, 10}.build();
  return g;
}

void randomize(DequantStack& s, Rng& rng, double scale) {
  for (std::size_t j = 0; j < s.num_blocks(); ++j) {
    for (auto& t : s.block_mut(j)) {
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-scale, scale));
    }
  }
}

std::vector<Payload> float_payloads(int n, Rng& rng) {
  std::vector<Payload> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({QuantSpec::full_precision(), sample_init_weights(desk_arch(), rng)});
  }
  return out;
}

Tensor random_tile(const CouplingGeometry& g, Rng& rng, int batch = 2) {
  Tensor t({batch, g.channels, g.height, g.width});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-0.75, 0.75));
  return t;
}

const BitwidthLadder kLadder{{kInt2, QuantSpec::fixed(8), QuantSpec::full_precision()}};

}  // namespace

TEST_SUITE("dequantizer") {

TEST_CASE("ladder construction") {
  const auto l = BitwidthLadder::spanning({QuantSpec::fixed(8), QuantSpec::full_precision()});
  REQUIRE(l.size() == 3);
  CHECK(l[0] == QuantSpec::fixed(8));
  CHECK(l[1] == QuantSpec::fixed(16));
  CHECK(l[2] == QuantSpec::full_precision());
  const auto m = BitwidthLadder::spanning({QuantSpec::fixed(6), QuantSpec::fixed(12)}, {6, 8, 10, 12, 16});
  CHECK(m.size() == 4);
  CHECK_THROWS_AS(BitwidthLadder({QuantSpec::fixed(8), QuantSpec::fixed(8)}), ConfigError);
  CHECK_THROWS_AS(BitwidthLadder({QuantSpec::fixed(8), QuantSpec::fixed(4)}), ConfigError);
  CHECK_THROWS_AS(kLadder.require_spans({QuantSpec::fixed(4)}), ConfigError);
  CHECK_NOTHROW(kLadder.require_spans({kInt2, QuantSpec::full_precision()}));
  CHECK(kLadder.stage_of(QuantSpec::fixed(8)) == 1);
  CHECK_FALSE(kLadder.stage_of(QuantSpec::fixed(4)).has_value());
}

TEST_CASE("tile geometry") {
  const auto g16 = tile_geometry(16);
  CHECK(g16.channels == 16);
  CHECK(g16.height == 12);
  CHECK(g16.width == 12);
  const auto g64 = tile_geometry(64);
  CHECK(g64.height == 24);
  CHECK(g64.width == 24);
  const auto g8 = tile_geometry(8);
  CHECK(g8.height == 24);
  CHECK(g8.width == 3);
}

TEST_CASE("a 256x128 conv splits into 8 modules of 64 channels") {
  LayerGraph g({3, 8, 8});
  g.conv2d(128).relu().conv2d(256);
  CHECK(eligible_tiles(g, 64).size() == 8);
}

TEST_CASE("the first conv and dense layers are not eligible") {
  const auto tiles = eligible_tiles(desk_arch(), 16);
  REQUIRE(tiles.size() == 1);
  CHECK(tiles[0].param == 1);
}

TEST_CASE("tile extraction round trip") {
  Rng rng(1);
  LayerGraph g({3, 8, 8});
  g.conv2d(32).conv2d(32);
  const auto geom = tile_geometry(16);
  Tensor w(g.param_shapes()[1]);
  for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor copy(w.shape());
  for (const auto& loc : eligible_tiles(g, 16)) insert_tile(copy, loc, geom, extract_tile(w, loc, geom));
  CHECK(copy == w);
}

TEST_CASE("weight dataset stages are direct quantizations") {
  Rng rng(2);
  const auto geom = tile_geometry(16);
  auto payloads = float_payloads(3, rng);
  payloads.push_back({kInt2, sample_init_weights(desk_arch(), rng)});
  for (auto& t : payloads.back().weights) t = quantize(t, kInt2);
  const auto data = build_weight_dataset(payloads, desk_arch(), kLadder, geom);
  CHECK(data.samples.size() == 3);  // the Int2 payload sits at stage 0
  for (const auto& s : data.samples) {
    REQUIRE(s.stages.size() == 3);
    for (std::size_t j = 0; j < s.stages.size(); ++j) {
      CHECK(s.stages[j].shape() == Shape{16, 12, 12});
      CHECK(s.stages[j] == quantize(s.stages.back(), kLadder[j]));
    }
  }
  CHECK_THROWS_AS(build_weight_dataset({payloads.back()}, desk_arch(), kLadder, geom), ConfigError);
}

TEST_CASE("an untrained stack is the exact identity") {
  Rng rng(3);
  DequantStack s(kLadder, {}, rng);
  const Tensor q = random_tile(s.geometry(), rng);
  CHECK(stack_forward(s, q, 0, 2) == q);
  CHECK(stack_forward(s, q, 1, 1) == q);
}

TEST_CASE("tau = 0 gives the identity regardless of the blocks") {
  Rng rng(4);
  StackOptions o;
  o.tau = 0;
  DequantStack s(kLadder, o, rng);
  randomize(s, rng, 0.3);
  const Tensor q = random_tile(s.geometry(), rng);
  CHECK(stack_forward(s, q, 0, 2) == q);
}

TEST_CASE("block residual equals tau times the inner displacement") {
  Rng rng(5);
  DequantStack s(kLadder, {}, rng);
  randomize(s, rng, 0.2);
  const Tensor q = random_tile(s.geometry(), rng, 1);
  const Tensor out = s.forward_block(0, q);
  const Tensor inner = block_inner<float>(s.geometry(), s.subnet(), s.block(0), q);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    lhs += std::pow(double(out[i]) - q[i], 2);
    rhs += std::pow(double(inner[i]) - q[i], 2);
  }
  CHECK(std::sqrt(lhs) == doctest::Approx(0.1 * std::sqrt(rhs)).epsilon(1e-5));
}

TEST_CASE("stack composition") {
  Rng rng(6);
  DequantStack s(kLadder, {}, rng);
  randomize(s, rng, 0.2);
  const Tensor q = random_tile(s.geometry(), rng);
  CHECK(stack_forward(s, q, 0, 2) == stack_forward(s, stack_forward(s, q, 0, 1), 1, 2));
  CHECK_THROWS_AS(stack_forward(s, q, 0, 3), UsageError);
  CHECK_THROWS_AS(stack_forward(s, q, 2, 1), UsageError);
}

TEST_CASE("reconstruction loss") {
  Rng rng(7);
  const auto data = build_weight_dataset(float_payloads(2, rng), desk_arch(), kLadder, tile_geometry(16));
  DequantStack s(kLadder, {}, rng);
  SUBCASE("identity blocks give the summed stage gaps") {
    const auto& smp = data.samples[0];
    double expected = 0;
    for (int j = 0; j < 2; ++j) {
      double sum = 0;
      for (std::size_t i = 0; i < smp.stages[j].size(); ++i) {
        sum += std::abs(double(smp.stages[j + 1][i]) - smp.stages[j][i]);
      }
      expected += sum / smp.stages[j].size();
    }
    CHECK(recon_loss(s, smp) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("stages that already agree cost nothing") {
    WeightSample smp = data.samples[0];
    for (auto& t : smp.stages) t = smp.stages[0];
    CHECK(recon_loss(s, smp) == 0.0);
  }
  SUBCASE("never negative") {
    randomize(s, rng, 0.3);
    for (const auto& smp : data.samples) CHECK(recon_loss(s, smp) >= 0.0);
  }
}

TEST_CASE("distillation loss") {
  Rng rng(8);
  const auto tiles = eligible_tiles(desk_arch(), 16);
  Tensor u({8, 1, 12, 12});
  for (auto& v : u.values()) v = static_cast<float>(rng.uniform());
  DequantStack s(kLadder, {}, rng);
  ModelWeights w = sample_init_weights(desk_arch(), rng);
  for (auto& t : w) t = quantize(t, kInt2);
  CHECK(distill_loss(s, w, 2, tiles, desk_arch(), u) == doctest::Approx(-1.0).epsilon(1e-6));
  randomize(s, rng, 0.5);
  for (int k = 0; k < 5; ++k) {
    const auto wf = sample_init_weights(desk_arch(), rng);
    const double l = distill_loss(s, wf, 2, tiles, desk_arch(), u);
    CHECK(l >= -1.0 - 1e-9);
    CHECK(l <= 1.0 + 1e-9);
  }
}

TEST_CASE("reconstruction-only training lowers the training loss") {
  Rng rng(9);
  const auto data = build_weight_dataset(float_payloads(4, rng), desk_arch(), kLadder, tile_geometry(16));
  DequantStack s(kLadder, {}, rng);
  DistillBuffer buf{Tensor({4, 1, 12, 12}, 0.5f)};
  DequantTrainOptions opt;
  opt.lambda = 0;
  opt.epochs = 20;
  opt.batch_size = 4;
  opt.lr = 0.05;
  const auto rep = train_dequantizer(s, data, buf, desk_arch(), opt);
  CHECK_FALSE(rep.diverged);
  CHECK(rep.steps == 20);
  double loss = 0, identity = 0;
  DequantStack id(kLadder, {}, rng);
  for (const auto& smp : data.samples) {
    loss += recon_loss(s, smp);
    identity += recon_loss(id, smp);
  }
  CHECK(loss < identity);
}

TEST_CASE("divergence restores the last good stack") {
  Rng rng(10);
  const auto data = build_weight_dataset(float_payloads(2, rng), desk_arch(), kLadder, tile_geometry(16));
  DequantStack s(kLadder, {}, rng);
  DistillBuffer buf{Tensor({4, 1, 12, 12}, 0.5f)};
  DequantTrainOptions opt;
  opt.lambda = 0;
  opt.lr = 1e30;
  opt.epochs = 3;
  opt.batch_size = 2;
  opt.checkpoint_path = std::filesystem::temp_directory_path() / "bhfl_test_diverged.bin";
  const auto rep = train_dequantizer(s, data, buf, desk_arch(), opt);
  CHECK(rep.diverged);
  CHECK(s.all_finite());
  CHECK(std::filesystem::exists(opt.checkpoint_path));
  std::filesystem::remove(opt.checkpoint_path);
}

TEST_CASE("checkpoint round trip and corruption detection") {
  Rng rng(11);
  DequantStack s(kLadder, {}, rng);
  randomize(s, rng, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "bhfl_test_stack.bin";
  save_stack(s, path);
  const DequantStack t = load_stack(path);
  CHECK(t.num_blocks() == s.num_blocks());
  for (std::size_t j = 0; j < s.num_blocks(); ++j) CHECK(t.block(j) == s.block(j));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-12, std::ios::end);
    f.put('\x7f');
  }
  CHECK_THROWS(load_stack(path));
  std::filesystem::remove(path);
}

TEST_CASE("apply_stack leaves ineligible tensors untouched") {
  Rng rng(12);
  DequantStack s(kLadder, {}, rng);
  randomize(s, rng, 0.2);
  const auto w = sample_init_weights(desk_arch(), rng);
  const auto out = apply_stack(s, w, eligible_tiles(desk_arch(), 16), 0, 2);
  CHECK(out[0] == w[0]);
  CHECK(out[2] == w[2]);
  CHECK_FALSE(out[1] == w[1]);
}

}
