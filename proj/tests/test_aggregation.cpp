#include <cmath>
#include <numeric>

#include "doctest.h"

#include "bhfl/aggregation.hpp"

using namespace bhfl;

namespace {

std::vector<QuantSpec> specs_of(std::initializer_list<int> bits) {
  std::vector<QuantSpec> s;
  for (int b : bits) s.push_back(QuantSpec::from_bits(b));
  return s;
}

std::vector<int> bits_of(const std::vector<int>& idx, const std::vector<QuantSpec>& specs) {
  std::vector<int> out;
  for (int i : idx) out.push_back(specs[i].bits());
  return out;
}

ModelWeights single(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return {Tensor({n}, std::move(v))};
}

}  // namespace

TEST_SUITE("aggregation") {

TEST_CASE("high/low split by mean bitwidth") {
  const auto a = specs_of({8, 8, 32, 32});
  const auto sa = split_high_low(a);
  CHECK(sa.valid);
  CHECK(sa.mean_bits == 20.0);
  CHECK(bits_of(sa.low, a) == std::vector<int>{8, 8});
  CHECK(bits_of(sa.high, a) == std::vector<int>{32, 32});

  const auto b = specs_of({6, 6, 6, 8, 8, 8, 12, 12, 16, 16});
  const auto sb = split_high_low(b);
  CHECK(sb.mean_bits == doctest::Approx(9.8));
  CHECK(sb.low.size() == 6);
  CHECK(sb.high.size() == 4);
  for (int i : sb.low) CHECK(b[i].bits() <= 8);

  CHECK_FALSE(split_high_low(specs_of({8, 8, 8})).valid);
}

TEST_CASE("mask solver examples") {
  const std::vector<double> lo{1, -1}, hi{1, 1};
  const auto s = solve_mask(lo, hi, {0.5, 10, 64});
  CHECK(s.mask == std::vector<unsigned char>{1, 0});
  CHECK(s.objective == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));

  const std::vector<double> same{0.3, -0.2, 0.9, 0.1};
  const auto t = solve_mask(same, same, {});
  CHECK(t.objective == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::all_of(t.mask.begin(), t.mask.end(), [](auto m) { return m == 1; }));

  const std::vector<double> zeros(4, 0.0);
  const auto z = solve_mask(same, zeros, {0.5});
  CHECK(std::all_of(z.mask.begin(), z.mask.end(), [](auto m) { return m == 1; }));
}

TEST_CASE("mask budget uses the ceiling") {
  CHECK(mask_floor(10, 0.9) == 9);
  CHECK(mask_floor(15, 0.9) == 14);
  CHECK(mask_floor(2, 0.5) == 1);
  CHECK(mask_floor(7, 1.0) == 7);
}

TEST_CASE("solver matches brute force and beats random masks") {
  Rng rng(21);
  for (int it = 0; it < 300; ++it) {
    const int n = 2 + static_cast<int>(rng.index(14));
    const double keep = std::vector<double>{0.6, 0.8, 0.9}[rng.index(3)];
    std::vector<double> lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      lo[i] = rng.normal();
      hi[i] = rng.normal();
    }
    const auto s = solve_mask(lo, hi, {keep});
    const auto b = solve_mask_brute_force(lo, hi, keep);
    CHECK(s.objective >= b.objective - 1e-9);
    CHECK(s.objective >= s.ones_objective - 1e-12);
    CHECK(s.kept >= mask_floor(n, keep));
    CHECK(s.objective == doctest::Approx(mask_objective(lo, hi, s.mask)).epsilon(1e-12));
    std::vector<unsigned char> r(n, 0);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    for (std::size_t k = 0; k < mask_floor(n, keep); ++k) r[idx[k]] = 1;
    CHECK(s.objective >= mask_objective(lo, hi, r) - 1e-12);
  }
}

TEST_CASE("large masks respect the budget and improve alignment") {
  Rng rng(22);
  std::vector<double> lo(5000), hi(5000);
  for (int i = 0; i < 5000; ++i) {
    hi[i] = rng.normal();
    lo[i] = hi[i] + 2 * rng.normal();
  }
  const auto s = solve_mask(lo, hi, {0.9});
  CHECK(s.kept >= 4500);
  CHECK(s.objective > s.ones_objective);
}

TEST_CASE("masked aggregation divides by the client count") {
  const auto a = single({2, 4}), b = single({4, 8});
  const ModelMask ma{{1, 0}};
  const auto g = prowd_aggregate({&a, &b}, {nullptr, &ma});
  CHECK(g[0][0] == 3.0f);
  CHECK(g[0][1] == 2.0f);
}

TEST_CASE("all-ones masks reproduce plain averaging bitwise") {
  Rng rng(23);
  std::vector<ModelWeights> ws(5);
  for (auto& w : ws) {
    w = {Tensor({7, 3}), Tensor({4})};
    for (auto& t : w)
      for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  }
  std::vector<const ModelWeights*> ptrs;
  for (const auto& w : ws) ptrs.push_back(&w);
  const ModelMask ones{TensorMask(21, 1), TensorMask(4, 1)};
  CHECK(prowd_aggregate(ptrs, {&ones, nullptr, &ones, nullptr, &ones}) == fedavg_aggregate(ptrs));
}

TEST_CASE("plain averaging") {
  const auto a = single({1, 2}), b = single({3, 6});
  const auto g = fedavg_aggregate(std::vector<ModelWeights>{a, b});
  CHECK(g[0][0] == 2.0f);
  CHECK(g[0][1] == 4.0f);
}

TEST_CASE("grouped averaging") {
  const auto specs = specs_of({8, 8, 32, 32});
  const auto a = single({0.25f}), b = single({0.5f}), c = single({0.3f}), d = single({0.1f});
  const std::vector<const ModelWeights*> w{&a, &b, &c, &d};
  const auto sym = grouped_aggregate(w, specs, false);
  CHECK(sym.at(8)[0][0] == 0.375f);
  CHECK(sym.at(32)[0][0] == doctest::Approx(0.2f));
  const auto asym = grouped_aggregate(w, specs, true);
  // The low group also hears the high clients, quantized to its grid.
  CHECK(asym.at(8)[0][0] == static_cast<float>(quantize((0.25 + 0.5 + 0.3f + 0.1f) / 4, QuantSpec::fixed(8))));
  CHECK(asym.at(32)[0][0] == doctest::Approx(0.2f));
  const auto f = group_fractions(specs_of({8, 8, 8, 32}));
  CHECK(f.at(8) == 0.75);
}

TEST_CASE("per-tensor masks") {
  Rng rng(24);
  ModelWeights lo{Tensor({10}), Tensor({3, 3})}, hi{Tensor({10}), Tensor({3, 3})};
  for (auto* w : {&lo, &hi})
    for (auto& t : *w)
      for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  const auto m = compute_masks(lo, hi, {0.8});
  REQUIRE(m.size() == 2);
  CHECK(m[0].size() == 10);
  CHECK(std::count(m[0].begin(), m[0].end(), 1) >= 8);
  CHECK(std::count(m[1].begin(), m[1].end(), 1) >= 8);
}

TEST_CASE("diff quantization") {
  Rng rng(25);
  const Tensor d({4}, {0.3f, -0.01f, 0.0f, 0.12f});
  CHECK(quantize_diff(d, QuantSpec::full_precision(), rng) == d);
  CHECK(quantize_diff(Tensor({3}, 0.0f), QuantSpec::fixed(8), rng) == Tensor({3}, 0.0f));
  double sum = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const Tensor q = quantize_diff(d, QuantSpec::fixed(4), rng);
    // scale 0.5, grid step 1/8 of it
    CHECK(on_grid(q[0] / 0.5, QuantSpec::fixed(4)));
    sum += q[1];
  }
  CHECK(std::abs(sum / n - (-0.01)) < 4 * 0.0625 / std::sqrt(double(n)));
}

TEST_CASE("QPC server steps") {
  const ModelWeights init = single({1.0f, 2.0f});
  auto paq = make_qpc_server(QpcVariant::kFedPaq, init, 2, 1.0);
  qpc_round(paq, {single({0.2f, 0}), single({0.4f, -1})}, 10);
  CHECK(paq.global[0][0] == doctest::Approx(1.3f));
  CHECK(paq.global[0][1] == doctest::Approx(1.5f));
  auto com = make_qpc_server(QpcVariant::kFedCom, init, 2, 10.0);
  qpc_round(com, {single({0.02f, 0}), single({0.04f, 0})}, 10);
  CHECK(com.global[0][0] == doctest::Approx(1.3f));
  auto gate = make_qpc_server(QpcVariant::kFedComGate, init, 2, 10.0);
  qpc_round(gate, {single({0.02f, 0}), single({0.04f, 0})}, 10);
  CHECK(gate.corrections[0][0][0] == doctest::Approx(0.001f));
  CHECK(gate.corrections[1][0][0] == doctest::Approx(-0.001f));
}

}
