#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gdfed/error.hpp"
#include "gdfed/params.hpp"
#include "test_support.hpp"

using namespace gdfed;
using testing::random_like;
using testing::random_set;

namespace {

ParameterSet single(const std::string& name, std::vector<double> v, bool trainable = true) {
  ParameterSet s;
  const std::size_t n = v.size();
  s.set(name, Tensor({1, n}, std::move(v)), trainable);
  return s;
}

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes and data") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), StructuralError);
  CHECK_THROWS_AS(Tensor({0, 2}), ArgumentError);
  CHECK(Tensor({2, 3}).size() == 6);
}

TEST_CASE("parameter sets iterate in lexicographic order") {
  ParameterSet s;
  s.set("zeta", Tensor({1}), true);
  s.set("alpha", Tensor({1}), true);
  s.set("mid", Tensor({1}), false);
  CHECK(s.names() == std::vector<std::string>{"alpha", "mid", "zeta"});
  CHECK_THROWS(s.set("", Tensor({1}), true));
}

TEST_CASE("subtract_trainable examples") {
  SUBCASE("identical sets give zero deltas on trainable entries") {
    std::mt19937_64 rng(1);
    const ParameterSet g = random_set(rng, 4, 0b0101);
    const ParameterSet d = subtract_trainable(g, g);
    CHECK(d.size() == 2);
    for (const auto& [_, e] : d) {
      for (double v : e.tensor.values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("elementwise difference") {
    const ParameterSet d = subtract_trainable(single("w", {3, 5}), single("w", {1, 2}));
    CHECK(d.tensor("w").data() == std::vector<double>{2, 3});
  }
  SUBCASE("frozen entries are omitted and the rest match a brute-force loop") {
    std::mt19937_64 rng(2);
    const ParameterSet g = random_set(rng, 3, 0b010);
    const ParameterSet l = random_like(rng, g);
    const ParameterSet d = subtract_trainable(l, g);
    REQUIRE(d.names() == std::vector<std::string>{"p0", "p2"});
    for (const auto& name : d.names()) {
      const auto& lt = l.tensor(name).data();
      const auto& gt = g.tensor(name).data();
      for (std::size_t i = 0; i < lt.size(); ++i) CHECK(d.tensor(name)[i] == lt[i] - gt[i]);
    }
  }
  SUBCASE("shape mismatch names the entry") {
    ParameterSet a = single("w", {1, 2});
    ParameterSet b = single("w", {1, 2, 3});
    try {
      subtract_trainable(a, b);
      FAIL("expected a structural error");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("'w'") != std::string::npos);
    }
    ParameterSet c = single("w", {1, 2}, false);
    CHECK_THROWS_AS(subtract_trainable(a, c), StructuralError);
  }
}

TEST_CASE("add_delta examples") {
  std::mt19937_64 rng(3);
  const ParameterSet base = random_set(rng, 4, 0b1000);
  SUBCASE("zero delta is the identity bitwise") {
    CHECK(add_delta(base, subtract_trainable(base, base)) == base);
  }
  SUBCASE("round trip recovers the local model") {
    for (int trial = 0; trial < 20; ++trial) {
      const ParameterSet g = random_set(rng, 5, static_cast<unsigned>(trial) & 0b11111u);
      const ParameterSet l = random_like(rng, g);
      const ParameterSet back = add_delta(g, subtract_trainable(l, g));
      for (const auto& [name, e] : g) {
        const Tensor& want = e.trainable ? l.tensor(name) : g.tensor(name);
        for (std::size_t i = 0; i < want.size(); ++i) {
          CHECK(std::abs(back.tensor(name)[i] - want[i]) <= 1e-12);
        }
      }
    }
  }
  SUBCASE("hand example") {
    const ParameterSet out = add_delta(single("w", {1, 2}), single("w", {0.5, -0.5}));
    CHECK(out.tensor("w").data() == std::vector<double>{1.5, 1.5});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(add_delta(single("w", {1, 2}), single("v", {1, 2})), StructuralError);
    CHECK_THROWS_AS(add_delta(single("w", {1, 2}), single("w", {1})), StructuralError);
    CHECK_THROWS_AS(add_delta(single("w", {1, 2}, false), single("w", {1, 1})), StructuralError);
  }
}

TEST_CASE("scale examples") {
  const ParameterSet s = single("w", {1.5, -2});
  CHECK(scale(s, 1.0) == s);
  const ParameterSet zeroed = scale(s, 0.0);
  for (double v : zeroed.tensor("w").values()) CHECK(v == 0.0);
  CHECK(scale(s, 2.0).tensor("w").data() == std::vector<double>{3, -4});
  CHECK(scale(single("w", {1}, false), 2.0).trainable("w") == false);
  CHECK_THROWS_AS(scale(s, std::numeric_limits<double>::infinity()), ArgumentError);
  CHECK_THROWS_AS(scale(s, std::nan("")), ArgumentError);
}

TEST_CASE("weighted_sum examples") {
  const ParameterSet a = single("w", {0});
  const ParameterSet b = single("w", {4});
  {
    std::vector<ParameterSet> one{a};
    std::vector<double> w{1.0};
    CHECK(weighted_sum(one, w) == a);
  }
  {
    std::vector<ParameterSet> two{a, b};
    std::vector<double> w{0.25, 0.75};
    CHECK(weighted_sum(two, w).tensor("w")[0] == 3.0);
  }
  SUBCASE("uniform weights match a brute-force mean") {
    std::mt19937_64 rng(4);
    const ParameterSet like = random_set(rng, 3, 0b001);
    std::vector<ParameterSet> sets;
    for (int i = 0; i < 5; ++i) sets.push_back(random_like(rng, like));
    std::vector<double> w(5, 0.2);
    const ParameterSet got = weighted_sum(sets, w);
    for (const auto& [name, e] : like) {
      for (std::size_t i = 0; i < e.tensor.size(); ++i) {
        double mean = 0.0;
        for (const auto& s : sets) mean += s.tensor(name)[i];
        mean /= 5.0;
        CHECK(std::abs(got.tensor(name)[i] - mean) <= 1e-12);
      }
    }
  }
  SUBCASE("errors") {
    std::vector<ParameterSet> none;
    std::vector<double> no_w;
    CHECK_THROWS_AS(weighted_sum(none, no_w), ArgumentError);
    std::vector<ParameterSet> two{a, b};
    std::vector<double> w{1.0};
    CHECK_THROWS_AS(weighted_sum(two, w), ArgumentError);
  }
}

TEST_CASE("l2_norm examples") {
  CHECK(l2_norm(single("w", {0, 0})) == 0.0);
  CHECK(l2_norm(single("w", {3, 4})) == 5.0);
  ParameterSet mixed = single("w", {3, 4});
  mixed.set("frozen", Tensor({1}, {100.0}), false);
  CHECK(l2_norm(mixed) == 5.0);

  std::mt19937_64 rng(5);
  const ParameterSet s = random_set(rng, 6, 0b100100);
  // Two-pass oracle: per-entry partial sums, then the total.
  std::vector<double> partial;
  for (const auto& [_, e] : s) {
    if (!e.trainable) continue;
    double acc = 0.0;
    for (double v : e.tensor.values()) acc += v * v;
    partial.push_back(acc);
  }
  double total = 0.0;
  for (double p : partial) total += p;
  CHECK(testing::rel_close(l2_norm(s), std::sqrt(total)) <= 1e-10);
}

TEST_CASE("linearity of weighted_sum over subtract_trainable") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    const ParameterSet g = random_set(rng, 4, 0b0010);
    std::vector<ParameterSet> locals;
    std::vector<ParameterSet> deltas;
    std::vector<double> w;
    std::uniform_real_distribution<double> wd(0.1, 2.0);
    for (int i = 0; i < 4; ++i) {
      locals.push_back(random_like(rng, g));
      deltas.push_back(subtract_trainable(locals.back(), g));
      w.push_back(wd(rng));
    }
    const ParameterSet lhs = weighted_sum(deltas, w);
    const double wsum = w[0] + w[1] + w[2] + w[3];
    const ParameterSet rhs =
        subtract_trainable(weighted_sum(locals, w), scale(g, wsum));
    CHECK(max_relative_difference(lhs, rhs) <= 1e-10);
  }
}

TEST_CASE("operations are deterministic") {
  std::mt19937_64 r1(7);
  std::mt19937_64 r2(7);
  const ParameterSet a = random_set(r1, 5, 0b1);
  const ParameterSet b = random_set(r2, 5, 0b1);
  CHECK(a == b);
  std::mt19937_64 r3(8);
  const ParameterSet l = random_like(r3, a);
  CHECK(subtract_trainable(l, a) == subtract_trainable(l, b));
}
