#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gdfed/error.hpp"
#include "gdfed/lora.hpp"
#include "gdfed/toy_lm.hpp"
#include "test_support.hpp"

using namespace gdfed;

namespace {

std::vector<TokenSeq> random_batch(std::mt19937_64& rng, std::size_t count, std::size_t len,
                                   std::size_t vocab) {
  std::uniform_int_distribution<int> tok(0, static_cast<int>(vocab) - 1);
  std::vector<TokenSeq> out(count, TokenSeq(len));
  for (auto& s : out)
    for (auto& t : s) t = tok(rng);
  return out;
}

LmModel random_model(std::size_t V, std::size_t d, std::size_t ctx, std::uint64_t seed,
                     double spread = 0.5) {
  LmModel m = init_model(LmConfig{V, d, ctx}, seed);
  std::mt19937_64 rng(seed + 100);
  for (const auto& name : m.params.names()) {
    auto& t = m.params.mutable_tensor(name);
    t = testing::random_tensor(rng, t.shape(), -spread, spread);
  }
  return m;
}

}  // namespace

TEST_CASE("vocab is byte level and round trips") {
  const Vocab v = Vocab::from_text("hello world");
  CHECK(v.size() == 8);
  const TokenSeq ids = v.encode("low");
  CHECK(v.decode(ids) == "low");
  for (int id = 0; id < static_cast<int>(v.size()); ++id) {
    CHECK(v.id(v.symbol(id)) == id);
  }
  CHECK_THROWS_AS(v.encode("xyz"), ArgumentError);
  CHECK_THROWS_AS(v.symbol(8), ArgumentError);
}

TEST_CASE("config bounds") {
  CHECK_THROWS_AS((LmConfig{1, 4, 4}.validate()), ArgumentError);
  CHECK_THROWS_AS((LmConfig{4, 1, 4}.validate()), ArgumentError);
  CHECK_THROWS_AS((LmConfig{4, 4, 1}.validate()), ArgumentError);
  CHECK_NOTHROW((LmConfig{2, 2, 2}.validate()));
}

TEST_CASE("zero model gives the uniform distribution") {
  const LmModel m = zero_model(LmConfig{7, 3, 8});
  const auto f = forward(m, {0, 3, 6, 2});
  REQUIRE(f.distributions.size() == 4);
  for (const auto& row : f.distributions)
    for (double p : row) CHECK(p == doctest::Approx(1.0 / 7).epsilon(1e-15));
}

TEST_CASE("rows are strictly positive distributions") {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LmModel m = random_model(11, 4, 16, seed, 3.0);
    const auto x = random_batch(rng, 1, 16, 11)[0];
    for (const auto& row : forward(m, x).distributions) {
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
      for (double p : row) CHECK(p > 0.0);
    }
  }
}

TEST_CASE("hand-set V=3 d=2 model matches the reference forward pass") {
  LmModel m = zero_model(LmConfig{3, 2, 4});
  m.params.mutable_tensor(param::kEmbed) = Tensor::matrix(3, 2, {0.5, -0.2, 0.1, 0.3, -0.4, 0.8});
  m.params.mutable_tensor(param::kRecurrent) = Tensor::matrix(2, 2, {0.9, -0.1, 0.2, 0.4});
  m.params.mutable_tensor(param::kRecurrentBias) = Tensor({2}, {0.05, -0.05});
  m.params.mutable_tensor(param::kOutputBias) = Tensor({3}, {0.1, 0.0, -0.1});
  const TokenSeq x{2, 0};

  // Hand expansion of the recurrence for this exact input.
  const double h00 = std::tanh(0.05 + -0.4);
  const double h01 = std::tanh(-0.05 + 0.8);
  const double h10 = std::tanh(0.05 + 0.5 + 0.9 * h00 - 0.1 * h01);
  const double h11 = std::tanh(-0.05 - 0.2 + 0.2 * h00 + 0.4 * h01);
  auto softmax = [](std::vector<double> z) {
    double s = 0.0;
    for (auto& v : z) s += (v = std::exp(v));
    for (auto& v : z) v /= s;
    return z;
  };
  const auto p0 = softmax({0.1 + 0.5 * h00 - 0.2 * h01, 0.1 * h00 + 0.3 * h01,
                           -0.1 - 0.4 * h00 + 0.8 * h01});
  const auto p1 = softmax({0.1 + 0.5 * h10 - 0.2 * h11, 0.1 * h10 + 0.3 * h11,
                           -0.1 - 0.4 * h10 + 0.8 * h11});
  const auto got = forward(m, x).distributions;
  const auto ref = testing::reference_forward(m, x);
  for (std::size_t o = 0; o < 3; ++o) {
    CHECK(std::abs(got[0][o] - p0[o]) <= 1e-12);
    CHECK(std::abs(got[1][o] - p1[o]) <= 1e-12);
    CHECK(std::abs(got[1][o] - ref[1][o]) <= 1e-12);
  }
}

TEST_CASE("adapted forward matches the reference over effective weights") {
  std::mt19937_64 rng(10);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LmModel m = random_model(6, 4, 12, seed);
    m = attach(m, LoraOptions{{"embed.W", "rnn.U"}, 2, 4.0, 0.0, false}, seed);
    for (const auto& name : m.params.names()) {
      if (name.find(".lora.") != std::string::npos) {
        auto& t = m.params.mutable_tensor(name);
        t = testing::random_tensor(rng, t.shape(), -0.3, 0.3);
      }
    }
    const auto x = random_batch(rng, 1, 12, 6)[0];
    const auto got = forward(m, x).distributions;
    const auto ref = testing::reference_forward(m, x);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t o = 0; o < 6; ++o) CHECK(std::abs(got[t][o] - ref[t][o]) <= 1e-12);
  }
}

TEST_CASE("forward and loss errors") {
  const LmModel m = zero_model(LmConfig{4, 2, 5});
  CHECK_THROWS_AS(forward(m, {0, 4}), ArgumentError);
  CHECK_THROWS_AS(forward(m, {0, -1}), ArgumentError);
  CHECK_THROWS_AS(forward(m, {}), ArgumentError);
  CHECK_THROWS_AS(forward(m, {0, 1, 2, 3, 0, 1}), ArgumentError);
  CHECK_THROWS_AS(loss_and_grad(m, {}), ArgumentError);
  CHECK_THROWS_AS(loss_and_grad(m, {{1}}), ArgumentError);
}

TEST_CASE("uniform model loss is ln V") {
  const LmModel m = zero_model(LmConfig{9, 3, 10});
  std::mt19937_64 rng(11);
  const auto r = loss_and_grad(m, random_batch(rng, 3, 10, 9));
  CHECK(std::abs(r.loss - std::log(9.0)) <= 1e-12);
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(12);
  SUBCASE("plain model V=5 d=3") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const LmModel m = random_model(5, 3, 6, seed);
      const auto g = testing::finite_difference_check(m, random_batch(rng, 3, 6, 5));
      CHECK(g.checked == m.params.element_count());
      CHECK(g.worst <= 1.0);
    }
  }
  SUBCASE("LoRA-adapted model: base gradients are exactly zero") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      LmModel m = attach(random_model(6, 4, 6, seed),
                         LoraOptions{{"embed.W", "rnn.U"}, 2, 4.0, 0.1, false}, seed);
      for (const auto& name : m.params.names()) {
        auto& t = m.params.mutable_tensor(name);
        if (name.find(".lora.B") != std::string::npos) t = testing::random_tensor(rng, t.shape(), -0.3, 0.3);
      }
      const auto g = testing::finite_difference_check(m, random_batch(rng, 2, 6, 6));
      CHECK(g.worst <= 1.0);
      CHECK(g.frozen_abs == 0.0);
      CHECK(g.checked == adapter_parameter_count(m));
    }
  }
}

TEST_CASE("loss is invariant to batch duplication and permutation") {
  std::mt19937_64 rng(13);
  const LmModel m = random_model(7, 3, 8, 4);
  auto batch = random_batch(rng, 5, 8, 7);
  const double base = loss_and_grad(m, batch).loss;
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  CHECK(std::abs(loss_and_grad(m, doubled).loss - base) <= 1e-12);
  std::reverse(batch.begin(), batch.end());
  CHECK(std::abs(loss_and_grad(m, batch).loss - base) <= 1e-12);
}

TEST_CASE("the output projection is the embedding matrix") {
  LmModel m = random_model(6, 3, 4, 5);
  const TokenSeq x{0, 1};
  const auto before = forward(m, x).distributions;
  // Token 4 never appears in the input, so a change to its row can only
  // reach the output through the projection.
  m.params.mutable_tensor(param::kEmbed).at(4, 0) += 0.5;
  const auto after = forward(m, x).distributions;
  CHECK(after[0][4] != before[0][4]);
  CHECK(m.params.names() == std::vector<std::string>{"embed.W", "out.b", "rnn.U", "rnn.b"});
}

TEST_CASE("adapter dropout only acts in training mode") {
  std::mt19937_64 rng(14);
  LmModel m = attach(random_model(6, 4, 8, 6), LoraOptions{{"embed.W", "rnn.U"}, 2, 4.0, 0.5, false}, 1);
  for (const auto& name : m.params.names()) {
    if (name.find(".lora.B") != std::string::npos) {
      auto& t = m.params.mutable_tensor(name);
      t = testing::random_tensor(rng, t.shape(), -0.5, 0.5);
    }
  }
  const auto batch = random_batch(rng, 3, 8, 6);
  Rng d1 = make_rng(1, stream::kDropout);
  Rng d2 = make_rng(1, stream::kDropout);
  const double eval = loss_and_grad(m, batch).loss;
  const double train1 = loss_and_grad(m, batch, &d1).loss;
  const double train2 = loss_and_grad(m, batch, &d2).loss;
  CHECK(std::abs(eval - mean_nll(m, batch)) <= 1e-12);
  CHECK(train1 == train2);
  CHECK(train1 != eval);
}

TEST_CASE("prediction windows predict each token once") {
  TokenSeq corpus(50);
  std::iota(corpus.begin(), corpus.end(), 0);
  const auto w = prediction_windows(corpus, 8);
  std::vector<int> predicted;
  for (const auto& s : w) {
    CHECK(s.size() <= 8);
    CHECK(s.size() >= 2);
    predicted.insert(predicted.end(), s.begin() + 1, s.end());
  }
  CHECK(predicted == TokenSeq(corpus.begin() + 1, corpus.end()));
}

TEST_CASE("perplexity examples") {
  std::mt19937_64 rng(15);
  const auto corpus = random_batch(rng, 1, 200, 13)[0];
  CHECK(testing::rel_close(perplexity_of(zero_model(LmConfig{13, 3, 16}), corpus, 16), 13.0) <= 1e-9);

  // Two symbols, uniform model: every true token has probability 0.5.
  CHECK(testing::rel_close(perplexity_of(zero_model(LmConfig{2, 2, 8}), {0, 1, 1, 0, 1, 0, 0}, 8),
                           2.0) <= 1e-9);

  const LmModel m = random_model(13, 4, 16, 7);
  const auto windows = prediction_windows(corpus, 16);
  CHECK(testing::rel_close(perplexity_of(m, corpus, 16),
                           std::exp(loss_and_grad(m, windows).loss)) <= 1e-9);

  // Independent per-token loop over the same windows.
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& w : windows) {
    const auto dist = testing::reference_forward(m, w);
    for (std::size_t t = 0; t + 1 < w.size(); ++t) {
      nll -= std::log(dist[t][static_cast<std::size_t>(w[t + 1])]);
      ++count;
    }
  }
  CHECK(count == corpus.size() - 1);
  CHECK(testing::rel_close(perplexity_of(m, corpus, 16), std::exp(nll / count)) <= 1e-9);
  CHECK_THROWS_AS(perplexity_of(m, {1}, 16), ArgumentError);
}

TEST_CASE("greedy continuation follows the argmax") {
  const LmModel m = random_model(8, 4, 16, 8, 1.0);
  const TokenSeq prefix{1, 2, 3};
  const TokenSeq cont = greedy_continue(m, prefix, 5);
  REQUIRE(cont.size() == 5);
  TokenSeq seq = prefix;
  for (int tok : cont) {
    const auto dist = testing::reference_forward(m, seq).back();
    CHECK(tok == static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin()));
    seq.push_back(tok);
  }
  CHECK_THROWS_AS(greedy_continue(m, {}, 2), ArgumentError);
  CHECK_THROWS_AS(greedy_continue(m, prefix, 14), ArgumentError);
}

TEST_CASE("init is seeded and in range") {
  const LmModel a = init_model(LmConfig{10, 4, 8}, 3);
  const LmModel b = init_model(LmConfig{10, 4, 8}, 3);
  const LmModel c = init_model(LmConfig{10, 4, 8}, 4);
  CHECK(a.params == b.params);
  CHECK(!(a.params == c.params));
  for (const auto& [name, e] : a.params) {
    CHECK(e.trainable);
    for (double v : e.tensor.values()) {
      CHECK(std::abs(v) <= 0.08);
      if (name == param::kOutputBias) CHECK(v == 0.0);
    }
  }
}
