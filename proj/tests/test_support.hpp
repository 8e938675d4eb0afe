#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gdfed/params.hpp"
#include "gdfed/toy_lm.hpp"

namespace testing {

using gdfed::ParameterSet;
using gdfed::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(n);
  for (auto& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data));
}

inline std::vector<std::size_t> random_shape(std::mt19937_64& rng, std::size_t max_dim = 32) {
  std::uniform_int_distribution<std::size_t> dim(1, max_dim);
  std::uniform_int_distribution<int> rank(1, 2);
  if (rank(rng) == 1) return {dim(rng)};
  return {dim(rng), dim(rng)};
}

// `entries` randomly shaped entries named p0, p1, ...; entry i is frozen
// when bit i of frozen_mask is set.
inline ParameterSet random_set(std::mt19937_64& rng, std::size_t entries, unsigned frozen_mask = 0,
                               std::size_t max_dim = 32) {
  ParameterSet s;
  for (std::size_t i = 0; i < entries; ++i) {
    s.set("p" + std::to_string(i), random_tensor(rng, random_shape(rng, max_dim)),
          ((frozen_mask >> i) & 1u) == 0);
  }
  return s;
}

// Same names, shapes and flags as `like`, fresh values.
inline ParameterSet random_like(std::mt19937_64& rng, const ParameterSet& like) {
  ParameterSet s;
  for (const auto& [name, e] : like) s.set(name, random_tensor(rng, e.tensor.shape()), e.trainable);
  return s;
}

inline double rel_close(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

inline std::filesystem::path source_dir() {
  if (const char* env = std::getenv("GDFED_SOURCE_DIR")) return env;
  return std::filesystem::path(__FILE__).parent_path().parent_path();
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gdfed_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing

namespace testing {

// Straightforward forward pass over effective weights (adapters folded in),
// written independently of the library's fused implementation.
inline std::vector<std::vector<double>> reference_forward(const gdfed::LmModel& m,
                                                          const gdfed::TokenSeq& x) {
  const std::size_t V = m.config.vocab_size;
  const std::size_t d = m.config.embed_dim;
  auto effective = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    std::vector<std::vector<double>> w(rows, std::vector<double>(cols));
    const Tensor& base = m.params.tensor(name);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) w[i][j] = base.at(i, j);
    if (m.params.contains(name + ".lora.A")) {
      const Tensor& a = m.params.tensor(name + ".lora.A");
      const Tensor& b = m.params.tensor(name + ".lora.B");
      const double s = m.adapters.scaling(a.cols());
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          for (std::size_t k = 0; k < a.cols(); ++k) w[i][j] += s * a.at(i, k) * b.at(k, j);
    }
    return w;
  };
  const auto W = effective("embed.W", V, d);
  const auto U = effective("rnn.U", d, d);
  const Tensor& b = m.params.tensor("rnn.b");
  const Tensor& c = m.params.tensor("out.b");
  std::vector<double> h(d, 0.0);
  std::vector<std::vector<double>> out;
  for (int tok : x) {
    std::vector<double> nh(d);
    for (std::size_t i = 0; i < d; ++i) {
      double s = b[i] + W[static_cast<std::size_t>(tok)][i];
      for (std::size_t j = 0; j < d; ++j) s += U[i][j] * h[j];
      nh[i] = std::tanh(s);
    }
    h = nh;
    std::vector<double> z(V);
    double mx = -1e300;
    for (std::size_t o = 0; o < V; ++o) {
      z[o] = c[o];
      for (std::size_t j = 0; j < d; ++j) z[o] += W[o][j] * h[j];
      mx = std::max(mx, z[o]);
    }
    double sum = 0.0;
    for (auto& v : z) sum += (v = std::exp(v - mx));
    for (auto& v : z) v /= sum;
    out.push_back(z);
  }
  return out;
}

struct GradCheck {
  double worst = 0.0;        // max |a - n| / (1e-4 * max(|a|, |n|) + 1e-7); pass when <= 1
  double frozen_abs = 0.0;   // max |analytic| over frozen entries
  std::size_t checked = 0;
};

// Central differences (eps 1e-5) on every element of every entry.
inline GradCheck finite_difference_check(const gdfed::LmModel& m,
                                         const std::vector<gdfed::TokenSeq>& batch,
                                         double eps = 1e-5) {
  GradCheck out;
  const auto analytic = gdfed::loss_and_grad(m, batch);
  for (const auto& [name, e] : m.params) {
    const Tensor& g = analytic.grads.tensor(name);
    if (!e.trainable) {
      for (double v : g.values()) out.frozen_abs = std::max(out.frozen_abs, std::abs(v));
      continue;
    }
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      gdfed::LmModel plus = m;
      gdfed::LmModel minus = m;
      plus.params.mutable_tensor(name)[i] += eps;
      minus.params.mutable_tensor(name)[i] -= eps;
      const double num = (gdfed::mean_nll(plus, batch) - gdfed::mean_nll(minus, batch)) / (2 * eps);
      const double a = g[i];
      const double tol = 1e-4 * std::max(std::abs(a), std::abs(num)) + 1e-7;
      out.worst = std::max(out.worst, std::abs(a - num) / tol);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace testing
