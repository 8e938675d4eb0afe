#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdfed/params.hpp"
#include "gdfed/toy_lm.hpp"

namespace gdfed {

inline std::string lora_a_name(const std::string& target) { return target + ".lora.A"; }
inline std::string lora_b_name(const std::string& target) { return target + ".lora.B"; }

// Trainable pair attached to a frozen m x n base matrix: W' = W + s * A * B.
struct LoraAdapter {
  std::string target;
  Tensor a;  // m x r
  Tensor b;  // r x n
  double alpha = 8.0;
  double dropout = 0.0;
  bool literal_scaling = false;

  std::size_t rank() const { return a.cols(); }
  double scaling() const {
    return literal_scaling ? 1.0 : alpha / static_cast<double>(rank());
  }
};

struct LoraOptions {
  std::vector<std::string> targets{"embed.W", "rnn.U"};
  std::size_t rank = 4;
  double alpha = 8.0;
  double dropout = 0.1;
  bool literal_scaling = false;
};

// Freezes every existing entry and adds "<target>.lora.A" (gaussian, std
// 0.02) and "<target>.lora.B" (zeros) per target. Targets must be 2-D and
// rank <= min(m, n).
LmModel attach(const LmModel& model, const LoraOptions& options, std::uint64_t seed);

std::vector<LoraAdapter> adapters_of(const LmModel& model);

// s * A * B, shape m x n.
Tensor adapter_product(const Tensor& a, const Tensor& b, double scaling);

// base + s * A * B.
Tensor effective_weight(const Tensor& base, const LoraAdapter& adapter);

// Folds every adapter into its base and drops the adapter entries. The
// result is a plain, fully trainable model. ArgumentError if no adapters.
LmModel merge(const LmModel& model);

// Sum of r * (m + n) over the adapters.
std::size_t adapter_parameter_count(const LmModel& model);

}  // namespace gdfed
