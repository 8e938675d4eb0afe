#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gdfed/params.hpp"
#include "gdfed/rng.hpp"

namespace gdfed {

using TokenSeq = std::vector<int>;

// Byte-level vocabulary: the distinct bytes of a text, in ascending order.
class Vocab {
 public:
  static Vocab from_text(std::string_view text);

  std::size_t size() const { return symbols_.size(); }
  unsigned char symbol(int id) const;
  int id(unsigned char symbol) const;  // ArgumentError if absent

  TokenSeq encode(std::string_view text) const;
  std::string decode(const TokenSeq& ids) const;

 private:
  std::vector<unsigned char> symbols_;
  std::array<int, 256> index_{};
};

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t context_length = 32;

  void validate() const;
  friend bool operator==(const LmConfig&, const LmConfig&) = default;
};

// Scaling and dropout shared by every adapter attached to a model.
struct AdapterSettings {
  double alpha = 8.0;
  double dropout = 0.0;
  bool literal_scaling = false;

  double scaling(std::size_t rank) const {
    return literal_scaling ? 1.0 : alpha / static_cast<double>(rank);
  }
  friend bool operator==(const AdapterSettings&, const AdapterSettings&) = default;
};

// Parameter names. The output projection reuses kEmbed (tied weights).
namespace param {
inline constexpr const char* kEmbed = "embed.W";
inline constexpr const char* kRecurrent = "rnn.U";
inline constexpr const char* kRecurrentBias = "rnn.b";
inline constexpr const char* kOutputBias = "out.b";
}  // namespace param

// h_t = tanh(U h_{t-1} + W[x_t] + b), P(x_{t+1} | x_<=t) = softmax(W h_t + c).
// Adapter entries "<target>.lora.A" / "<target>.lora.B" in params, when
// present, add scaling * A * B to embed.W or rnn.U.
struct LmModel {
  LmConfig config;
  ParameterSet params;
  AdapterSettings adapters;

  bool has_adapters() const;
};

// Weights uniform(-0.08, 0.08); output bias zero. Every entry trainable.
LmModel init_model(const LmConfig& config, std::uint64_t seed);
// All-zero weights: every output row is the uniform distribution.
LmModel zero_model(const LmConfig& config);

struct ForwardResult {
  // distributions[t] = P(. | x_0..x_t), one row of vocab_size per position.
  std::vector<std::vector<double>> distributions;
  std::vector<std::vector<double>> hidden;
};

// Evaluation-mode forward (no dropout).
ForwardResult forward(const LmModel& model, const TokenSeq& tokens);

struct LossAndGrad {
  double loss = 0.0;
  ParameterSet grads;  // shape-compatible with model.params; zero on frozen entries
};

// Mean negative log-likelihood over every predicted position of the batch.
// With a dropout stream, adapter dropout is sampled from it (training mode).
LossAndGrad loss_and_grad(const LmModel& model, const std::vector<TokenSeq>& batch,
                          Rng* dropout_rng = nullptr);

// Loss without gradients, evaluation mode.
double mean_nll(const LmModel& model, const std::vector<TokenSeq>& batch);

// Windows of at most `context` tokens that overlap by one token, so every
// token after the first is predicted exactly once. Trailing windows shorter
// than two tokens are dropped.
std::vector<TokenSeq> prediction_windows(const TokenSeq& corpus, std::size_t context);

// exp(mean NLL) over prediction_windows(corpus, context).
double perplexity_of(const LmModel& model, const TokenSeq& corpus, std::size_t context);

// Argmax continuation of `prefix`, fed through the recurrence token by token.
TokenSeq greedy_continue(const LmModel& model, const TokenSeq& prefix, std::size_t count);

}  // namespace gdfed
