#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gdfed/aggregate.hpp"
#include "gdfed/metrics.hpp"
#include "gdfed/protocol.hpp"
#include "gdfed/wire.hpp"

namespace gdfed {

enum class TransportKind { Memory, Tcp };

// Every knob of one experiment. Defaults follow the reference
// hyperparameters (AdamW, clip 0.3, weight decay 0.001, warmup 0.03,
// 5 clients, 15 rounds); the LoRA rank and alpha are scaled down to fit
// the toy model.
struct ExperimentConfig {
  Mode mode = Mode::Federated;
  std::uint32_t rounds = 15;
  std::size_t clients = 5;
  std::uint64_t seed = 0;
  std::string corpus_path;  // empty until set; resolved against the config file
  double split = 0.9;       // training fraction of the corpus
  std::size_t context = 32;
  std::size_t embed_dim = 16;

  double lr = 5e-5;
  std::size_t batch_size = 4;
  std::size_t local_epochs = 1;
  double weight_decay = 0.001;
  double max_grad_norm = 0.3;
  double warmup_ratio = 0.03;

  std::size_t lora_rank = 4;  // 0 trains the full model without adapters
  double lora_alpha = 8.0;
  double lora_dropout = 0.1;
  std::vector<std::string> lora_targets{"embed.W", "rnn.U"};
  bool lora_literal_scaling = false;

  TransportKind transport = TransportKind::Memory;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0: ephemeral
  std::uint32_t timeout_ms = 120000;
  Aggregation aggregation = Aggregation::GradualDiff;
  bool quantize_payload = false;
  DeltaForm delta_form = DeltaForm::Factors;
  Weighting delta_weighting = Weighting::Uniform;
  wire::Precision wire_precision = wire::Precision::F32;

  std::string output_dir = "out";
  BleuSmoothing bleu_smoothing = BleuSmoothing::None;
  std::size_t bleu_samples = 64;

  // ConfigError naming the first offending key.
  void validate() const;
  ProtocolConfig protocol() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Flat "key = value" lines; '#' starts a comment. Unknown or repeated keys
// and invalid values raise ConfigError naming the key. Relative
// corpus_path and output_dir values resolve against base_dir; the corpus
// must exist.
ExperimentConfig parse_config(const std::string& text,
                              const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key, one per line, in a form parse_config reads back unchanged.
std::string save_config(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace gdfed
