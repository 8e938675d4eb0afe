#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gdfed/config.hpp"
#include "gdfed/ledger.hpp"
#include "gdfed/metrics.hpp"
#include "gdfed/optim.hpp"
#include "gdfed/toy_lm.hpp"

namespace gdfed {

struct Partition {
  std::vector<std::vector<TokenSeq>> shards;
  std::vector<std::size_t> counts;
};

// Seeded shuffle, then round-robin over K shards.
Partition partition_iid(const std::vector<TokenSeq>& sequences, std::size_t clients,
                        std::uint64_t seed);

struct Dataset {
  Vocab vocab;
  TokenSeq train_tokens;
  TokenSeq eval_tokens;
  std::vector<TokenSeq> train_sequences;  // disjoint chunks of `context` tokens
};

// Byte vocabulary over the whole text; the first `split` fraction trains,
// the rest evaluates.
Dataset make_dataset(const std::string& text, double split, std::size_t context);
Dataset load_dataset(const ExperimentConfig& cfg);

// Consecutive non-overlapping chunks; a trailing chunk under two tokens is dropped.
std::vector<TokenSeq> chunk_sequences(const TokenSeq& tokens, std::size_t context);

// The frozen base plus freshly attached adapters (or a plain trainable
// model when lora_rank == 0).
LmModel initial_model(const ExperimentConfig& cfg, std::size_t vocab_size);

// Optimizer steps per round: the sum over the K shards of
// local_epochs * ceil(n_i / batch_size). Central mode spends the same.
std::size_t round_step_budget(const ExperimentConfig& cfg, const Partition& partition);

struct ClientCurve {
  std::uint32_t client_id = 0;
  std::vector<double> train_loss;  // per round, on the full training split
};

struct ExperimentResult {
  LmModel final_model;
  std::vector<RoundRecord> records;
  std::vector<ClientCurve> client_curves;  // local mode only
  std::optional<double> bleu;
  TrafficLedger server_ledger;  // federated mode only
};

// Runs cfg.mode end to end. Records hold rounds 1..T, or a single
// evaluation-only round 0 when T == 0.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data);

// Corpus BLEU of greedy continuations over evaluation windows: the first
// half of each window is the prompt, the second half the reference.
double continuation_bleu(const LmModel& model, const TokenSeq& eval_tokens,
                         const ExperimentConfig& cfg);

// Per-mode CSV + JSON under cfg.output_dir, plus per-client curves for local.
void write_run_report(const ExperimentConfig& cfg, const ExperimentResult& result);

struct ComparisonResult {
  std::map<Mode, ExperimentResult> runs;
  std::string series_csv;  // round,mode,train_loss,perplexity,uplink_bytes,downlink_bytes
  std::string totals_csv;  // mode,rounds,final_train_loss,final_perplexity,bleu,uplink_bytes,downlink_bytes
  std::string summary_json;  // totals plus wall time
};

inline constexpr const char* kSeriesCsvHeader =
    "round,mode,train_loss,perplexity,uplink_bytes,downlink_bytes";
inline constexpr const char* kTotalsCsvHeader =
    "mode,rounds,final_train_loss,final_perplexity,bleu,uplink_bytes,downlink_bytes";

// Federated, central and local on identical data and seed. Only the JSON
// carries wall-clock time, so both CSVs are reproducible byte for byte.
ComparisonResult compare_modes(const ExperimentConfig& base);
void write_comparison(const ExperimentConfig& base, const ComparisonResult& result);

}  // namespace gdfed
