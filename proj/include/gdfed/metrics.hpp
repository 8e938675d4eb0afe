#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gdfed/toy_lm.hpp"

namespace gdfed {

enum class Mode { Federated, Central, Local };

const char* mode_name(Mode mode);
Mode parse_mode(const std::string& text);  // ArgumentError on unknown names

// ---------------------------------------------------------------- BLEU

enum class BleuSmoothing { None, AddOne };

struct BleuStats {
  std::vector<std::uint64_t> matches;  // clipped n-gram matches, n = 1..max_n
  std::vector<std::uint64_t> totals;   // hypothesis n-grams, n = 1..max_n
  std::uint64_t hypothesis_length = 0;
  std::uint64_t reference_length = 0;  // closest reference length (ties: shorter)

  void add(const BleuStats& other);
};

BleuStats bleu_stats(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references,
                     std::size_t max_n = 4);

struct BleuScore {
  double score = 0.0;
  std::vector<double> precisions;
  double brevity_penalty = 0.0;
};

BleuScore bleu_from_stats(const BleuStats& stats, BleuSmoothing smoothing = BleuSmoothing::None);

// Geometric mean of clipped n-gram precisions (uniform weights) times
// min(1, exp(1 - r/c)). Zero for an empty hypothesis or, without
// smoothing, when any precision is zero.
double bleu(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references,
            std::size_t max_n = 4, BleuSmoothing smoothing = BleuSmoothing::None);

// Pools the n-gram counts and lengths of every segment before scoring.
double corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<std::vector<TokenSeq>>& references, std::size_t max_n = 4,
                   BleuSmoothing smoothing = BleuSmoothing::None);

// ---------------------------------------------------------------- perplexity

double corpus_perplexity(const LmModel& model, const TokenSeq& eval_corpus, std::size_t context);

// ---------------------------------------------------------------- records

struct RoundRecord {
  std::uint32_t round = 0;
  Mode mode = Mode::Federated;
  double train_loss = 0.0;
  std::optional<double> eval_perplexity;
  std::int64_t wall_ms = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

inline constexpr const char* kRecordCsvHeader =
    "round,mode,train_loss,perplexity,wall_ms,uplink_bytes,downlink_bytes";

// Shortest text that parses back to the same double.
std::string format_real(double value);

std::string records_to_csv(const std::vector<RoundRecord>& records);
std::vector<RoundRecord> records_from_csv(const std::string& text);

struct ModeSummary {
  std::uint32_t rounds = 0;
  double final_train_loss = 0.0;
  std::optional<double> final_perplexity;
  std::optional<double> bleu;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::int64_t wall_ms = 0;
};

// Per-mode totals and final values; `bleu` fills ModeSummary::bleu.
std::map<Mode, ModeSummary> summarize(const std::vector<RoundRecord>& records,
                                      const std::map<Mode, double>& bleu = {});
std::string summary_to_json(const std::map<Mode, ModeSummary>& summary);

// Writes the CSV and the JSON summary. ArgumentError unless records are
// non-empty and each mode's rounds are contiguous; IoError on write failure.
void emit_report(const std::vector<RoundRecord>& records, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path, const std::map<Mode, double>& bleu = {});

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace gdfed
