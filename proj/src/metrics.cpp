#include "gdfed/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gdfed/error.hpp"

namespace gdfed {

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::Federated: return "federated";
    case Mode::Central: return "central";
    case Mode::Local: return "local";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  if (text == "federated") return Mode::Federated;
  if (text == "central") return Mode::Central;
  if (text == "local") return Mode::Local;
  throw ArgumentError("unknown mode '" + text + "'");
}

// ---------------------------------------------------------------- BLEU

namespace {

using NgramCounts = std::map<std::vector<int>, std::uint64_t>;

NgramCounts count_ngrams(const TokenSeq& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                              seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

void BleuStats::add(const BleuStats& other) {
  if (matches.size() != other.matches.size()) throw ArgumentError("BLEU order mismatch");
  for (std::size_t i = 0; i < matches.size(); ++i) {
    matches[i] += other.matches[i];
    totals[i] += other.totals[i];
  }
  hypothesis_length += other.hypothesis_length;
  reference_length += other.reference_length;
}

BleuStats bleu_stats(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references,
                     std::size_t max_n) {
  if (max_n == 0) throw ArgumentError("BLEU max_n must be >= 1");
  if (references.empty()) throw ArgumentError("BLEU needs at least one reference");
  BleuStats s;
  s.matches.assign(max_n, 0);
  s.totals.assign(max_n, 0);
  s.hypothesis_length = hypothesis.size();

  std::size_t best = references.front().size();
  for (const auto& ref : references) {
    const auto dist = [&](std::size_t len) {
      return len > hypothesis.size() ? len - hypothesis.size() : hypothesis.size() - len;
    };
    if (dist(ref.size()) < dist(best) || (dist(ref.size()) == dist(best) && ref.size() < best)) {
      best = ref.size();
    }
  }
  s.reference_length = best;

  for (std::size_t n = 1; n <= max_n; ++n) {
    const NgramCounts hyp = count_ngrams(hypothesis, n);
    NgramCounts max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, c] : count_ngrams(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, c);
      }
    }
    for (const auto& [gram, c] : hyp) {
      s.totals[n - 1] += c;
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) s.matches[n - 1] += std::min(c, it->second);
    }
  }
  return s;
}

BleuScore bleu_from_stats(const BleuStats& stats, BleuSmoothing smoothing) {
  BleuScore out;
  const std::size_t max_n = stats.matches.size();
  if (stats.hypothesis_length == 0) {
    out.precisions.assign(max_n, 0.0);
    return out;
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t i = 0; i < max_n; ++i) {
    double num = static_cast<double>(stats.matches[i]);
    double den = static_cast<double>(stats.totals[i]);
    if (smoothing == BleuSmoothing::AddOne && i >= 1) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den > 0.0 ? num / den : 0.0;
    out.precisions.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  const double c = static_cast<double>(stats.hypothesis_length);
  const double r = static_cast<double>(stats.reference_length);
  out.brevity_penalty = std::min(1.0, std::exp(1.0 - r / c));
  out.score = zero ? 0.0 : out.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return out;
}

double bleu(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references,
            std::size_t max_n, BleuSmoothing smoothing) {
  return bleu_from_stats(bleu_stats(hypothesis, references, max_n), smoothing).score;
}

double corpus_bleu(const std::vector<TokenSeq>& hypotheses,
                   const std::vector<std::vector<TokenSeq>>& references, std::size_t max_n,
                   BleuSmoothing smoothing) {
  if (hypotheses.size() != references.size()) {
    throw ArgumentError("corpus_bleu: hypothesis and reference counts differ");
  }
  if (hypotheses.empty()) throw ArgumentError("corpus_bleu: no segments");
  BleuStats total = bleu_stats(hypotheses[0], references[0], max_n);
  for (std::size_t i = 1; i < hypotheses.size(); ++i) {
    total.add(bleu_stats(hypotheses[i], references[i], max_n));
  }
  return bleu_from_stats(total, smoothing).score;
}

double corpus_perplexity(const LmModel& model, const TokenSeq& eval_corpus, std::size_t context) {
  return perplexity_of(model, eval_corpus, context);
}

// ---------------------------------------------------------------- records

std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string records_to_csv(const std::vector<RoundRecord>& records) {
  std::ostringstream os;
  os << kRecordCsvHeader << '\n';
  for (const auto& r : records) {
    os << r.round << ',' << mode_name(r.mode) << ',' << format_real(r.train_loss) << ','
       << (r.eval_perplexity ? format_real(*r.eval_perplexity) : "") << ',' << r.wall_ms << ','
       << r.uplink_bytes << ',' << r.downlink_bytes << '\n';
  }
  return os.str();
}

std::vector<RoundRecord> records_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kRecordCsvHeader) {
    throw FormatError("CSV header does not match the record layout");
  }
  std::vector<RoundRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 7) {
      throw FormatError("CSV line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " cells");
    }
    try {
      RoundRecord r;
      r.round = static_cast<std::uint32_t>(std::stoul(cells[0]));
      r.mode = parse_mode(cells[1]);
      r.train_loss = std::stod(cells[2]);
      if (!cells[3].empty()) r.eval_perplexity = std::stod(cells[3]);
      r.wall_ms = std::stoll(cells[4]);
      r.uplink_bytes = std::stoull(cells[5]);
      r.downlink_bytes = std::stoull(cells[6]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("CSV line " + std::to_string(line_no) + " has a malformed value");
    }
  }
  return out;
}

std::map<Mode, ModeSummary> summarize(const std::vector<RoundRecord>& records,
                                      const std::map<Mode, double>& bleu) {
  std::map<Mode, ModeSummary> out;
  for (const auto& r : records) {
    ModeSummary& s = out[r.mode];
    s.rounds = std::max(s.rounds, r.round);
    s.final_train_loss = r.train_loss;
    s.final_perplexity = r.eval_perplexity;
    s.uplink_bytes += r.uplink_bytes;
    s.downlink_bytes += r.downlink_bytes;
    s.wall_ms += r.wall_ms;
  }
  for (const auto& [mode, score] : bleu) {
    if (auto it = out.find(mode); it != out.end()) it->second.bleu = score;
  }
  return out;
}

std::string summary_to_json(const std::map<Mode, ModeSummary>& summary) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [mode, s] : summary) {
    nlohmann::ordered_json m;
    m["rounds"] = s.rounds;
    m["final_train_loss"] = s.final_train_loss;
    m["final_perplexity"] = s.final_perplexity ? nlohmann::ordered_json(*s.final_perplexity)
                                               : nlohmann::ordered_json(nullptr);
    m["bleu"] = s.bleu ? nlohmann::ordered_json(*s.bleu) : nlohmann::ordered_json(nullptr);
    m["uplink_bytes"] = s.uplink_bytes;
    m["downlink_bytes"] = s.downlink_bytes;
    m["total_bytes"] = s.uplink_bytes + s.downlink_bytes;
    m["wall_ms"] = s.wall_ms;
    j[mode_name(mode)] = std::move(m);
  }
  return j.dump(2) + "\n";
}

void emit_report(const std::vector<RoundRecord>& records, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path, const std::map<Mode, double>& bleu) {
  if (records.empty()) throw ArgumentError("no records to report");
  std::map<Mode, std::uint32_t> last;
  for (const auto& r : records) {
    auto it = last.find(r.mode);
    if (it != last.end() && r.round != it->second + 1) {
      throw ArgumentError(std::string("rounds for mode ") + mode_name(r.mode) +
                          " are not contiguous at round " + std::to_string(r.round));
    }
    last[r.mode] = r.round;
  }
  write_text_file(csv_path, records_to_csv(records));
  write_text_file(json_path, summary_to_json(summarize(records, bleu)));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace gdfed
