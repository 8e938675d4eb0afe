#include "gdfed/harness.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gdfed/error.hpp"
#include "gdfed/lora.hpp"
#include "gdfed/protocol.hpp"
#include "gdfed/rng.hpp"
#include "gdfed/transport.hpp"

namespace gdfed {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
}

TrainerConfig trainer_config(const ExperimentConfig& cfg, std::size_t steps_per_round) {
  TrainerConfig t;
  t.optimizer.lr = cfg.lr;
  t.optimizer.weight_decay = cfg.weight_decay;
  t.optimizer.max_grad_norm = cfg.max_grad_norm;
  t.optimizer.warmup_ratio = cfg.warmup_ratio;
  t.optimizer.total_steps =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(steps_per_round) * cfg.rounds);
  t.batch_size = cfg.batch_size;
  t.local_epochs = cfg.local_epochs;
  return t;
}

std::size_t shard_steps(const ExperimentConfig& cfg, std::size_t n) {
  return cfg.local_epochs * ((n + cfg.batch_size - 1) / cfg.batch_size);
}

struct Evaluation {
  double train_loss = 0.0;
  double perplexity = 0.0;
};

Evaluation evaluate(const LmModel& model, const Dataset& data, const ExperimentConfig& cfg) {
  Evaluation e;
  e.train_loss = mean_nll(model, data.train_sequences);
  e.perplexity = perplexity_of(model, data.eval_tokens, cfg.context);
  return e;
}

ExperimentResult run_federated(const ExperimentConfig& cfg, const Dataset& data,
                               const Partition& part, LmModel initial) {
  const ProtocolConfig pcfg = cfg.protocol();
  const Millis timeout(cfg.timeout_ms);
  ExperimentResult result;

  std::vector<RoundRecord> records;
  auto on_round = [&](std::uint32_t t, const LmModel& global, const RoundTraffic& traffic) {
    const Evaluation e = evaluate(global, data, cfg);
    RoundRecord r;
    r.round = t;
    r.mode = Mode::Federated;
    r.train_loss = e.train_loss;
    r.eval_perplexity = e.perplexity;
    r.wall_ms = static_cast<std::int64_t>(traffic.wall_ms + 0.5);
    r.uplink_bytes = traffic.uplink_bytes;
    r.downlink_bytes = traffic.downlink_bytes;
    records.push_back(r);
  };

  std::unique_ptr<ServerTransport> server;
  std::shared_ptr<MemoryHub> hub;
  std::uint16_t port = 0;
  if (cfg.transport == TransportKind::Memory) {
    hub = MemoryHub::create(cfg.clients, timeout);
    server = hub->server();
  } else {
    auto tcp = std::make_unique<TcpServerTransport>(cfg.host, cfg.port, timeout);
    port = tcp->port();
    server = std::move(tcp);
  }

  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    workers.emplace_back([&, i] {
      try {
        std::unique_ptr<ClientTransport> transport =
            hub ? hub->client(i)
                : std::unique_ptr<ClientTransport>(
                      std::make_unique<TcpClientTransport>(cfg.host, port, timeout));
        Trainer trainer(initial, part.shards[i],
                        trainer_config(cfg, shard_steps(cfg, part.counts[i])), cfg.seed, i);
        run_client(pcfg, *transport, trainer, static_cast<std::uint32_t>(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }

  std::exception_ptr server_error;
  try {
    ServerResult sr = run_server(pcfg, *server, initial, on_round);
    result.final_model = std::move(sr.global);
    result.server_ledger = std::move(sr.ledger);
  } catch (...) {
    server_error = std::current_exception();
    server.reset();  // disconnects clients so they stop waiting
  }
  for (auto& w : workers) w.join();
  if (server_error) std::rethrow_exception(server_error);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.records = std::move(records);
  return result;
}

ExperimentResult run_central(const ExperimentConfig& cfg, const Dataset& data,
                             const Partition& part, LmModel initial) {
  const std::size_t budget = round_step_budget(cfg, part);
  const Partition whole = partition_iid(data.train_sequences, 1, cfg.seed);
  Trainer trainer(std::move(initial), whole.shards[0], trainer_config(cfg, budget), cfg.seed, 0);
  ExperimentResult result;
  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    const auto start = Clock::now();
    trainer.train(budget);
    const auto stop = Clock::now();
    const Evaluation e = evaluate(trainer.model(), data, cfg);
    result.records.push_back(
        RoundRecord{t, Mode::Central, e.train_loss, e.perplexity, ms_between(start, stop), 0, 0});
  }
  result.final_model = trainer.model();
  return result;
}

ExperimentResult run_local(const ExperimentConfig& cfg, const Dataset& data,
                           const Partition& part, const LmModel& initial) {
  std::vector<Trainer> trainers;
  ExperimentResult result;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    const std::size_t steps = shard_steps(cfg, part.counts[i]);
    trainers.emplace_back(initial, part.shards[i], trainer_config(cfg, steps), cfg.seed, i);
    result.client_curves.push_back(ClientCurve{static_cast<std::uint32_t>(i), {}});
  }
  const double k = static_cast<double>(cfg.clients);
  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    std::int64_t train_ms = 0;
    double loss = 0.0;
    double ppl = 0.0;
    for (std::size_t i = 0; i < trainers.size(); ++i) {
      const auto start = Clock::now();
      trainers[i].train(trainers[i].steps_per_round());
      train_ms += ms_between(start, Clock::now());
      const Evaluation e = evaluate(trainers[i].model(), data, cfg);
      result.client_curves[i].train_loss.push_back(e.train_loss);
      loss += e.train_loss;
      ppl += e.perplexity;
    }
    // A client's round time: the clients would run side by side.
    result.records.push_back(RoundRecord{t, Mode::Local, loss / k, ppl / k,
                                         train_ms / static_cast<std::int64_t>(cfg.clients), 0, 0});
  }
  result.final_model = trainers.front().model();
  double bleu = 0.0;
  for (const auto& tr : trainers) bleu += continuation_bleu(tr.model(), data.eval_tokens, cfg);
  result.bleu = bleu / k;
  return result;
}

}  // namespace

Partition partition_iid(const std::vector<TokenSeq>& sequences, std::size_t clients,
                        std::uint64_t seed) {
  if (clients == 0) throw ArgumentError("partition needs at least one client");
  if (sequences.size() < clients) {
    throw ArgumentError("cannot split " + std::to_string(sequences.size()) + " sequences over " +
                        std::to_string(clients) + " clients");
  }
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, stream::kPartition);
  // Fisher-Yates with an explicit draw keeps shards identical across standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  Partition p;
  p.shards.resize(clients);
  for (std::size_t j = 0; j < order.size(); ++j) p.shards[j % clients].push_back(sequences[order[j]]);
  for (const auto& s : p.shards) p.counts.push_back(s.size());
  return p;
}

std::vector<TokenSeq> chunk_sequences(const TokenSeq& tokens, std::size_t context) {
  if (context < 2) throw ArgumentError("context must be >= 2");
  std::vector<TokenSeq> out;
  for (std::size_t i = 0; i + 2 <= tokens.size(); i += context) {
    const std::size_t end = std::min(tokens.size(), i + context);
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Dataset make_dataset(const std::string& text, double split, std::size_t context) {
  if (!(split > 0.0 && split < 1.0)) throw ArgumentError("split must lie in (0, 1)");
  Dataset d;
  d.vocab = Vocab::from_text(text);
  const TokenSeq all = d.vocab.encode(text);
  const auto cut = static_cast<std::size_t>(static_cast<double>(all.size()) * split);
  d.train_tokens.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
  d.eval_tokens.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
  if (d.eval_tokens.size() < 2) throw ArgumentError("evaluation split has fewer than two tokens");
  d.train_sequences = chunk_sequences(d.train_tokens, context);
  if (d.train_sequences.empty()) throw ArgumentError("training split is too short");
  return d;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.corpus_path.empty()) throw ConfigError("corpus_path is not set");
  return make_dataset(read_text_file(cfg.corpus_path), cfg.split, cfg.context);
}

LmModel initial_model(const ExperimentConfig& cfg, std::size_t vocab_size) {
  LmConfig lm{vocab_size, cfg.embed_dim, cfg.context};
  LmModel base = init_model(lm, cfg.seed);
  if (cfg.lora_rank == 0) return base;
  LoraOptions opt;
  opt.targets = cfg.lora_targets;
  opt.rank = cfg.lora_rank;
  opt.alpha = cfg.lora_alpha;
  opt.dropout = cfg.lora_dropout;
  opt.literal_scaling = cfg.lora_literal_scaling;
  return attach(base, opt, cfg.seed);
}

std::size_t round_step_budget(const ExperimentConfig& cfg, const Partition& partition) {
  std::size_t total = 0;
  for (std::size_t n : partition.counts) total += shard_steps(cfg, n);
  return total;
}

double continuation_bleu(const LmModel& model, const TokenSeq& eval_tokens,
                         const ExperimentConfig& cfg) {
  const std::size_t prompt = cfg.context / 2;
  const std::size_t span = cfg.context - prompt;
  std::vector<TokenSeq> hyps;
  std::vector<std::vector<TokenSeq>> refs;
  for (std::size_t i = 0; i + cfg.context <= eval_tokens.size() && hyps.size() < cfg.bleu_samples;
       i += cfg.context) {
    const auto at = eval_tokens.begin() + static_cast<std::ptrdiff_t>(i);
    TokenSeq prefix(at, at + static_cast<std::ptrdiff_t>(prompt));
    TokenSeq ref(at + static_cast<std::ptrdiff_t>(prompt),
                 at + static_cast<std::ptrdiff_t>(cfg.context));
    hyps.push_back(greedy_continue(model, prefix, span));
    refs.push_back({std::move(ref)});
  }
  if (hyps.empty()) return 0.0;
  return corpus_bleu(hyps, refs, 4, cfg.bleu_smoothing);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, load_dataset(cfg));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data) {
  cfg.validate();
  const Partition part = partition_iid(data.train_sequences, cfg.clients, cfg.seed);
  LmModel initial = initial_model(cfg, data.vocab.size());

  if (cfg.rounds == 0) {
    const Evaluation e = evaluate(initial, data, cfg);
    ExperimentResult r;
    r.records.push_back(RoundRecord{0, cfg.mode, e.train_loss, e.perplexity, 0, 0, 0});
    r.bleu = continuation_bleu(initial, data.eval_tokens, cfg);
    r.final_model = std::move(initial);
    return r;
  }

  ExperimentResult result;
  switch (cfg.mode) {
    case Mode::Federated:
      result = run_federated(cfg, data, part, std::move(initial));
      break;
    case Mode::Central:
      result = run_central(cfg, data, part, std::move(initial));
      break;
    case Mode::Local:
      return run_local(cfg, data, part, initial);
  }
  result.bleu = continuation_bleu(result.final_model, data.eval_tokens, cfg);
  return result;
}

void write_run_report(const ExperimentConfig& cfg, const ExperimentResult& result) {
  const std::filesystem::path dir(cfg.output_dir);
  const std::string stem = mode_name(cfg.mode);
  std::map<Mode, double> bleu;
  if (result.bleu) bleu[cfg.mode] = *result.bleu;
  emit_report(result.records, dir / (stem + "_rounds.csv"), dir / (stem + "_summary.json"), bleu);
  if (!result.client_curves.empty()) {
    std::ostringstream os;
    os << "round,client,train_loss\n";
    for (std::size_t t = 0; t < result.records.size(); ++t) {
      for (const auto& c : result.client_curves) {
        os << result.records[t].round << ',' << c.client_id << ',' << format_real(c.train_loss[t])
           << '\n';
      }
    }
    write_text_file(dir / (stem + "_clients.csv"), os.str());
  }
}

ComparisonResult compare_modes(const ExperimentConfig& base) {
  base.validate();
  const Dataset data = load_dataset(base);
  ComparisonResult out;
  std::ostringstream series;
  std::ostringstream totals;
  series << kSeriesCsvHeader << '\n';
  totals << kTotalsCsvHeader << '\n';
  nlohmann::ordered_json json = nlohmann::ordered_json::object();

  for (Mode mode : {Mode::Federated, Mode::Central, Mode::Local}) {
    ExperimentConfig cfg = base;
    cfg.mode = mode;
    ExperimentResult r = run_experiment(cfg, data);
    for (const auto& rec : r.records) {
      series << rec.round << ',' << mode_name(mode) << ',' << format_real(rec.train_loss) << ','
             << (rec.eval_perplexity ? format_real(*rec.eval_perplexity) : "") << ','
             << rec.uplink_bytes << ',' << rec.downlink_bytes << '\n';
    }
    std::map<Mode, double> bleu;
    if (r.bleu) bleu[mode] = *r.bleu;
    const ModeSummary s = summarize(r.records, bleu).at(mode);
    totals << mode_name(mode) << ',' << s.rounds << ',' << format_real(s.final_train_loss) << ','
           << (s.final_perplexity ? format_real(*s.final_perplexity) : "") << ','
           << (s.bleu ? format_real(*s.bleu) : "") << ',' << s.uplink_bytes << ','
           << s.downlink_bytes << '\n';

    nlohmann::ordered_json m;
    m["rounds"] = s.rounds;
    m["final_train_loss"] = s.final_train_loss;
    m["final_perplexity"] = s.final_perplexity ? nlohmann::ordered_json(*s.final_perplexity)
                                               : nlohmann::ordered_json(nullptr);
    m["bleu"] = s.bleu ? nlohmann::ordered_json(*s.bleu) : nlohmann::ordered_json(nullptr);
    m["uplink_bytes"] = s.uplink_bytes;
    m["downlink_bytes"] = s.downlink_bytes;
    m["total_wall_ms"] = s.wall_ms;
    m["mean_round_ms"] =
        s.rounds > 0 ? static_cast<double>(s.wall_ms) / static_cast<double>(s.rounds) : 0.0;
    json[mode_name(mode)] = std::move(m);
    out.runs.emplace(mode, std::move(r));
  }
  out.series_csv = series.str();
  out.totals_csv = totals.str();
  out.summary_json = json.dump(2) + "\n";
  return out;
}

void write_comparison(const ExperimentConfig& base, const ComparisonResult& result) {
  const std::filesystem::path dir(base.output_dir);
  write_text_file(dir / "compare.csv", result.series_csv);
  write_text_file(dir / "compare_totals.csv", result.totals_csv);
  write_text_file(dir / "compare_summary.json", result.summary_json);
}

}  // namespace gdfed
