#include <doctest.h>

#include <functional>
#include <random>
#include <thread>

#include "gdfed/error.hpp"
#include "gdfed/lora.hpp"
#include "gdfed/protocol.hpp"
#include "gdfed/transport.hpp"
#include "test_support.hpp"

using namespace gdfed;

namespace {

using DeltaFn = std::function<ParameterSet(std::uint32_t round, const ParameterSet& global)>;

// A client that answers each broadcast with a caller-supplied delta.
void scripted_client(ClientTransport& t, std::uint32_t id, std::uint64_t samples, const DeltaFn& fn,
                     wire::Precision precision = wire::Precision::F32) {
  wire::WireMessage hello{wire::MessageKind::RoundAck, 0, id, 0, {}};
  ByteWriter(hello.payload).put(samples);
  t.send(hello);
  ParameterSet model;
  for (;;) {
    const wire::WireMessage m = t.receive();
    if (m.kind == wire::MessageKind::Shutdown) return;
    if (m.kind == wire::MessageKind::RoundAck) continue;
    for (const auto& [name, e] : wire::deserialize_params(m.payload).params) model.set(name, e.tensor, true);
    wire::WireMessage up{wire::MessageKind::DeltaUpdate, m.round, id, wire::flag::kFactors,
                         wire::serialize_params(fn(m.round, model), {wire::Subset::All, precision, false})};
    t.send(up);
  }
}

LmModel adapted(std::size_t V = 12, std::size_t d = 6, std::size_t r = 2, std::uint64_t seed = 1) {
  return attach(init_model(LmConfig{V, d, 8}, seed), LoraOptions{{"embed.W", "rnn.U"}, r, 4.0, 0.0, false}, seed);
}

std::vector<TokenSeq> shard(std::size_t count, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  std::vector<TokenSeq> out(count, TokenSeq(8));
  for (auto& s : out)
    for (auto& t : s) t = tok(rng);
  return out;
}

TrainerConfig trainer_cfg(double lr = 0.01) {
  TrainerConfig c;
  c.optimizer.lr = lr;
  c.optimizer.warmup_ratio = 0.0;
  c.optimizer.total_steps = 100;
  c.batch_size = 4;
  return c;
}

struct FedRun {
  ServerResult server;
  std::vector<ClientResult> clients;
};

FedRun run_memory(const ProtocolConfig& cfg, const LmModel& initial, const TrainerConfig& tc,
                  std::size_t per_client = 8) {
  auto hub = MemoryHub::create(cfg.clients, Millis(20000));
  auto server = hub->server();
  FedRun out;
  out.clients.resize(cfg.clients);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    threads.emplace_back([&, i] {
      auto t = hub->client(i);
      Trainer tr(initial, shard(per_client, static_cast<int>(initial.config.vocab_size), 50 + i), tc, 3, i);
      out.clients[i] = run_client(cfg, *t, tr, static_cast<std::uint32_t>(i));
    });
  }
  out.server = run_server(cfg, *server, initial);
  for (auto& th : threads) th.join();
  return out;
}

}  // namespace

TEST_CASE("zero rounds return the initial model and an empty ledger") {
  ProtocolConfig cfg;
  cfg.rounds = 0;
  cfg.clients = 3;
  auto hub = MemoryHub::create(3, Millis(100));
  auto server = hub->server();
  const LmModel m = adapted();
  const ServerResult r = run_server(cfg, *server, m);
  CHECK(r.global.params == m.params);
  CHECK(r.ledger.empty());
}

TEST_CASE("one client sending a zero delta leaves the model unchanged") {
  ProtocolConfig cfg;
  cfg.rounds = 1;
  cfg.clients = 1;
  auto hub = MemoryHub::create(1, Millis(5000));
  auto server = hub->server();
  const LmModel m = adapted();
  std::thread client([&] {
    auto t = hub->client(0);
    scripted_client(*t, 0, 5, [&](std::uint32_t, const ParameterSet&) {
      return subtract_trainable(m.params, m.params);
    });
  });
  const ServerResult r = run_server(cfg, *server, m);
  client.join();
  CHECK(r.global.params == m.params);
}

TEST_CASE("scripted deltas telescope over rounds") {
  ProtocolConfig cfg;
  cfg.rounds = 3;
  cfg.clients = 2;
  auto hub = MemoryHub::create(2, Millis(5000));
  auto server = hub->server();
  const LmModel m = adapted();
  // Client i adds 0.25 * (i + 1) * t to every trainable element in round t.
  auto fn_for = [&](std::uint32_t id) {
    return [&, id](std::uint32_t round, const ParameterSet&) {
      ParameterSet d = subtract_trainable(m.params, m.params);
      for (const auto& name : d.names())
        for (auto& v : d.mutable_tensor(name).values()) v = 0.25 * (id + 1) * round;
      return d;
    };
  };
  std::thread c0([&] { auto t = hub->client(0); scripted_client(*t, 0, 3, fn_for(0)); });
  std::thread c1([&] { auto t = hub->client(1); scripted_client(*t, 1, 9, fn_for(1)); });
  const ServerResult r = run_server(cfg, *server, m);
  c0.join();
  c1.join();
  // Sum over t of mean_i 0.25 (i + 1) t = 0.375 * (1 + 2 + 3).
  for (const auto& [name, e] : m.params) {
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double want = e.trainable ? e.tensor[i] + 0.375 * 6 : e.tensor[i];
      CHECK(std::abs(r.global.params.tensor(name)[i] - want) <= 1e-12);
    }
  }
}

TEST_CASE("traffic accounting for a gradualdiff run") {
  ProtocolConfig cfg;
  cfg.rounds = 3;
  cfg.clients = 3;
  const LmModel m = adapted();
  const FedRun run = run_memory(cfg, m, trainer_cfg());
  const TrafficLedger& ledger = run.server.ledger;

  const std::size_t lora_bytes = wire::serialized_size(m.params, {wire::Subset::Trainable});
  const std::size_t full_bytes = wire::serialized_size(m.params);
  for (std::uint32_t t = 1; t <= 3; ++t) {
    for (std::uint32_t c = 0; c < 3; ++c) {
      CHECK(ledger.bytes(t, Direction::Uplink, c) == lora_bytes + wire::kHeaderBytes);
      CHECK(run.clients[c].ledger.bytes(t, Direction::Uplink, c) == ledger.bytes(t, Direction::Uplink, c));
      const std::size_t bcast = t == 1 ? full_bytes : lora_bytes;
      // Broadcast plus the ack; the shutdown lands in the last round.
      const std::size_t shutdown = t == 3 ? wire::kHeaderBytes : 0;
      CHECK(ledger.bytes(t, Direction::Downlink, c) == bcast + 2 * wire::kHeaderBytes + shutdown);
    }
  }
  std::uint64_t sum = 0;
  for (std::uint32_t t : ledger.rounds()) {
    const RoundTraffic rt = measure_round_traffic(ledger, t);
    sum += rt.uplink_bytes + rt.downlink_bytes;
  }
  CHECK(sum == ledger.total_bytes());
  std::uint64_t by_record = 0;
  for (const auto& rec : ledger.records()) by_record += rec.payload_bytes + wire::kHeaderBytes;
  CHECK(by_record == ledger.total_bytes());
  CHECK(ledger.total_bytes(Direction::Uplink) + ledger.total_bytes(Direction::Downlink) == ledger.total_bytes());
  CHECK(measure_round_traffic(ledger, 1).uplink_messages == 3);
  CHECK(measure_round_traffic(ledger, 1).wall_ms >= 0.0);
  CHECK_THROWS_AS(measure_round_traffic(ledger, 9), ArgumentError);

  // Frozen bases never moved.
  for (const auto& [name, e] : m.params)
    if (!e.trainable) CHECK(run.server.global.params.tensor(name) == e.tensor);
}

TEST_CASE("fedavg uplink exceeds gradualdiff uplink by the layout ratio") {
  ProtocolConfig gd;
  gd.rounds = 2;
  gd.clients = 2;
  ProtocolConfig fa = gd;
  fa.aggregation = Aggregation::FedAvg;
  const LmModel m = adapted();
  const FedRun a = run_memory(gd, m, trainer_cfg());
  const FedRun b = run_memory(fa, m, trainer_cfg());
  const auto up_gd = measure_round_traffic(a.server.ledger, 2).uplink_bytes;
  const auto up_fa = measure_round_traffic(b.server.ledger, 2).uplink_bytes;
  CHECK(up_fa > up_gd);
  const double layout = static_cast<double>(wire::serialized_size(m.params, {wire::Subset::Trainable}) + 26) /
                        static_cast<double>(wire::serialized_size(m.params) + 26);
  CHECK(std::abs(static_cast<double>(up_gd) / static_cast<double>(up_fa) - layout) <= 1e-12);
  // FedAvg keeps the base frozen flags on the server.
  for (const auto& [name, e] : m.params) CHECK(b.server.global.params.trainable(name) == e.trainable);
}

TEST_CASE("quantized uplink ratio on large adapters") {
  // Every adapter entry holds at least 4096 elements.
  const LmModel m = attach(init_model(LmConfig{128, 128, 8}, 1), LoraOptions{{"embed.W", "rnn.U"}, 32, 64.0, 0.0, false}, 1);
  ProtocolConfig plain;
  plain.rounds = 1;
  plain.clients = 1;
  ProtocolConfig quant = plain;
  quant.quantize_payload = true;
  const auto tc = trainer_cfg(0.001);
  const FedRun a = run_memory(plain, m, tc, 2);
  const FedRun b = run_memory(quant, m, tc, 2);
  const double f32_up = static_cast<double>(measure_round_traffic(a.server.ledger, 1).uplink_bytes);
  const double q_up = static_cast<double>(measure_round_traffic(b.server.ledger, 1).uplink_bytes);
  CHECK(f32_up >= 4096);
  CHECK(q_up <= 0.16 * f32_up);
}

TEST_CASE("a client whose first step has zero learning rate sends an exactly zero delta") {
  const LmModel m = adapted();
  TrainerConfig tc = trainer_cfg();
  tc.optimizer.warmup_ratio = 0.5;  // lr_at(0) == 0
  tc.batch_size = 16;                // one step per round
  Trainer tr(m, shard(4, 12, 1), tc, 1, 0);
  const ParameterSet start = tr.model().params;
  tr.train(tr.steps_per_round());
  ProtocolConfig cfg;
  const ParameterSet d = client_update_payload(cfg, tr.model(), start);
  CHECK(d.names() == start.trainable_subset().names());
  CHECK(l2_norm(d) == 0.0);
}

TEST_CASE("server rejects a wrong-round update") {
  ProtocolConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 1;
  auto hub = MemoryHub::create(1, Millis(5000));
  auto server = hub->server();
  const LmModel m = adapted();
  std::thread client([&] {
    auto t = hub->client(0);
    try {
      wire::WireMessage hello{wire::MessageKind::RoundAck, 0, 0, 0, {}};
      ByteWriter(hello.payload).put(std::uint64_t{1});
      t->send(hello);
      t->receive();
      t->send(wire::WireMessage{wire::MessageKind::DeltaUpdate, 5, 0, wire::flag::kFactors,
                                wire::serialize_params(subtract_trainable(m.params, m.params))});
      t->receive();
    } catch (const Error&) {
    }
  });
  try {
    run_server(cfg, *server, m);
    FAIL("expected a protocol error");
  } catch (const ProtocolError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("round 5") != std::string::npos);
    CHECK(msg.find("expected round 1") != std::string::npos);
  }
  server.reset();
  client.join();
}

TEST_CASE("server aborts when a client disconnects") {
  ProtocolConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 2;
  auto hub = MemoryHub::create(2, Millis(5000));
  auto server = hub->server();
  const LmModel m = adapted();
  std::thread good([&] {
    auto t = hub->client(0);
    try {
      scripted_client(*t, 0, 1, [&](std::uint32_t, const ParameterSet&) {
        return subtract_trainable(m.params, m.params);
      });
    } catch (const Error&) {
    }
  });
  std::thread quitter([&] {
    auto t = hub->client(1);
    wire::WireMessage hello{wire::MessageKind::RoundAck, 0, 1, 0, {}};
    ByteWriter(hello.payload).put(std::uint64_t{1});
    t->send(hello);
    t->receive();
  });
  CHECK_THROWS_AS(run_server(cfg, *server, m), ProtocolError);
  server.reset();
  good.join();
  quitter.join();
}

TEST_CASE("server rejects duplicate handshakes and bad flags") {
  const LmModel m = adapted();
  SUBCASE("duplicate client id") {
    ProtocolConfig cfg;
    cfg.rounds = 1;
    cfg.clients = 2;
    auto hub = MemoryHub::create(2, Millis(5000));
    auto server = hub->server();
    auto c0 = hub->client(0);
    auto c1 = hub->client(1);
    for (auto* c : {c0.get(), c1.get()}) {
      wire::WireMessage hello{wire::MessageKind::RoundAck, 0, 7, 0, {}};
      ByteWriter(hello.payload).put(std::uint64_t{1});
      c->send(hello);
    }
    CHECK_THROWS_AS(run_server(cfg, *server, m), ProtocolError);
  }
  SUBCASE("update without the factors flag") {
    ProtocolConfig cfg;
    cfg.rounds = 1;
    cfg.clients = 1;
    auto hub = MemoryHub::create(1, Millis(5000));
    auto server = hub->server();
    auto c = hub->client(0);
    wire::WireMessage hello{wire::MessageKind::RoundAck, 0, 0, 0, {}};
    ByteWriter(hello.payload).put(std::uint64_t{1});
    c->send(hello);
    c->send(wire::WireMessage{wire::MessageKind::DeltaUpdate, 1, 0, 0,
                              wire::serialize_params(subtract_trainable(m.params, m.params))});
    CHECK_THROWS_AS(run_server(cfg, *server, m), ProtocolError);
  }
}

TEST_CASE("client detects round skew") {
  auto hub = MemoryHub::create(1, Millis(5000));
  auto server = hub->server();
  auto client = hub->client(0);
  server->accept(1);
  server->send(0, wire::WireMessage{wire::MessageKind::GlobalBroadcast, 2, wire::kServerId, wire::flag::kFactors,
                                    wire::serialize_params(adapted().params)});
  Trainer tr(adapted(), shard(4, 12, 1), trainer_cfg(), 1, 0);
  ProtocolConfig cfg;
  CHECK_THROWS_AS(run_client(cfg, *client, tr, 0), ProtocolError);
}

TEST_CASE("client rejects a malformed broadcast") {
  auto hub = MemoryHub::create(1, Millis(5000));
  auto server = hub->server();
  auto client = hub->client(0);
  server->accept(1);
  server->send(0, wire::WireMessage{wire::MessageKind::GlobalBroadcast, 1, wire::kServerId, wire::flag::kFactors,
                                    Bytes{1, 2, 3}});
  Trainer tr(adapted(), shard(4, 12, 1), trainer_cfg(), 1, 0);
  ProtocolConfig cfg;
  CHECK_THROWS_AS(run_client(cfg, *client, tr, 0), FormatError);
}

TEST_CASE("dense delta form moves the bases and re-broadcasts them") {
  ProtocolConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 2;
  cfg.delta_form = DeltaForm::Dense;
  cfg.precision = wire::Precision::F64;
  const LmModel m = adapted();
  const FedRun run = run_memory(cfg, m, trainer_cfg());
  CHECK_FALSE(run.server.global.params.tensor("embed.W") == m.params.tensor("embed.W"));
  CHECK_FALSE(run.server.global.params.trainable("embed.W"));
  CHECK(broadcast_payload(cfg, run.server.global, 2).contains("embed.W"));
  CHECK_FALSE(broadcast_payload(ProtocolConfig{}, run.server.global, 2).contains("embed.W"));
}

TEST_CASE("tcp and memory transports give identical results") {
  ProtocolConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 2;
  const LmModel m = adapted();
  const FedRun mem = run_memory(cfg, m, trainer_cfg());

  TcpServerTransport server("127.0.0.1", 0, Millis(20000));
  const std::uint16_t port = server.port();
  CHECK(port != 0);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < 2; ++i) {
    threads.emplace_back([&, i] {
      TcpClientTransport t("127.0.0.1", port, Millis(20000));
      Trainer tr(m, shard(8, 12, 50 + i), trainer_cfg(), 3, i);
      run_client(cfg, t, tr, static_cast<std::uint32_t>(i));
    });
  }
  const ServerResult tcp = run_server(cfg, server, m);
  for (auto& th : threads) th.join();
  CHECK(tcp.global.params == mem.server.global.params);
  CHECK(tcp.ledger.total_bytes() == mem.server.ledger.total_bytes());
  for (std::uint32_t t = 0; t <= 2; ++t)
    for (std::uint32_t c = 0; c < 2; ++c)
      for (Direction d : {Direction::Uplink, Direction::Downlink})
        CHECK(tcp.ledger.bytes(t, d, c) == mem.server.ledger.bytes(t, d, c));
}

TEST_CASE("tcp client reports a refused connection") {
  std::uint16_t port = 0;
  {
    TcpServerTransport probe("127.0.0.1", 0, Millis(100));
    port = probe.port();
  }
  CHECK_THROWS_AS(TcpClientTransport("127.0.0.1", port, Millis(200)), Error);
}
