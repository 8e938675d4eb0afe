#include "gdfed/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <map>

#include "gdfed/error.hpp"

namespace gdfed {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

wire::EncodeOptions broadcast_options(const ProtocolConfig& cfg) {
  return wire::EncodeOptions{wire::Subset::All, cfg.precision, false};
}

wire::EncodeOptions update_options(const ProtocolConfig& cfg) {
  const bool quantize = cfg.quantize_payload && cfg.aggregation == Aggregation::GradualDiff;
  return wire::EncodeOptions{wire::Subset::All, cfg.precision, quantize};
}

std::uint8_t update_flags(const ProtocolConfig& cfg) {
  std::uint8_t flags = 0;
  if (update_options(cfg).quantize) flags |= wire::flag::kQuantized;
  if (cfg.aggregation == Aggregation::GradualDiff && cfg.delta_form == DeltaForm::Factors) {
    flags |= wire::flag::kFactors;
  }
  return flags;
}

wire::MessageKind update_kind(const ProtocolConfig& cfg) {
  return cfg.aggregation == Aggregation::GradualDiff ? wire::MessageKind::DeltaUpdate
                                                     : wire::MessageKind::FullModelUpdate;
}

void require_same_layout(const ParameterSet& expected, const ParameterSet& got,
                         std::uint32_t client) {
  if (expected.names() != got.names()) {
    throw ProtocolError("full model from client " + std::to_string(client) +
                        " does not match the global entry names");
  }
  for (const auto& [name, e] : expected) {
    if (got.tensor(name).shape() != e.tensor.shape()) {
      throw ProtocolError("full model from client " + std::to_string(client) +
                          " has wrong shape for '" + name + "'");
    }
  }
}

}  // namespace

ParameterSet broadcast_payload(const ProtocolConfig& cfg, const LmModel& global,
                               std::uint32_t round) {
  if (round <= 1 || cfg.aggregation == Aggregation::FedAvg) return global.params;
  ParameterSet out = global.params.trainable_subset();
  if (cfg.delta_form == DeltaForm::Dense) {
    // Dense aggregation moves the adapter bases, so they travel too.
    for (const auto& [name, _] : dense_delta_template(global.params)) {
      if (!out.contains(name)) out.set(name, global.params.tensor(name), true);
    }
  }
  return out;
}

ParameterSet client_update_payload(const ProtocolConfig& cfg, const LmModel& local,
                                   const ParameterSet& round_start) {
  if (cfg.aggregation == Aggregation::FedAvg) return local.params;
  if (cfg.delta_form == DeltaForm::Dense) {
    return dense_delta(local.params, round_start, local.adapters);
  }
  return subtract_trainable(local.params, round_start);
}

ServerResult run_server(const ProtocolConfig& cfg, ServerTransport& transport, LmModel initial,
                        const RoundCallback& on_round) {
  if (cfg.clients == 0) throw ArgumentError("at least one client is required");
  ServerResult result{std::move(initial), {}};
  if (cfg.rounds == 0) return result;
  LmModel& global = result.global;
  TrafficLedger& ledger = result.ledger;

  transport.accept(cfg.clients);

  // Handshake: connection -> (client id, sample count).
  std::map<std::size_t, std::uint32_t> client_of;
  std::map<std::uint32_t, std::size_t> connection_of;
  std::map<std::uint32_t, std::uint64_t> samples_of;
  while (client_of.size() < cfg.clients) {
    Inbound in = transport.receive();
    const auto& m = in.message;
    if (m.kind != wire::MessageKind::RoundAck || m.round != 0) {
      throw ProtocolError(std::string("expected handshake, got ") + wire::kind_name(m.kind) +
                          " for round " + std::to_string(m.round));
    }
    if (client_of.count(in.connection) || connection_of.count(m.sender_id)) {
      throw ProtocolError("duplicate handshake from client " + std::to_string(m.sender_id));
    }
    if (m.payload.size() != 8) throw FormatError("handshake payload must be 8 bytes");
    ByteReader r(m.payload);
    const auto samples = r.get<std::uint64_t>();
    if (samples == 0) throw ProtocolError("client " + std::to_string(m.sender_id) + " has no data");
    ledger.record(0, Direction::Uplink, m.sender_id, m);
    client_of[in.connection] = m.sender_id;
    connection_of[m.sender_id] = in.connection;
    samples_of[m.sender_id] = samples;
  }

  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    const auto start = Clock::now();
    const ParameterSet round_start = global.params;

    wire::WireMessage bc;
    bc.kind = wire::MessageKind::GlobalBroadcast;
    bc.round = t;
    bc.sender_id = wire::kServerId;
    if (cfg.aggregation == Aggregation::GradualDiff && cfg.delta_form == DeltaForm::Factors) {
      bc.flags = wire::flag::kFactors;
    }
    bc.payload = wire::serialize_params(broadcast_payload(cfg, global, t), broadcast_options(cfg));
    for (const auto& [client, conn] : connection_of) {
      transport.send(conn, bc);
      ledger.record(t, Direction::Downlink, client, bc);
    }

    std::map<std::uint32_t, ClientUpdate> received;
    while (received.size() < cfg.clients) {
      Inbound in = transport.receive();
      const auto& m = in.message;
      const std::uint32_t client = client_of.at(in.connection);
      if (m.round != t) {
        throw ProtocolError("client " + std::to_string(client) + " sent round " +
                            std::to_string(m.round) + ", expected round " + std::to_string(t));
      }
      if (m.kind != update_kind(cfg)) {
        throw ProtocolError(std::string("expected ") + wire::kind_name(update_kind(cfg)) +
                            " from client " + std::to_string(client) + ", got " +
                            wire::kind_name(m.kind));
      }
      if (m.sender_id != client) {
        throw ProtocolError("sender id " + std::to_string(m.sender_id) +
                            " does not match handshake id " + std::to_string(client));
      }
      if (m.flags != update_flags(cfg)) {
        throw ProtocolError("client " + std::to_string(client) + " sent unexpected flags");
      }
      if (received.count(client)) {
        throw ProtocolError("duplicate update from client " + std::to_string(client));
      }
      ledger.record(t, Direction::Uplink, client, m);

      wire::DecodedParams decoded = wire::deserialize_params(m.payload);
      if (decoded.any_quantized && !update_options(cfg).quantize) {
        throw ProtocolError("quantized payload without the quantized flag");
      }
      ClientUpdate u;
      u.client_id = client;
      u.round = t;
      u.sample_count = samples_of.at(client);
      u.kind = cfg.aggregation == Aggregation::GradualDiff ? PayloadKind::Delta
                                                            : PayloadKind::FullModel;
      u.form = cfg.delta_form;
      u.payload = std::move(decoded.params);
      received.emplace(client, std::move(u));

      wire::WireMessage ack{wire::MessageKind::RoundAck, t, wire::kServerId, 0, {}};
      transport.send(in.connection, ack);
      ledger.record(t, Direction::Downlink, client, ack);
    }

    std::vector<ClientUpdate> updates;
    for (auto& [_, u] : received) updates.push_back(std::move(u));

    if (cfg.aggregation == Aggregation::FedAvg) {
      for (const auto& u : updates) require_same_layout(round_start, u.payload, u.client_id);
      ParameterSet avg = fedavg_aggregate(updates, Weighting::Samples);
      for (const auto& [name, e] : round_start) avg.set_trainable(name, e.trainable);
      global.params = std::move(avg);
    } else if (cfg.delta_form == DeltaForm::Dense) {
      global.params = gradualdiff_aggregate_dense(round_start, updates, cfg.delta_weighting);
    } else {
      global.params = gradualdiff_aggregate(round_start, updates, cfg.delta_weighting);
    }
    ledger.set_wall_ms(t, ms_since(start));
    if (on_round) on_round(t, global, ledger.measure_round_traffic(t));
  }

  wire::WireMessage bye{wire::MessageKind::Shutdown, cfg.rounds, wire::kServerId, 0, {}};
  for (const auto& [client, conn] : connection_of) {
    transport.send(conn, bye);
    ledger.record(cfg.rounds, Direction::Downlink, client, bye);
  }
  return result;
}

ClientResult run_client(const ProtocolConfig& cfg, ClientTransport& transport, Trainer& trainer,
                        std::uint32_t client_id) {
  if (client_id == wire::kServerId) throw ArgumentError("client id collides with the server id");
  ClientResult result;
  TrafficLedger& ledger = result.ledger;

  wire::WireMessage hello{wire::MessageKind::RoundAck, 0, client_id, 0, {}};
  ByteWriter(hello.payload).put(static_cast<std::uint64_t>(trainer.shard_size()));
  transport.send(hello);
  ledger.record(0, Direction::Uplink, client_id, hello);

  std::uint32_t expected = 1;
  std::uint32_t last_sent = 0;
  for (;;) {
    wire::WireMessage m = transport.receive();
    if (m.sender_id != wire::kServerId) throw ProtocolError("message not sent by the server");
    switch (m.kind) {
      case wire::MessageKind::Shutdown:
        ledger.record(m.round, Direction::Downlink, client_id, m);
        return result;
      case wire::MessageKind::RoundAck:
        if (m.round != last_sent) {
          throw ProtocolError("ack for round " + std::to_string(m.round) + ", last update was round " +
                              std::to_string(last_sent));
        }
        ledger.record(m.round, Direction::Downlink, client_id, m);
        continue;
      case wire::MessageKind::GlobalBroadcast:
        break;
      default:
        throw ProtocolError(std::string("unexpected ") + wire::kind_name(m.kind) + " from server");
    }
    if (m.round != expected) {
      throw ProtocolError("round skew: expected broadcast for round " + std::to_string(expected) +
                          ", got round " + std::to_string(m.round));
    }
    ledger.record(m.round, Direction::Downlink, client_id, m);
    const auto start = Clock::now();

    trainer.load_parameters(wire::deserialize_params(m.payload).params);
    const ParameterSet round_start = trainer.model().params;
    result.round_losses.push_back(trainer.train(trainer.steps_per_round()));

    wire::WireMessage up;
    up.kind = update_kind(cfg);
    up.round = m.round;
    up.sender_id = client_id;
    up.flags = update_flags(cfg);
    up.payload = wire::serialize_params(client_update_payload(cfg, trainer.model(), round_start),
                                        update_options(cfg));
    transport.send(up);
    ledger.record(m.round, Direction::Uplink, client_id, up);
    ledger.set_wall_ms(m.round, ms_since(start));
    last_sent = m.round;
    ++expected;
  }
}

}  // namespace gdfed
