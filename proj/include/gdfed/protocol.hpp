#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gdfed/aggregate.hpp"
#include "gdfed/ledger.hpp"
#include "gdfed/optim.hpp"
#include "gdfed/toy_lm.hpp"
#include "gdfed/transport.hpp"
#include "gdfed/wire.hpp"

namespace gdfed {

enum class Aggregation { GradualDiff, FedAvg };

struct ProtocolConfig {
  std::uint32_t rounds = 15;
  std::size_t clients = 5;
  Aggregation aggregation = Aggregation::GradualDiff;
  DeltaForm delta_form = DeltaForm::Factors;
  Weighting delta_weighting = Weighting::Uniform;
  bool quantize_payload = false;
  wire::Precision precision = wire::Precision::F32;
};

// Called after each aggregation with the new global model.
using RoundCallback =
    std::function<void(std::uint32_t round, const LmModel& global, const RoundTraffic& traffic)>;

struct ServerResult {
  LmModel global;
  TrafficLedger ledger;
};

// Synchronous rounds with full participation:
//   handshake: every client sends RoundAck(round 0) carrying its u64 sample count;
//   round t:   broadcast the global model (all entries in round 1 and in FedAvg
//              mode, trainable entries plus changed bases afterwards), wait for
//              exactly one update per client, ack each, aggregate;
//   finally:   Shutdown to every client.
// With zero rounds the transport is not touched.
ServerResult run_server(const ProtocolConfig& cfg, ServerTransport& transport, LmModel initial,
                        const RoundCallback& on_round = {});

struct ClientResult {
  TrafficLedger ledger;
  std::vector<double> round_losses;  // mean minibatch loss per round
};

// Receives each broadcast into the trainer's model, trains one round and
// sends the delta (or, under FedAvg, the full model) until Shutdown.
ClientResult run_client(const ProtocolConfig& cfg, ClientTransport& transport, Trainer& trainer,
                        std::uint32_t client_id);

// Update payload a client would send for this round.
ParameterSet client_update_payload(const ProtocolConfig& cfg, const LmModel& local,
                                   const ParameterSet& round_start);

// Entries the server broadcasts in `round`.
ParameterSet broadcast_payload(const ProtocolConfig& cfg, const LmModel& global,
                               std::uint32_t round);

}  // namespace gdfed
