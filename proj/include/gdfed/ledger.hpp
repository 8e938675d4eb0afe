#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "gdfed/wire.hpp"

namespace gdfed {

enum class Direction { Uplink, Downlink };

struct TrafficRecord {
  std::uint32_t round = 0;
  Direction direction = Direction::Uplink;
  std::uint32_t client_id = 0;
  wire::MessageKind kind = wire::MessageKind::RoundAck;
  std::uint64_t payload_bytes = 0;

  std::uint64_t total_bytes() const { return payload_bytes + wire::kHeaderBytes; }
};

struct RoundTraffic {
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t uplink_messages = 0;
  std::uint64_t downlink_messages = 0;
  double wall_ms = 0.0;
};

// Exact per-message byte accounting, header included. One ledger per
// endpoint; not shared between threads.
class TrafficLedger {
 public:
  void record(std::uint32_t round, Direction direction, std::uint32_t client_id,
              const wire::WireMessage& message);
  void set_wall_ms(std::uint32_t round, double ms) { wall_ms_[round] = ms; }

  const std::vector<TrafficRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::vector<std::uint32_t> rounds() const;

  // ArgumentError for a round with no traffic.
  RoundTraffic measure_round_traffic(std::uint32_t round) const;
  std::uint64_t bytes(std::uint32_t round, Direction direction, std::uint32_t client_id) const;
  std::uint64_t total_bytes() const;
  std::uint64_t total_bytes(Direction direction) const;

 private:
  std::vector<TrafficRecord> records_;
  std::map<std::uint32_t, double> wall_ms_;
};

// Free-function form of TrafficLedger::measure_round_traffic.
inline RoundTraffic measure_round_traffic(const TrafficLedger& ledger, std::uint32_t round) {
  return ledger.measure_round_traffic(round);
}

}  // namespace gdfed
