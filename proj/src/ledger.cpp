#include "gdfed/ledger.hpp"

#include <algorithm>

#include "gdfed/error.hpp"

namespace gdfed {

void TrafficLedger::record(std::uint32_t round, Direction direction, std::uint32_t client_id,
                           const wire::WireMessage& message) {
  if (!records_.empty() && round < records_.back().round) {
    throw ArgumentError("ledger rounds must be non-decreasing");
  }
  records_.push_back(TrafficRecord{round, direction, client_id, message.kind,
                                   static_cast<std::uint64_t>(message.payload.size())});
}

std::vector<std::uint32_t> TrafficLedger::rounds() const {
  std::vector<std::uint32_t> out;
  for (const auto& r : records_) {
    if (out.empty() || out.back() != r.round) out.push_back(r.round);
  }
  return out;
}

RoundTraffic TrafficLedger::measure_round_traffic(std::uint32_t round) const {
  RoundTraffic t;
  bool seen = false;
  for (const auto& r : records_) {
    if (r.round != round) continue;
    seen = true;
    if (r.direction == Direction::Uplink) {
      t.uplink_bytes += r.total_bytes();
      ++t.uplink_messages;
    } else {
      t.downlink_bytes += r.total_bytes();
      ++t.downlink_messages;
    }
  }
  if (!seen) throw ArgumentError("no traffic recorded for round " + std::to_string(round));
  if (auto it = wall_ms_.find(round); it != wall_ms_.end()) t.wall_ms = it->second;
  return t;
}

std::uint64_t TrafficLedger::bytes(std::uint32_t round, Direction direction,
                                   std::uint32_t client_id) const {
  std::uint64_t n = 0;
  for (const auto& r : records_) {
    if (r.round == round && r.direction == direction && r.client_id == client_id) {
      n += r.total_bytes();
    }
  }
  return n;
}

std::uint64_t TrafficLedger::total_bytes() const {
  std::uint64_t n = 0;
  for (const auto& r : records_) n += r.total_bytes();
  return n;
}

std::uint64_t TrafficLedger::total_bytes(Direction direction) const {
  std::uint64_t n = 0;
  for (const auto& r : records_) {
    if (r.direction == direction) n += r.total_bytes();
  }
  return n;
}

}  // namespace gdfed
