#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "gdfed/bytes.hpp"
#include "gdfed/params.hpp"

namespace gdfed::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'G', 'D', 'F', 'L'};
inline constexpr std::uint8_t kVersion = 1;

// magic(4) version(1) kind(1) round(4) sender(4) flags(1) reserved(3)
// payload_len(8), little-endian.
inline constexpr std::size_t kHeaderBytes = 26;

enum class MessageKind : std::uint8_t {
  GlobalBroadcast = 1,
  DeltaUpdate = 2,
  FullModelUpdate = 3,
  RoundAck = 4,
  Shutdown = 5,
};

const char* kind_name(MessageKind kind);

namespace flag {
inline constexpr std::uint8_t kQuantized = 0x01;
inline constexpr std::uint8_t kFactors = 0x02;
inline constexpr std::uint8_t kKnown = kQuantized | kFactors;
}  // namespace flag

// Sender id used by the server.
inline constexpr std::uint32_t kServerId = 0xFFFFFFFFu;

struct Header {
  MessageKind kind = MessageKind::RoundAck;
  std::uint32_t round = 0;
  std::uint32_t sender_id = 0;
  std::uint8_t flags = 0;
  std::uint64_t payload_len = 0;
};

struct WireMessage {
  MessageKind kind = MessageKind::RoundAck;
  std::uint32_t round = 0;
  std::uint32_t sender_id = 0;
  std::uint8_t flags = 0;
  Bytes payload;

  std::size_t encoded_size() const { return kHeaderBytes + payload.size(); }
  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

Bytes encode_header(const Header& header);
// FormatError on bad magic, version, kind, flags or reserved bytes.
Header decode_header(std::span<const std::uint8_t> bytes);

Bytes encode_message(const WireMessage& message);
// Exactly one message; FormatError if payload_len disagrees with the bytes.
WireMessage decode_message(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------- params

enum class Subset { All, Trainable };
enum class Precision { F32, F64 };

// Per-entry data type codes.
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeQ4 = 1;
inline constexpr std::uint8_t kDtypeF64 = 2;

struct EncodeOptions {
  Subset subset = Subset::All;
  Precision precision = Precision::F32;
  bool quantize = false;
};

// [u32 entry_count] then per entry, in name order:
// [u16 name_len][name][u8 dtype][u8 rank][u32 dims...][data].
Bytes serialize_params(const ParameterSet& set, const EncodeOptions& options = {});

// Byte count serialize_params would produce, from the layout alone.
std::size_t serialized_size(const ParameterSet& set, const EncodeOptions& options = {});

struct DecodedParams {
  ParameterSet params;  // every entry marked trainable; the wire carries no flag
  bool any_quantized = false;
  bool all_quantized = true;
};

DecodedParams deserialize_params(std::span<const std::uint8_t> bytes);

}  // namespace gdfed::wire
