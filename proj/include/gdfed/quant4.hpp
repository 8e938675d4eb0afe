#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gdfed/bytes.hpp"

namespace gdfed::quant4 {

inline constexpr std::size_t kBlockSize = 64;
inline constexpr std::size_t kBlockHeaderBytes = 8;  // f32 scale, u8 zero point, 3 pad
inline constexpr int kMaxCode = 15;

struct QuantBlock {
  float scale = 1.0f;
  std::uint8_t zero_point = 0;
};

// decode(code) = scale * (code - zero_point), blockwise.
struct QuantizedTensor {
  std::size_t count = 0;
  std::size_t block_size = kBlockSize;
  std::vector<QuantBlock> blocks;
  std::vector<std::uint8_t> codes;  // two per byte, low nibble first

  int code(std::size_t i) const { return (codes[i / 2] >> ((i % 2) * 4)) & 0x0F; }

  // Block headers plus packed codes: 8 * ceil(n / block) + ceil(n / 2).
  std::size_t payload_bytes() const;
  // payload_bytes() plus the u32 element count.
  std::size_t encoded_bytes() const { return 4 + payload_bytes(); }
};

std::size_t payload_bytes_for(std::size_t count, std::size_t block_size = kBlockSize);

QuantizedTensor quantize(std::span<const double> values, std::size_t block_size = kBlockSize);
std::vector<double> dequantize(const QuantizedTensor& q);

// [u32 n][per block: f32 scale, u8 zero_point, 3 zero bytes][packed codes].
void encode(const QuantizedTensor& q, ByteWriter& out);
Bytes encode(const QuantizedTensor& q);
// Reads one encoded tensor; FormatError on bad lengths or fields.
QuantizedTensor decode(ByteReader& in, std::size_t block_size = kBlockSize);
QuantizedTensor decode(std::span<const std::uint8_t> bytes, std::size_t block_size = kBlockSize);

}  // namespace gdfed::quant4
