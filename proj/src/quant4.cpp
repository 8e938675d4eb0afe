#include "gdfed/quant4.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "gdfed/error.hpp"

namespace gdfed::quant4 {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void set_code(std::vector<std::uint8_t>& codes, std::size_t i, int code) {
  const auto c = static_cast<std::uint8_t>(code & 0x0F);
  if (i % 2 == 0) {
    codes[i / 2] = static_cast<std::uint8_t>((codes[i / 2] & 0xF0) | c);
  } else {
    codes[i / 2] = static_cast<std::uint8_t>((codes[i / 2] & 0x0F) | (c << 4));
  }
}

// A constant block c is stored as scale = |c| / k with the code k steps
// away from the zero point. The smallest k in 1..15 that reproduces c
// exactly is used, so every lattice value survives a second round trip;
// k = 1 (exact whenever c fits in f32) is the fallback.
QuantBlock constant_block(double c, int& code) {
  const double mag = std::abs(c);
  if (c == 0.0 || static_cast<float>(mag) == 0.0f) {
    code = 0;
    return QuantBlock{1.0f, 0};
  }
  int steps = 1;
  for (int k = 1; k <= kMaxCode; ++k) {
    const auto s = static_cast<float>(mag / k);
    if (std::isnormal(s) && static_cast<double>(s) * k == mag) {
      steps = k;
      break;
    }
  }
  const auto scale = static_cast<float>(mag / steps);
  if (c > 0.0) {
    code = steps;
    return QuantBlock{scale, 0};
  }
  code = 0;
  return QuantBlock{scale, static_cast<std::uint8_t>(steps)};
}

}  // namespace

std::size_t payload_bytes_for(std::size_t count, std::size_t block_size) {
  if (block_size == 0) throw ArgumentError("block size must be positive");
  return kBlockHeaderBytes * ceil_div(count, block_size) + ceil_div(count, 2);
}

std::size_t QuantizedTensor::payload_bytes() const { return payload_bytes_for(count, block_size); }

QuantizedTensor quantize(std::span<const double> values, std::size_t block_size) {
  if (block_size == 0) throw ArgumentError("block size must be positive");
  QuantizedTensor q;
  q.count = values.size();
  q.block_size = block_size;
  q.codes.assign(ceil_div(values.size(), 2), 0);

  for (std::size_t lo = 0; lo < values.size(); lo += block_size) {
    const std::size_t hi = std::min(values.size(), lo + block_size);
    const auto block = values.subspan(lo, hi - lo);
    for (double v : block) {
      if (!std::isfinite(v) || std::abs(v) > FLT_MAX) {
        throw ArgumentError("quantize: value outside the finite f32 range");
      }
    }
    const auto [mn_it, mx_it] = std::minmax_element(block.begin(), block.end());
    const double mn = *mn_it;
    const double mx = *mx_it;

    // The range is widened to include zero so the integer zero point
    // lies inside [0, 15].
    const double lo_r = std::min(mn, 0.0);
    const double hi_r = std::max(mx, 0.0);
    const auto scale = static_cast<float>((hi_r - lo_r) / kMaxCode);

    if (mn == mx || !(scale > 0.0f) || !std::isnormal(scale)) {
      int code = 0;
      QuantBlock qb = constant_block(mn == mx ? mn : 0.5 * (mn + mx), code);
      q.blocks.push_back(qb);
      for (std::size_t i = lo; i < hi; ++i) set_code(q.codes, i, code);
      continue;
    }

    const double s = scale;
    const int zp = std::clamp(static_cast<int>(std::round(-lo_r / s)), 0, kMaxCode);
    q.blocks.push_back(QuantBlock{scale, static_cast<std::uint8_t>(zp)});
    for (std::size_t i = lo; i < hi; ++i) {
      const int code = std::clamp(static_cast<int>(std::round(values[i] / s)) + zp, 0, kMaxCode);
      set_code(q.codes, i, code);
    }
  }
  return q;
}

std::vector<double> dequantize(const QuantizedTensor& q) {
  if (q.block_size == 0 || q.blocks.size() != ceil_div(q.count, q.block_size) ||
      q.codes.size() != ceil_div(q.count, 2)) {
    throw FormatError("quantized tensor has inconsistent block or code counts");
  }
  std::vector<double> out(q.count);
  for (std::size_t i = 0; i < q.count; ++i) {
    const QuantBlock& b = q.blocks[i / q.block_size];
    out[i] = static_cast<double>(b.scale) * (q.code(i) - static_cast<int>(b.zero_point));
  }
  return out;
}

void encode(const QuantizedTensor& q, ByteWriter& out) {
  if (q.count > UINT32_MAX) throw FormatError("quantized tensor too large for u32 count");
  out.put(static_cast<std::uint32_t>(q.count));
  for (const auto& b : q.blocks) {
    out.put(b.scale);
    out.put(b.zero_point);
    out.pad(3);
  }
  out.put_bytes(q.codes);
}

Bytes encode(const QuantizedTensor& q) {
  Bytes bytes;
  ByteWriter w(bytes);
  encode(q, w);
  return bytes;
}

QuantizedTensor decode(ByteReader& in, std::size_t block_size) {
  if (block_size == 0) throw ArgumentError("block size must be positive");
  QuantizedTensor q;
  q.block_size = block_size;
  q.count = in.get<std::uint32_t>();
  const std::size_t n_blocks = ceil_div(q.count, block_size);
  if (in.remaining() < payload_bytes_for(q.count, block_size)) {
    throw FormatError("quantized payload shorter than its element count implies");
  }
  q.blocks.reserve(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    QuantBlock qb;
    qb.scale = in.get<float>();
    qb.zero_point = in.get<std::uint8_t>();
    auto pad = in.get_bytes(3);
    if (!std::isfinite(qb.scale) || !(qb.scale > 0.0f)) {
      throw FormatError("block " + std::to_string(b) + " has a non-positive scale");
    }
    if (qb.zero_point > kMaxCode) {
      throw FormatError("block " + std::to_string(b) + " zero point out of range");
    }
    if (pad[0] != 0 || pad[1] != 0 || pad[2] != 0) {
      throw FormatError("block " + std::to_string(b) + " has non-zero padding");
    }
    q.blocks.push_back(qb);
  }
  auto codes = in.get_bytes(ceil_div(q.count, 2));
  q.codes.assign(codes.begin(), codes.end());
  if (q.count % 2 == 1 && (q.codes.back() & 0xF0) != 0) {
    throw FormatError("unused trailing nibble is not zero");
  }
  return q;
}

QuantizedTensor decode(std::span<const std::uint8_t> bytes, std::size_t block_size) {
  ByteReader in(bytes);
  QuantizedTensor q = decode(in, block_size);
  if (in.remaining() != 0) throw FormatError("trailing bytes after quantized tensor");
  return q;
}

}  // namespace gdfed::quant4
