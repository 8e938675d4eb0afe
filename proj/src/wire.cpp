#include "gdfed/wire.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gdfed/error.hpp"
#include "gdfed/quant4.hpp"

namespace gdfed::wire {

const char* kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::GlobalBroadcast: return "GlobalBroadcast";
    case MessageKind::DeltaUpdate: return "DeltaUpdate";
    case MessageKind::FullModelUpdate: return "FullModelUpdate";
    case MessageKind::RoundAck: return "RoundAck";
    case MessageKind::Shutdown: return "Shutdown";
  }
  return "Unknown";
}

Bytes encode_header(const Header& h) {
  Bytes out;
  out.reserve(kHeaderBytes);
  ByteWriter w(out);
  w.put_bytes(kMagic);
  w.put(kVersion);
  w.put(static_cast<std::uint8_t>(h.kind));
  w.put(h.round);
  w.put(h.sender_id);
  w.put(h.flags);
  w.pad(3);
  w.put(h.payload_len);
  return out;
}

Header decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("message shorter than the 26-byte header");
  ByteReader r(bytes.first(kHeaderBytes));
  auto magic = r.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw FormatError("bad magic");
  const auto version = r.get<std::uint8_t>();
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version));
  const auto kind = r.get<std::uint8_t>();
  if (kind < 1 || kind > 5) throw FormatError("unknown message kind " + std::to_string(kind));
  Header h;
  h.kind = static_cast<MessageKind>(kind);
  h.round = r.get<std::uint32_t>();
  h.sender_id = r.get<std::uint32_t>();
  h.flags = r.get<std::uint8_t>();
  if (h.flags & ~flag::kKnown) throw FormatError("unknown flag bits set");
  auto reserved = r.get_bytes(3);
  if (reserved[0] || reserved[1] || reserved[2]) throw FormatError("reserved header bytes not zero");
  h.payload_len = r.get<std::uint64_t>();
  return h;
}

Bytes encode_message(const WireMessage& m) {
  Bytes out = encode_header(Header{m.kind, m.round, m.sender_id, m.flags, m.payload.size()});
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

WireMessage decode_message(std::span<const std::uint8_t> bytes) {
  Header h = decode_header(bytes);
  if (bytes.size() - kHeaderBytes != h.payload_len) {
    throw FormatError("payload_len " + std::to_string(h.payload_len) + " but " +
                      std::to_string(bytes.size() - kHeaderBytes) + " payload bytes present");
  }
  WireMessage m{h.kind, h.round, h.sender_id, h.flags, {}};
  m.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return m;
}

namespace {

bool selected(const ParamEntry& e, Subset subset) {
  return subset == Subset::All || e.trainable;
}

std::size_t data_bytes(std::size_t n, const EncodeOptions& o) {
  if (o.quantize) return 4 + quant4::payload_bytes_for(n);
  return n * (o.precision == Precision::F64 ? 8 : 4);
}

}  // namespace

std::size_t serialized_size(const ParameterSet& set, const EncodeOptions& options) {
  std::size_t total = 4;
  for (const auto& [name, e] : set) {
    if (!selected(e, options.subset)) continue;
    total += 2 + name.size() + 1 + 1 + 4 * e.tensor.rank() + data_bytes(e.tensor.size(), options);
  }
  return total;
}

Bytes serialize_params(const ParameterSet& set, const EncodeOptions& options) {
  Bytes out;
  out.reserve(serialized_size(set, options));
  ByteWriter w(out);
  std::uint32_t count = 0;
  for (const auto& [_, e] : set) count += selected(e, options.subset) ? 1 : 0;
  w.put(count);
  for (const auto& [name, e] : set) {
    if (!selected(e, options.subset)) continue;
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("entry name longer than 65535 bytes");
    }
    if (e.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("entry '" + name + "' has rank above 255");
    }
    w.put(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    const std::uint8_t dtype = options.quantize ? kDtypeQ4
                               : options.precision == Precision::F64 ? kDtypeF64
                                                                     : kDtypeF32;
    w.put(dtype);
    w.put(static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto dim : e.tensor.shape()) {
      if (dim > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError("entry '" + name + "' has a dimension above u32 range");
      }
      w.put(static_cast<std::uint32_t>(dim));
    }
    switch (dtype) {
      case kDtypeQ4: quant4::encode(quant4::quantize(e.tensor.values()), w); break;
      case kDtypeF64:
        for (double v : e.tensor.values()) w.put(v);
        break;
      default:
        for (double v : e.tensor.values()) {
          if (std::abs(v) > std::numeric_limits<float>::max()) {
            throw FormatError("entry '" + name + "' holds a value outside f32 range");
          }
          w.put(static_cast<float>(v));
        }
    }
  }
  return out;
}

DecodedParams deserialize_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  DecodedParams out;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name = r.get_string(name_len);
    if (name.empty()) throw FormatError("empty entry name");
    if (out.params.contains(name)) throw FormatError("duplicate entry '" + name + "'");
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto dim = r.get<std::uint32_t>();
      if (dim == 0) throw FormatError("entry '" + name + "' has a zero dimension");
      shape.push_back(dim);
      // Every encoding spends at least half a byte per element.
      if (n > (r.remaining() * 2 + 2) / dim) {
        throw FormatError("entry '" + name + "' is larger than the remaining payload");
      }
      n *= dim;
    }
    std::vector<double> data;
    switch (dtype) {
      case kDtypeF32: {
        if (r.remaining() / 4 < n) throw FormatError("truncated f32 data in '" + name + "'");
        data.resize(n);
        for (auto& v : data) v = r.get<float>();
        out.all_quantized = false;
        break;
      }
      case kDtypeF64: {
        if (r.remaining() / 8 < n) throw FormatError("truncated f64 data in '" + name + "'");
        data.resize(n);
        for (auto& v : data) v = r.get<double>();
        out.all_quantized = false;
        break;
      }
      case kDtypeQ4: {
        quant4::QuantizedTensor q = quant4::decode(r);
        if (q.count != n) {
          throw FormatError("quantized entry '" + name + "' holds " + std::to_string(q.count) +
                            " values for shape " + shape_string(shape));
        }
        data = quant4::dequantize(q);
        out.any_quantized = true;
        break;
      }
      default:
        throw FormatError("unknown dtype " + std::to_string(dtype) + " in '" + name + "'");
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw FormatError("non-finite value in '" + name + "'");
    }
    out.params.set(name, Tensor(std::move(shape), std::move(data)), true);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameter entries");
  if (count == 0) out.all_quantized = false;
  return out;
}

}  // namespace gdfed::wire
