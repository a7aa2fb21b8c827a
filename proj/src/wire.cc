#include "amph/wire.hpp"

#include <cstring>

namespace amph {

namespace {

template <typename T>
void put_le(std::byte* at, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) at[i] = std::byte(uint8_t(v >> (8 * i)));
}

template <typename T>
T get_le(const std::byte* at) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= T(uint8_t(at[i])) << (8 * i);
  return v;
}

}  // namespace

const char* payload_kind_name(PayloadKind k) {
  switch (k) {
    case PayloadKind::none: return "NONE";
    case PayloadKind::raw_device: return "RAW_DEVICE";
    case PayloadKind::hetero_object: return "HETERO_OBJECT";
    case PayloadKind::put: return "PUT";
    case PayloadKind::get_request: return "GET_REQUEST";
    case PayloadKind::get_reply: return "GET_REPLY";
  }
  return "?";
}

std::array<std::byte, kHeaderSize> encode_header(const WireHeader& h) {
  if (h.inline_payload && h.payload_size > kInlineCapacity)
    fail(ErrorCode::protocol_error, "inline payload exceeds the one-frame budget");
  std::array<std::byte, kHeaderSize> out{};
  std::byte* p = out.data();
  put_le<uint32_t>(p + 0, kWireMagic);
  put_le<uint16_t>(p + 4, kWireVersion);
  p[6] = std::byte(uint8_t(h.payload_kind));
  p[7] = std::byte(uint8_t(h.inline_payload ? 1 : 0));
  put_le<uint32_t>(p + 8, h.handler_id);
  put_le<uint32_t>(p + 12, h.source_rank);
  p[16] = std::byte(uint8_t(h.target_kind));
  // bytes 17..23 stay zero
  put_le<uint64_t>(p + 24, h.target_id);
  put_le<uint64_t>(p + 32, h.payload_size);
  put_le<uint64_t>(p + 40, h.object_size);
  p[48] = std::byte(h.src_device_hint);
  p[49] = std::byte(h.dst_device_hint);
  // bytes 50..55 stay zero
  put_le<uint64_t>(p + 56, h.completion_token);
  return out;
}

WireHeader decode_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize)
    fail(ErrorCode::protocol_error, "short header: " + std::to_string(bytes.size()) + " bytes");
  const std::byte* p = bytes.data();
  if (get_le<uint32_t>(p + 0) != kWireMagic) fail(ErrorCode::protocol_error, "bad magic");
  uint16_t ver = get_le<uint16_t>(p + 4);
  if (ver != kWireVersion)
    fail(ErrorCode::protocol_error, "unsupported wire version " + std::to_string(ver));
  WireHeader h;
  uint8_t kind = uint8_t(p[6]);
  if (kind > uint8_t(PayloadKind::get_reply))
    fail(ErrorCode::protocol_error, "unknown payload kind " + std::to_string(kind));
  h.payload_kind = PayloadKind(kind);
  uint8_t inl = uint8_t(p[7]);
  if (inl > 1) fail(ErrorCode::protocol_error, "bad inline flag");
  h.inline_payload = inl == 1;
  h.handler_id = get_le<uint32_t>(p + 8);
  h.source_rank = get_le<uint32_t>(p + 12);
  uint8_t tk = uint8_t(p[16]);
  if (tk > uint8_t(TargetKind::global_ref))
    fail(ErrorCode::protocol_error, "unknown target kind " + std::to_string(tk));
  h.target_kind = TargetKind(tk);
  h.target_id = get_le<uint64_t>(p + 24);
  h.payload_size = get_le<uint64_t>(p + 32);
  h.object_size = get_le<uint64_t>(p + 40);
  h.src_device_hint = uint8_t(p[48]);
  h.dst_device_hint = uint8_t(p[49]);
  h.completion_token = get_le<uint64_t>(p + 56);
  if (h.inline_payload && h.payload_size > kInlineCapacity)
    fail(ErrorCode::protocol_error, "inline payload exceeds the one-frame budget");
  return h;
}

}  // namespace amph
