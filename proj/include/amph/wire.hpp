#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "amph/status.hpp"

namespace amph {

inline constexpr uint32_t kWireMagic = 0x48504D41;
inline constexpr uint16_t kWireVersion = 1;
inline constexpr size_t kHeaderSize = 64;
inline constexpr size_t kMaxInlineFrame = 512;  ///< header + payload budget for one-frame sends
inline constexpr size_t kInlineCapacity = kMaxInlineFrame - kHeaderSize;

enum class PayloadKind : uint8_t {
  none = 0,
  raw_device = 1,
  hetero_object = 2,
  put = 3,
  get_request = 4,
  get_reply = 5,
};

enum class TargetKind : uint8_t {
  rank = 0,
  mobile_object = 1,
  global_ref = 2,
};

const char* payload_kind_name(PayloadKind k);

/// Decoded form of the fixed 64-byte little-endian message header. Field
/// layout on the wire:
///   [0]  magic u32        [4]  version u16      [6] payload_kind u8
///   [7]  inline_flag u8   [8]  handler_id u32   [12] source_rank u32
///   [16] target_kind u8   [17] 7 pad bytes      [24] target_id u64
///   [32] payload_size u64
///   [40] object_meta: object_size u64, src kind hint u8, dst kind hint u8,
///        6 zero bytes
///   [56] completion_token u64
struct WireHeader {
  PayloadKind payload_kind = PayloadKind::none;
  bool inline_payload = false;
  uint32_t handler_id = 0;
  uint32_t source_rank = 0;
  TargetKind target_kind = TargetKind::rank;
  uint64_t target_id = 0;
  uint64_t payload_size = 0;
  uint64_t object_size = 0;
  uint8_t src_device_hint = 0;
  uint8_t dst_device_hint = 0;
  uint64_t completion_token = 0;
};

std::array<std::byte, kHeaderSize> encode_header(const WireHeader& h);

/// Validates magic, version, enum ranges, and the inline-size budget.
WireHeader decode_header(std::span<const std::byte> bytes);

}  // namespace amph
