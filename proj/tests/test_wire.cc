#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "amph/wire.hpp"

using namespace amph;

namespace {

WireHeader sample_header() {
  WireHeader h;
  h.payload_kind = PayloadKind::put;
  h.inline_payload = true;
  h.handler_id = 0x11223344;
  h.source_rank = 7;
  h.target_kind = TargetKind::global_ref;
  h.target_id = 0x0123456789ABCDEFull;
  h.payload_size = 448;
  h.object_size = 0xDEADBEEF00ull;
  h.src_device_hint = 2;
  h.dst_device_hint = 3;
  h.completion_token = 0xFEEDFACE12345678ull;
  return h;
}

}  // namespace

TEST_CASE("encode produces the exact 64-byte layout") {
  auto got = encode_header(sample_header());

  const uint8_t want[64] = {
      0x41, 0x4D, 0x50, 0x48,                          // magic, spells AMPH
      0x01, 0x00,                                      // version 1
      0x03,                                            // payload kind: put
      0x01,                                            // inline flag
      0x44, 0x33, 0x22, 0x11,                          // handler id
      0x07, 0x00, 0x00, 0x00,                          // source rank
      0x02,                                            // target kind: global ref
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,        // pad
      0xEF, 0xCD, 0xAB, 0x89, 0x67, 0x45, 0x23, 0x01,  // target id
      0xC0, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  // payload size 448
      0x00, 0xEF, 0xBE, 0xAD, 0xDE, 0x00, 0x00, 0x00,  // object size
      0x02, 0x03,                                      // device hints
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00,              // pad
      0x78, 0x56, 0x34, 0x12, 0xCE, 0xFA, 0xED, 0xFE,  // completion token
  };
  REQUIRE(got.size() == 64);
  for (size_t i = 0; i < 64; i++) {
    CAPTURE(i);
    CHECK(uint8_t(got[i]) == want[i]);
  }
}

TEST_CASE("decode inverts encode for fuzzed headers") {
  std::mt19937_64 rng(0x5EEDu);
  for (int round = 0; round < 2000; round++) {
    WireHeader h;
    h.payload_kind = PayloadKind(rng() % 6);
    h.inline_payload = (rng() & 1) != 0;
    h.handler_id = uint32_t(rng());
    h.source_rank = uint32_t(rng());
    h.target_kind = TargetKind(rng() % 3);
    h.target_id = rng();
    h.payload_size = h.inline_payload ? rng() % (kInlineCapacity + 1) : rng();
    h.object_size = rng();
    h.src_device_hint = uint8_t(rng());
    h.dst_device_hint = uint8_t(rng());
    h.completion_token = rng();

    auto bytes = encode_header(h);
    WireHeader back = decode_header(bytes);
    CAPTURE(round);
    CHECK(back.payload_kind == h.payload_kind);
    CHECK(back.inline_payload == h.inline_payload);
    CHECK(back.handler_id == h.handler_id);
    CHECK(back.source_rank == h.source_rank);
    CHECK(back.target_kind == h.target_kind);
    CHECK(back.target_id == h.target_id);
    CHECK(back.payload_size == h.payload_size);
    CHECK(back.object_size == h.object_size);
    CHECK(back.src_device_hint == h.src_device_hint);
    CHECK(back.dst_device_hint == h.dst_device_hint);
    CHECK(back.completion_token == h.completion_token);
  }
}

TEST_CASE("inline budget sits exactly at 448 payload bytes") {
  WireHeader h = sample_header();

  h.payload_size = kInlineCapacity;
  CHECK_NOTHROW(encode_header(h));

  h.payload_size = kInlineCapacity + 1;
  CHECK_THROWS_WITH_AS(encode_header(h), doctest::Contains("one-frame budget"), Error);

  h.inline_payload = false;
  CHECK_NOTHROW(encode_header(h));

  // A forged header with the same violation must not decode either.
  auto bytes = encode_header(h);
  bytes[7] = std::byte(1);
  CHECK_THROWS_AS(decode_header(bytes), Error);
}

TEST_CASE("decode rejects malformed headers") {
  auto bytes = encode_header(sample_header());

  SUBCASE("short buffer") {
    CHECK_THROWS_WITH_AS(decode_header(std::span(bytes).first(63)),
                         doctest::Contains("short header"), Error);
  }
  SUBCASE("bad magic") {
    bytes[0] = std::byte(0x42);
    CHECK_THROWS_WITH_AS(decode_header(bytes), doctest::Contains("bad magic"), Error);
  }
  SUBCASE("wrong version") {
    bytes[4] = std::byte(9);
    CHECK_THROWS_WITH_AS(decode_header(bytes), doctest::Contains("version"), Error);
  }
  SUBCASE("unknown payload kind") {
    bytes[6] = std::byte(6);
    CHECK_THROWS_WITH_AS(decode_header(bytes), doctest::Contains("payload kind"), Error);
  }
  SUBCASE("bad inline flag") {
    bytes[7] = std::byte(2);
    CHECK_THROWS_WITH_AS(decode_header(bytes), doctest::Contains("inline flag"), Error);
  }
  SUBCASE("unknown target kind") {
    bytes[16] = std::byte(3);
    CHECK_THROWS_WITH_AS(decode_header(bytes), doctest::Contains("target kind"), Error);
  }
}

TEST_CASE("decode accepts a header with trailing payload bytes") {
  auto hdr = encode_header(sample_header());
  std::vector<std::byte> frame(hdr.begin(), hdr.end());
  frame.resize(64 + 448, std::byte(0xAB));
  WireHeader h = decode_header(frame);
  CHECK(h.payload_size == 448);
}

TEST_CASE("payload kind names") {
  CHECK(std::string(payload_kind_name(PayloadKind::none)) == "NONE");
  CHECK(std::string(payload_kind_name(PayloadKind::get_reply)) == "GET_REPLY");
}
