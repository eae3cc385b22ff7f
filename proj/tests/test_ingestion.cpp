#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <zlib.h>

#include "cola/error.hpp"
#include "cola/ingestion.hpp"
#include "support.hpp"

using namespace cola;
using test::put;

namespace {

// Little-endian encoding written out by hand, independent of the encoder.
std::vector<std::uint8_t> oracle_frame(const PointCloud& c, const LabelArray* labels) {
  std::vector<std::uint8_t> payload;
  for (float v : c.xyz) put(payload, v);
  std::uint16_t flags = 0;
  if (c.reflectivity) {
    flags |= 1;
    for (float v : *c.reflectivity) put(payload, v);
  }
  if (c.ring) {
    flags |= 2;
    for (auto v : *c.ring) put(payload, v);
  }
  if (labels) {
    flags |= 4;
    for (auto v : labels->values) put(payload, v);
  }
  std::vector<std::uint8_t> out{'C', 'O', 'L', 'A'};
  put(out, std::uint16_t{1});
  put(out, flags);
  put(out, static_cast<std::uint64_t>(c.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put(out, static_cast<std::uint32_t>(::crc32(0L, payload.data(), static_cast<uInt>(payload.size()))));
  return out;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("kitti scan byte fixture") {
  std::vector<std::uint8_t> bytes;
  for (float v : {1.5f, -2.25f, 0.125f, 0.5f, 10.0f, 20.0f, -30.0f, 0.99f}) put(bytes, v);
  REQUIRE(bytes.size() == 32);
  const PointCloud c = parse_kitti_bin(test::as_span(bytes));
  CHECK(c.size() == 2);
  CHECK(c.xyz == std::vector<float>{1.5f, -2.25f, 0.125f, 10.0f, 20.0f, -30.0f});
  CHECK(*c.reflectivity == std::vector<float>{0.5f, 0.99f});
  CHECK_FALSE(c.ring);
  CHECK(c.dropped.empty());

  CHECK(parse_kitti_bin({}).size() == 0);
  const std::vector<std::uint8_t> odd(17, 0);
  CHECK_THROWS_AS(parse_kitti_bin(test::as_span(odd)), FormatError);
}

TEST_CASE("hand-assembled little-endian bytes") {
  // 1.0f = 0x3F800000, -2.0f = 0xC0000000, 0.5f = 0x3F000000, 0.0f
  const std::vector<std::uint8_t> bytes{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0,
                                        0x00, 0x00, 0x00, 0x3F, 0x00, 0x00, 0x00, 0x00};
  const PointCloud c = parse_kitti_bin(test::as_span(bytes));
  CHECK(c.xyz == std::vector<float>{1.0f, -2.0f, 0.5f});
  CHECK((*c.reflectivity)[0] == 0.0f);
}

TEST_CASE("kitti labels keep the low 16 bits") {
  PointCloud three;
  three.xyz.assign(9, 0.0f);
  std::vector<std::uint8_t> bytes;
  put(bytes, std::uint32_t{0x0001000A});
  put(bytes, std::uint32_t{0x00000000});
  put(bytes, std::uint32_t{0xFFFF0028});
  const LabelArray l = parse_kitti_label(test::as_span(bytes), three, "semantickitti");
  CHECK(l.values == std::vector<LabelId>{10, 0, 40});
  CHECK(l.labelset == "semantickitti");

  put(bytes, std::uint32_t{7});
  CHECK_THROWS_AS(parse_kitti_label(test::as_span(bytes), three, "semantickitti"), ValidationError);
  bytes.resize(10);
  CHECK_THROWS_AS(parse_kitti_label(test::as_span(bytes), three, "semantickitti"), FormatError);
}

TEST_CASE("non-finite points are dropped with their labels") {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  std::vector<std::uint8_t> scan, label;
  const float pts[4][4] = {{1, 2, 3, 0.1f}, {nan, 0, 0, 0.2f}, {4, 5, 6, 0.3f}, {0, inf, 0, 0.4f}};
  for (auto& p : pts) {
    for (float v : p) put(scan, v);
  }
  for (std::uint32_t v : {10u, 11u, 40u, 13u}) put(label, v);
  const PointCloud c = parse_kitti_bin(test::as_span(scan));
  CHECK(c.size() == 2);
  CHECK(c.dropped == std::vector<std::uint32_t>{1, 3});
  CHECK(c.xyz == std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(*c.reflectivity == std::vector<float>{0.1f, 0.3f});
  const LabelArray l = parse_kitti_label(test::as_span(label), c, "semantickitti");
  CHECK(l.values == std::vector<LabelId>{10, 40});
}

TEST_CASE("nuscenes sweep and lidarseg labels") {
  std::vector<std::uint8_t> bytes;
  for (float v : {3.0f, 4.0f, -1.0f, 12.0f, 31.0f}) put(bytes, v);
  REQUIRE(bytes.size() == 20);
  PointCloud c = parse_nuscenes_bin(test::as_span(bytes));
  CHECK(c.size() == 1);
  REQUIRE(c.ring);
  CHECK((*c.ring)[0] == 31);
  CHECK((*c.reflectivity)[0] == 12.0f);

  for (float v : {0.0f, 0.0f, 0.0f, 1.0f, 6.9f}) put(bytes, v);
  c = parse_nuscenes_bin(test::as_span(bytes));
  CHECK((*c.ring)[1] == 7);
  const std::vector<std::uint8_t> labels{24, 17};
  CHECK(parse_nuscenes_label(test::as_span(labels), c, "nuscenes").values == std::vector<LabelId>{24, 17});

  CHECK(parse_nuscenes_bin({}).size() == 0);
  bytes.resize(21);
  CHECK_THROWS_AS(parse_nuscenes_bin(test::as_span(bytes)), FormatError);
}

TEST_CASE("cola frame layout matches a hand-built encoding") {
  std::mt19937_64 rng(1);
  for (int mask = 0; mask < 8; ++mask) {
    PointCloud c = test::random_cloud(rng, 37, mask & 1, mask & 2);
    LabelArray l{std::vector<LabelId>(37), "x"};
    for (auto& v : l.values) v = static_cast<LabelId>(rng() % 300);
    const LabelArray* lp = (mask & 4) ? &l : nullptr;
    const auto bytes = encode_cola_frame(c, lp);
    const auto expect = oracle_frame(c, lp);
    REQUIRE(bytes.size() == expect.size());
    CHECK(std::memcmp(bytes.data(), expect.data(), bytes.size()) == 0);
  }
}

TEST_CASE("cola frame round trip") {
  std::mt19937_64 rng(2);
  test::TempDir tmp;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = rng() % 1001;
    const int mask = static_cast<int>(rng() % 8);
    PointCloud c = test::random_cloud(rng, n, mask & 1, mask & 2);
    LabelArray l{std::vector<LabelId>(n), ""};
    for (auto& v : l.values) v = static_cast<LabelId>(rng());
    const auto path = tmp / ("f" + std::to_string(i) + ".cola");
    write_cola_frame(c, (mask & 4) ? &l : nullptr, path);
    const ColaFrame f = read_cola_frame(path);
    CHECK(bit_equal(f.cloud.xyz, c.xyz));
    CHECK(f.cloud.reflectivity.has_value() == bool(mask & 1));
    if (c.reflectivity) CHECK(bit_equal(*f.cloud.reflectivity, *c.reflectivity));
    CHECK(f.cloud.ring == c.ring);
    CHECK(f.labels.has_value() == bool(mask & 4));
    if (mask & 4) CHECK(f.labels->values == l.values);
  }

  SUBCASE("no optional channels") {
    PointCloud c;
    c.xyz = {1, 2, 3};
    const auto bytes = encode_cola_frame(c, nullptr);
    CHECK(static_cast<int>(bytes[6]) == 0);
    CHECK(static_cast<int>(bytes[7]) == 0);
    const ColaFrame f = decode_cola_frame(bytes);
    CHECK(f.cloud == c);
    CHECK_FALSE(f.labels);
  }
  SUBCASE("NaN payload bits survive") {
    PointCloud c;
    c.xyz = {1, 2, 3};
    c.reflectivity = std::vector<float>{std::numeric_limits<float>::quiet_NaN()};
    const ColaFrame f = decode_cola_frame(encode_cola_frame(c, nullptr));
    CHECK(bit_equal(*f.cloud.reflectivity, *c.reflectivity));
  }
  SUBCASE("mismatched channels are rejected") {
    PointCloud c;
    c.xyz = {1, 2, 3};
    c.ring = std::vector<std::uint16_t>{1, 2};
    CHECK_THROWS_AS(encode_cola_frame(c, nullptr), ValidationError);
    c.ring.reset();
    LabelArray l{{1, 2}, ""};
    CHECK_THROWS_AS(encode_cola_frame(c, &l), ValidationError);
  }
}

TEST_CASE("cola frame corruption") {
  PointCloud c;
  c.xyz = {1, 2, 3, 4, 5, 6};
  c.ring = std::vector<std::uint16_t>{3, 4};
  const LabelArray l{{7, 8}, ""};
  const auto good = encode_cola_frame(c, &l);

  auto bad = good;
  bad[0] = std::byte{'X'};
  CHECK_THROWS_WITH_AS(decode_cola_frame(bad), doctest::Contains("magic"), FormatError);
  bad = good;
  bad[4] = std::byte{2};
  CHECK_THROWS_WITH_AS(decode_cola_frame(bad), doctest::Contains("version"), FormatError);
  bad = good;
  bad[6] = std::byte{0x08 | 0x06};
  CHECK_THROWS_AS(decode_cola_frame(bad), FormatError);
  bad = good;
  bad.pop_back();
  CHECK_THROWS_AS(decode_cola_frame(bad), FormatError);
  bad = good;
  bad[20] ^= std::byte{1};
  CHECK_THROWS_WITH_AS(decode_cola_frame(bad), doctest::Contains("checksum"), FormatError);
  bad = good;
  bad[8] = std::byte{0xFF};
  bad[15] = std::byte{0xFF};
  CHECK_THROWS_AS(decode_cola_frame(bad), FormatError);
  CHECK_THROWS_AS(decode_cola_frame(std::span(good.data(), 10)), FormatError);
}

TEST_CASE("parsers never crash on random bytes") {
  std::mt19937_64 rng(3);
  PointCloud empty;
  for (int i = 0; i < 3000; ++i) {
    std::vector<std::byte> bytes(rng() % 96);
    for (auto& b : bytes) b = static_cast<std::byte>(rng());
    if (i % 3 == 0 && bytes.size() >= 16) {
      // Valid header, random body, to reach the deeper checks.
      const char magic[4] = {'C', 'O', 'L', 'A'};
      std::memcpy(bytes.data(), magic, 4);
      bytes[4] = std::byte{1};
      bytes[5] = std::byte{0};
      bytes[7] = std::byte{0};
      for (int k = 9; k < 16; ++k) bytes[k] = std::byte{0};
    }
    try {
      decode_cola_frame(bytes);
    } catch (const Error&) {
    }
    try {
      parse_kitti_bin(bytes);
    } catch (const Error&) {
    }
    try {
      parse_nuscenes_bin(bytes);
    } catch (const Error&) {
    }
    try {
      parse_kitti_label(bytes, empty, "x");
    } catch (const Error&) {
    }
  }
  CHECK(true);
}

TEST_CASE("u16 label files") {
  test::TempDir tmp;
  const LabelArray l{{0, 1, 65535, 7}, "x"};
  write_u16_labels(l, tmp / "a.pred");
  CHECK(test::read_bytes(tmp / "a.pred") == std::vector<std::uint8_t>{0, 0, 1, 0, 0xFF, 0xFF, 7, 0});
  CHECK(read_u16_labels(tmp / "a.pred", "x") == l);
  test::write_bytes(tmp / "b.pred", {1, 2, 3});
  CHECK_THROWS_AS(read_u16_labels(tmp / "b.pred", "x"), FormatError);
  CHECK_THROWS_AS(read_u16_labels(tmp / "missing.pred", "x"), IoError);
}

TEST_CASE("crc32 check value") {
  const std::string s = "123456789";
  CHECK(crc32(std::as_bytes(std::span(s.data(), s.size()))) == 0xCBF43926u);
}
