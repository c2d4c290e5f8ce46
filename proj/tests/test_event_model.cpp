#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "evl/binary_io.hpp"
#include "evl/event_model.hpp"
#include "test_util.hpp"

using namespace evl;

namespace {

std::vector<std::uint8_t> header(std::uint16_t w, std::uint16_t h, std::uint64_t n) {
  ByteWriter out;
  out.put_bytes("EVS1");
  out.put_u16(w);
  out.put_u16(h);
  out.put_u64(n);
  return out.take();
}

void append_record(std::vector<std::uint8_t>& bytes, std::uint16_t x, std::uint16_t y, std::int8_t p,
                   std::uint64_t t) {
  ByteWriter out;
  out.put_u16(x);
  out.put_u16(y);
  out.put_i8(p);
  out.put_zeros(5);
  out.put_u64(t);
  auto rec = out.take();
  bytes.insert(bytes.end(), rec.begin(), rec.end());
}

Evs1Error::Kind parse_error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_evs1(bytes);
  } catch (const Evs1Error& e) {
    return e.kind();
  }
  FAIL("expected Evs1Error");
  return Evs1Error::Kind::BadMagic;
}

}  // namespace

TEST_CASE("EventStream sorts by timestamp and keeps ties stable") {
  EventStream s(4, 4, {{1, 0, 30, 1}, {2, 0, 10, 1}, {3, 0, 30, -1}, {0, 0, 10, -1}});
  const auto ev = s.events();
  REQUIRE(ev.size() == 4);
  CHECK(ev[0].x == 2);
  CHECK(ev[1].x == 0);
  CHECK(ev[2].x == 1);
  CHECK(ev[3].x == 3);
}

TEST_CASE("EventStream rejects out-of-bounds events and bad polarity") {
  CHECK_THROWS_AS(EventStream(4, 4, {{4, 0, 0, 1}}), InvalidStream);
  CHECK_THROWS_AS(EventStream(4, 4, {{0, 4, 0, 1}}), InvalidStream);
  CHECK_THROWS_AS(EventStream(4, 4, {{0, 0, 0, 0}}), InvalidStream);
}

TEST_CASE("parse_evs1 on hand-built bytes") {
  SUBCASE("empty stream") {
    const auto s = parse_evs1(header(4, 4, 0));
    CHECK(s.width() == 4);
    CHECK(s.height() == 4);
    CHECK(s.empty());
  }
  SUBCASE("single event") {
    auto bytes = header(4, 4, 1);
    append_record(bytes, 2, 3, 1, 10);
    const auto s = parse_evs1(bytes);
    REQUIRE(s.size() == 1);
    CHECK(s.events()[0] == Event{2, 3, 10, 1});
    CHECK(write_evs1(s) == bytes);
  }
  SUBCASE("x outside the sensor") {
    auto bytes = header(4, 4, 1);
    append_record(bytes, 7, 0, 1, 0);
    CHECK(parse_error_kind(bytes) == Evs1Error::Kind::OutOfBoundsEvent);
  }
  SUBCASE("bad magic") {
    auto bytes = header(4, 4, 0);
    bytes[0] = 'X';
    CHECK(parse_error_kind(bytes) == Evs1Error::Kind::BadMagic);
  }
  SUBCASE("polarity zero") {
    auto bytes = header(4, 4, 1);
    append_record(bytes, 0, 0, 0, 0);
    CHECK(parse_error_kind(bytes) == Evs1Error::Kind::BadPolarity);
  }
  SUBCASE("truncated record names its offset") {
    auto bytes = header(4, 4, 2);
    append_record(bytes, 0, 0, 1, 0);
    append_record(bytes, 1, 1, 1, 5);
    bytes.resize(bytes.size() - 3);
    try {
      parse_evs1(bytes);
      FAIL("expected TruncatedRecord");
    } catch (const Evs1Error& e) {
      CHECK(e.kind() == Evs1Error::Kind::TruncatedRecord);
      CHECK(e.offset() == kEvs1HeaderBytes + kEvs1RecordBytes);
    }
  }
  SUBCASE("truncated header") {
    auto bytes = header(4, 4, 0);
    bytes.resize(10);
    CHECK(parse_error_kind(bytes) == Evs1Error::Kind::TruncatedRecord);
  }
  SUBCASE("unsorted records are re-sorted") {
    auto bytes = header(4, 4, 2);
    append_record(bytes, 0, 0, 1, 50);
    append_record(bytes, 1, 1, -1, 5);
    const auto s = parse_evs1(bytes);
    CHECK(s.events()[0].t_us == 5);
    CHECK(s.events()[1].t_us == 50);
  }
}

TEST_CASE("write_evs1 layout") {
  CHECK(write_evs1(EventStream(4, 4, {})).size() == kEvs1HeaderBytes);
  const auto a = write_evs1(EventStream(4, 4, {{1, 1, 5, 1}}));
  const auto b = write_evs1(EventStream(4, 4, {{1, 1, 5, -1}}));
  CHECK(a.size() == kEvs1HeaderBytes + kEvs1RecordBytes);
  CHECK(a != b);
  CHECK(std::memcmp(a.data(), "EVS1", 4) == 0);
}

TEST_CASE("EVS1 round trip over random streams") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 640);
  std::uniform_int_distribution<std::size_t> len(0, 500);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = test::random_stream(rng, dim(rng), dim(rng), len(rng));
    const auto bytes = write_evs1(s);
    CHECK(bytes.size() == kEvs1HeaderBytes + s.size() * kEvs1RecordBytes);
    CHECK(parse_evs1(bytes) == s);
  }
}

TEST_CASE("EVS1 file round trip") {
  test::TempDir dir("evs1");
  std::mt19937_64 rng(3);
  const auto s = test::random_stream(rng, 32, 24, 100);
  write_evs1_file(dir.path() / "a.evs1", s);
  CHECK(read_evs1_file(dir.path() / "a.evs1") == s);
  CHECK_THROWS_AS(read_evs1_file(dir.path() / "missing.evs1"), IoError);
}

TEST_CASE("parse_event_csv") {
  const auto s = parse_event_csv("x,y,t_us,polarity\n1,2,30,1\n0,0,10,-1\n", 4, 4);
  REQUIRE(s.size() == 2);
  CHECK(s.events()[0] == Event{0, 0, 10, -1});
  CHECK(s.events()[1] == Event{1, 2, 30, 1});
  CHECK_THROWS(parse_event_csv("9,0,0,1\n", 4, 4));
}

TEST_CASE("random_window clamps and rebases") {
  std::mt19937_64 rng(1);
  std::vector<Event> ev;
  for (int i = 0; i < 10; ++i) ev.push_back({static_cast<std::uint16_t>(i), 0, 100 + 7u * i, 1});
  const EventStream s(10, 1, ev);

  const auto whole = random_window(s, 10, rng);
  REQUIRE(whole.size() == 10);
  CHECK(whole.events()[0].t_us == 0);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(whole.events()[i].x == s.events()[i].x);
    CHECK(whole.events()[i].t_us == s.events()[i].t_us - 100);
  }
  CHECK(random_window(s, 50000, rng).size() == 10);
  CHECK_THROWS_AS(random_window(EventStream(4, 4, {}), 5, rng), EmptyStream);
}

TEST_CASE("random_window placement is uniform") {
  // Event i sits at pixel (i % 10, i / 10) so the window start is recoverable.
  std::vector<Event> ev;
  for (int i = 0; i < 100; ++i)
    ev.push_back({static_cast<std::uint16_t>(i % 10), static_cast<std::uint16_t>(i / 10), static_cast<std::uint64_t>(i), 1});
  const EventStream s(10, 10, ev);
  std::mt19937_64 rng(2024);
  std::vector<int> hist(61, 0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto w = random_window(s, 40, rng);
    REQUIRE(w.size() == 40);
    const int start = w.events()[0].y * 10 + w.events()[0].x;
    REQUIRE(start >= 0);
    REQUIRE(start <= 60);
    for (int k = 0; k < 40; ++k) REQUIRE(w.events()[k].y * 10 + w.events()[k].x == start + k);
    ++hist[start];
  }
  const double expected = static_cast<double>(draws) / 61.0;
  double chi2 = 0.0;
  for (int c : hist) chi2 += (c - expected) * (c - expected) / expected;
  // 99.9th percentile of chi-square with 60 degrees of freedom.
  CHECK(chi2 < 99.61);
}

TEST_CASE("random_window is deterministic under a fixed seed") {
  std::mt19937_64 gen(5);
  const auto s = test::random_stream(gen, 16, 16, 300);
  std::mt19937_64 a(77), b(77);
  CHECK(random_window(s, 50, a) == random_window(s, 50, b));
}

TEST_CASE("manifest format round trip and validation") {
  DatasetManifest m;
  m.class_names = {"bar", "plus"};
  m.entries = {{"train_c00_0000.evs1", 0, Split::Train},
               {"test_c01_0000.evs1", 1, Split::Test},
               {"train_c01_0000.evs1", 1, Split::Train}};
  const auto text = format_manifest(m);
  CHECK(parse_manifest(text) == m);
  CHECK(m.split(Split::Train).size() == 2);
  CHECK(m.split(Split::Test).size() == 1);

  CHECK(parse_manifest("# comment only\na.evs1\t0\ttrain\n").entries.size() == 1);
  CHECK_THROWS_AS(parse_manifest("a.evs1\t0\tvalidation\n"), ManifestError);
  CHECK_THROWS_AS(parse_manifest("a.evs1\tzero\ttrain\n"), ManifestError);
  CHECK_THROWS_AS(parse_manifest("a.evs1\t0\ttrain\na.evs1\t0\ttest\n"), ManifestError);
  CHECK_THROWS_AS(parse_manifest("a.evs1\t0\ttrain\nb.evs1\t2\ttest\n"), ManifestError);
}
