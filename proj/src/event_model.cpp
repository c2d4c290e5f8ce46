#include "evl/event_model.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "evl/binary_io.hpp"

namespace evl {

namespace {

constexpr std::string_view kEvs1Magic = "EVS1";

std::string kind_name(Evs1Error::Kind kind) {
  switch (kind) {
    case Evs1Error::Kind::BadMagic:
      return "BadMagic";
    case Evs1Error::Kind::TruncatedRecord:
      return "TruncatedRecord";
    case Evs1Error::Kind::OutOfBoundsEvent:
      return "OutOfBoundsEvent";
    case Evs1Error::Kind::BadPolarity:
      return "BadPolarity";
  }
  return "Unknown";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

EventStream::EventStream(int width, int height, std::vector<Event> events, std::optional<int> label)
    : width_(width), height_(height), events_(std::move(events)), label_(label) {
  if (width <= 0 || height <= 0 || width > 65535 || height > 65535)
    throw InvalidStream("sensor dimensions must be in 1..65535, got " + std::to_string(width) + "x" +
                        std::to_string(height));
  for (std::size_t i = 0; i < events_.size(); ++i) {
    const auto& e = events_[i];
    if (e.x >= width || e.y >= height)
      throw InvalidStream("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                          ") outside " + std::to_string(width) + "x" + std::to_string(height) + " sensor");
    if (e.polarity != 1 && e.polarity != -1)
      throw InvalidStream("event " + std::to_string(i) + " has polarity " + std::to_string(e.polarity));
  }
  std::stable_sort(events_.begin(), events_.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
}

Evs1Error::Evs1Error(Kind kind, std::size_t offset, const std::string& detail)
    : std::runtime_error("EVS1 " + kind_name(kind) + " at byte offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

EventStream parse_evs1(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (bytes.size() < kEvs1Magic.size() ||
      !std::equal(kEvs1Magic.begin(), kEvs1Magic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
    throw Evs1Error(Evs1Error::Kind::BadMagic, 0, "expected \"EVS1\"");
  in.skip(kEvs1Magic.size());

  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::uint64_t count = 0;
  try {
    width = in.get_u16();
    height = in.get_u16();
    count = in.get_u64();
  } catch (const TruncatedInput& e) {
    throw Evs1Error(Evs1Error::Kind::TruncatedRecord, e.offset(), "header incomplete");
  }
  if (width == 0 || height == 0)
    throw Evs1Error(Evs1Error::Kind::OutOfBoundsEvent, 4, "zero sensor dimension");

  const std::size_t available = in.remaining() / kEvs1RecordBytes;
  if (count > available) {
    std::size_t offset = kEvs1HeaderBytes + available * kEvs1RecordBytes;
    throw Evs1Error(Evs1Error::Kind::TruncatedRecord, offset,
                    "header declares " + std::to_string(count) + " events, only " + std::to_string(available) +
                        " complete records present");
  }

  std::vector<Event> events;
  events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t record_offset = in.offset();
    Event e;
    e.x = in.get_u16();
    e.y = in.get_u16();
    e.polarity = in.get_i8();
    in.skip(5);
    e.t_us = in.get_u64();
    if (e.x >= width || e.y >= height)
      throw Evs1Error(Evs1Error::Kind::OutOfBoundsEvent, record_offset,
                      "event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") on " + std::to_string(width) +
                          "x" + std::to_string(height) + " sensor");
    if (e.polarity != 1 && e.polarity != -1)
      throw Evs1Error(Evs1Error::Kind::BadPolarity, record_offset + 4,
                      "polarity " + std::to_string(e.polarity));
    events.push_back(e);
  }
  return EventStream(width, height, std::move(events));
}

std::vector<std::uint8_t> write_evs1(const EventStream& stream) {
  ByteWriter out;
  out.put_bytes(kEvs1Magic);
  out.put_u16(static_cast<std::uint16_t>(stream.width()));
  out.put_u16(static_cast<std::uint16_t>(stream.height()));
  out.put_u64(stream.size());
  for (const auto& e : stream.events()) {
    out.put_u16(e.x);
    out.put_u16(e.y);
    out.put_i8(e.polarity);
    out.put_zeros(5);
    out.put_u64(e.t_us);
  }
  return out.take();
}

EventStream read_evs1_file(const std::filesystem::path& path) { return parse_evs1(read_file(path)); }

void write_evs1_file(const std::filesystem::path& path, const EventStream& stream) {
  write_file(path, write_evs1(stream));
}

EventStream parse_event_csv(std::string_view text, int width, int height) {
  std::vector<Event> events;
  std::size_t line_no = 0;
  bool seen_data = false;
  for (auto raw : split_on(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_on(line, ',');
    std::uint64_t x = 0, y = 0, t = 0;
    int p = 0;
    bool ok = fields.size() == 4 && parse_number(fields[0], x) && parse_number(fields[1], y) &&
              parse_number(fields[2], t) && parse_number(fields[3], p);
    if (!ok) {
      if (!seen_data && line_no == 1) continue;  // header row
      throw InvalidStream("malformed event CSV line " + std::to_string(line_no));
    }
    if (x >= static_cast<std::uint64_t>(width) || y >= static_cast<std::uint64_t>(height))
      throw InvalidStream("event CSV line " + std::to_string(line_no) + " out of bounds");
    if (p != 1 && p != -1) throw InvalidStream("event CSV line " + std::to_string(line_no) + " bad polarity");
    seen_data = true;
    events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t,
                           static_cast<std::int8_t>(p)});
  }
  return EventStream(width, height, std::move(events));
}

EventStream random_window(const EventStream& stream, std::size_t n_events, std::mt19937_64& rng) {
  if (stream.empty()) throw EmptyStream();
  if (n_events == 0) throw std::invalid_argument("window length must be at least 1");
  const auto all = stream.events();
  const std::size_t len = std::min(n_events, all.size());
  std::uniform_int_distribution<std::size_t> start_dist(0, all.size() - len);
  const std::size_t start = start_dist(rng);
  const std::uint64_t t0 = all[start].t_us;
  std::vector<Event> window(all.begin() + static_cast<std::ptrdiff_t>(start),
                            all.begin() + static_cast<std::ptrdiff_t>(start + len));
  for (auto& e : window) e.t_us -= t0;
  return EventStream(stream.width(), stream.height(), std::move(window), stream.label());
}

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

std::vector<ManifestEntry> DatasetManifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == which) out.push_back(e);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  std::set<int> ids;
  for (const auto& e : entries) {
    if (!paths.insert(e.path).second) throw ManifestError("duplicate manifest path " + e.path);
    if (e.class_id < 0) throw ManifestError("negative class id for " + e.path);
    ids.insert(e.class_id);
  }
  const int k = num_classes();
  for (int id : ids)
    if (id >= k)
      throw ManifestError("class id " + std::to_string(id) + " has no name (" + std::to_string(k) + " classes)");
  if (static_cast<int>(ids.size()) != k && !entries.empty())
    throw ManifestError("class ids are not dense 0.." + std::to_string(k - 1));
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  std::vector<std::pair<int, std::string>> names;
  int max_id = -1;
  std::size_t line_no = 0;
  for (auto raw : split_on(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto fields = split_on(line, '\t');
      int id = 0;
      if (fields.size() == 3 && fields[0] == "#class" && parse_number(fields[1], id))
        names.emplace_back(id, std::string(fields[2]));
      continue;
    }
    auto fields = split_on(line, '\t');
    ManifestEntry e;
    if (fields.size() != 3 || !parse_number(fields[1], e.class_id))
      throw ManifestError("manifest line " + std::to_string(line_no) + ": expected path<TAB>class_id<TAB>split");
    e.path = std::string(fields[0]);
    auto split = trim(fields[2]);
    if (split == "train")
      e.split = Split::Train;
    else if (split == "test")
      e.split = Split::Test;
    else
      throw ManifestError("manifest line " + std::to_string(line_no) + ": unknown split '" + std::string(split) + "'");
    max_id = std::max(max_id, e.class_id);
    m.entries.push_back(std::move(e));
  }
  for (const auto& [id, name] : names) max_id = std::max(max_id, id);
  m.class_names.resize(static_cast<std::size_t>(max_id + 1));
  for (int i = 0; i <= max_id; ++i) m.class_names[i] = "class_" + std::to_string(i);
  for (const auto& [id, name] : names)
    if (id >= 0) m.class_names[id] = name;
  m.validate();
  return m;
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out = "# path\tclass_id\tsplit\n";
  for (std::size_t i = 0; i < manifest.class_names.size(); ++i)
    out += "#class\t" + std::to_string(i) + "\t" + manifest.class_names[i] + "\n";
  for (const auto& e : manifest.entries)
    out += e.path + "\t" + std::to_string(e.class_id) + "\t" + std::string(to_string(e.split)) + "\n";
  return out;
}

DatasetManifest read_manifest_file(const std::filesystem::path& path) { return parse_manifest(read_text_file(path)); }

void write_manifest_file(const std::filesystem::path& path, const DatasetManifest& manifest) {
  write_text_file(path, format_manifest(manifest));
}

}  // namespace evl
