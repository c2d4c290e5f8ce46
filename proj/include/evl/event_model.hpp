#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evl {

/// A single brightness-change event. Polarity is +1 (brighter) or -1 (darker).
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t_us = 0;
  std::int8_t polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Raised when an EventStream would violate its invariants.
class InvalidStream : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Time-ordered events on a width x height sensor. Construction validates
/// bounds and polarity and stable-sorts by timestamp; the object is
/// immutable afterwards.
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::vector<Event> events, std::optional<int> label = std::nullopt);

  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  const std::optional<int>& label() const { return label_; }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
  std::optional<int> label_;
};

// ---------------------------------------------------------------------------
// EVS1 binary format
// ---------------------------------------------------------------------------

class Evs1Error : public std::runtime_error {
 public:
  enum class Kind { BadMagic, TruncatedRecord, OutOfBoundsEvent, BadPolarity };

  Evs1Error(Kind kind, std::size_t offset, const std::string& detail);
  Kind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  Kind kind_;
  std::size_t offset_;
};

inline constexpr std::size_t kEvs1HeaderBytes = 16;
inline constexpr std::size_t kEvs1RecordBytes = 18;

EventStream parse_evs1(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_evs1(const EventStream& stream);

EventStream read_evs1_file(const std::filesystem::path& path);
void write_evs1_file(const std::filesystem::path& path, const EventStream& stream);

/// Reads `x,y,t_us,polarity` lines. Blank lines, `#` comments and a
/// non-numeric header line are skipped.
EventStream parse_event_csv(std::string_view text, int width, int height);

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

class EmptyStream : public std::invalid_argument {
 public:
  EmptyStream() : std::invalid_argument("cannot take a window of an empty event stream") {}
};

/// Returns min(n_events, size) consecutive events starting at a uniformly
/// drawn index, with timestamps shifted so the first event is at t=0.
EventStream random_window(const EventStream& stream, std::size_t n_events, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

enum class Split { Train, Test };

std::string_view to_string(Split split);

struct ManifestEntry {
  std::string path;
  int class_id = 0;
  Split split = Split::Train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Labelled list of event files. Paths are relative to the manifest file's
/// directory unless absolute.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<ManifestEntry> split(Split which) const;

  /// Throws ManifestError unless class ids are dense 0..K-1 and paths unique.
  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest parse_manifest(std::string_view text);
std::string format_manifest(const DatasetManifest& manifest);

DatasetManifest read_manifest_file(const std::filesystem::path& path);
void write_manifest_file(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace evl
