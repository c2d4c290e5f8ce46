#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evl {

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by ByteReader when fewer bytes remain than a field requires.
class TruncatedInput : public std::runtime_error {
 public:
  TruncatedInput(std::size_t offset, std::size_t wanted);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Little-endian append-only byte sink.
class ByteWriter {
 public:
  void put_bytes(std::string_view raw);
  void put_u8(std::uint8_t v) { bytes_.push_back(v); }
  void put_i8(std::int8_t v) { bytes_.push_back(static_cast<std::uint8_t>(v)); }
  void put_u16(std::uint16_t v);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_zeros(std::size_t n) { bytes_.insert(bytes_.end(), n, 0); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian cursor over a byte span. Every getter throws TruncatedInput
/// carrying the offset of the field that could not be read.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::string get_bytes(std::size_t n);
  std::uint8_t get_u8();
  std::int8_t get_i8() { return static_cast<std::int8_t>(get_u8()); }
  std::uint16_t get_u16();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  double get_f64();
  void skip(std::size_t n);

 private:
  void require(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace evl
