#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "evl/event_model.hpp"

namespace evl::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("evl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline EventStream random_stream(std::mt19937_64& rng, int w, int h, std::size_t n) {
  std::uniform_int_distribution<int> xd(0, w - 1), yd(0, h - 1);
  std::uniform_int_distribution<std::uint64_t> td(0, 1'000'000);
  std::bernoulli_distribution pd(0.5);
  std::vector<Event> events(n);
  for (auto& e : events) {
    e.x = static_cast<std::uint16_t>(xd(rng));
    e.y = static_cast<std::uint16_t>(yd(rng));
    e.t_us = td(rng);
    e.polarity = pd(rng) ? 1 : -1;
  }
  return EventStream(w, h, std::move(events));
}

}  // namespace evl::test
