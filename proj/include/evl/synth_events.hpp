#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "evl/event_model.hpp"

namespace evl {

inline constexpr int kNumGlyphs = 10;

/// Name of parametric glyph `index` (0..kNumGlyphs-1).
std::string_view glyph_name(int index);

/// Whether glyph `index` covers point (u, v) given in glyph-local units,
/// where the glyph roughly spans [-1, 1] on both axes.
bool glyph_contains(int index, double u, double v);

struct SceneSpec {
  int class_id = 0;
  int glyph = 0;
  double scale = 10.0;     ///< glyph half-extent in pixels
  double rotation = 0.0;   ///< radians
  double contrast = 1.0;   ///< in (0, 1]
};

struct Offset2 {
  double x = 0.0;
  double y = 0.0;
};

struct SaccadeSegment {
  Offset2 start;
  Offset2 end;
  std::uint64_t duration_us = 100'000;
};

/// Three consecutive linear sweeps of the glyph across the sensor.
struct SaccadePath {
  std::array<SaccadeSegment, 3> segments;
};

/// Triangle sweep (0,0) -> (a,0) -> (a/2, a) -> (0,0) rotated by `heading`.
SaccadePath triangle_saccade(double amplitude, std::uint64_t segment_us, double heading = 0.0);

struct EsimConfig {
  double threshold = 0.25;   ///< log-intensity contrast threshold C
  int frame_rate = 24;       ///< rendered steps per saccade segment
  double noise_rate = 0.2;   ///< spurious events per pixel per second
};

void validate(const EsimConfig& cfg);

struct IntensityImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  ///< row-major, values in [0, 1]

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const IntensityImage&, const IntensityImage&) = default;
};

struct TimedFrame {
  IntensityImage image;
  std::uint64_t t_us = 0;
};

inline constexpr double kBackgroundIntensity = 0.1;
inline constexpr double kLogEpsilon = 1e-3;

/// Renders the glyph centred at (width/2 + offset.x, height/2 + offset.y)
/// with 4x4 supersampling.
IntensityImage render_frame(const SceneSpec& scene, Offset2 offset, int width, int height);

/// Frames sampled along the path: frame_rate steps per segment plus the
/// initial frame.
std::vector<TimedFrame> render_saccade(const SceneSpec& scene, const SaccadePath& path, int width, int height,
                                       int frame_rate);

class NonMonotonicTimestamps : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Change-threshold camera model: each pixel keeps a reference
/// log-intensity and fires one event per threshold crossing, with crossing
/// times linearly interpolated between frames.
EventStream frames_to_events(std::span<const TimedFrame> frames, const EsimConfig& cfg, std::mt19937_64& rng);

struct GenConfig {
  int n_classes = 10;
  int train_per_class = 20;
  int test_per_class = 5;
  int width = 32;
  int height = 32;
  EsimConfig esim;
  std::uint64_t seed = 1;
};

/// Draws the randomized scene and saccade for one sample.
std::pair<SceneSpec, SaccadePath> sample_scene(int class_id, int width, int height, std::mt19937_64& rng);

/// Writes one EVS1 file per sample plus `manifest.tsv` into `out_dir`.
/// Sample k (in manifest order) uses generator seed `seed ^ k`.
DatasetManifest gen_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace evl
