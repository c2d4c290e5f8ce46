#include "evl/synth_events.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

#include "evl/binary_io.hpp"

namespace evl {

namespace {

constexpr int kSupersample = 4;
// Crossing test slack so that a step of exactly n*C yields n events.
constexpr double kCrossingSlack = 1e-9;

bool in_box(double u, double v, double u0, double u1, double v0, double v1) {
  return u >= u0 && u <= u1 && v >= v0 && v <= v1;
}

bool in_plus(double u, double v) {
  return (std::abs(u) <= 0.9 && std::abs(v) <= 0.18) || (std::abs(v) <= 0.9 && std::abs(u) <= 0.18);
}

// Signed area test against the directed edge a->b.
double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

std::string_view glyph_name(int index) {
  static constexpr std::array<std::string_view, kNumGlyphs> names = {
      "bar", "plus", "cross", "triangle", "frame", "ring", "arc", "ell", "tee", "disk"};
  if (index < 0 || index >= kNumGlyphs) throw std::out_of_range("glyph index out of range");
  return names[index];
}

bool glyph_contains(int index, double u, double v) {
  const double r = std::hypot(u, v);
  switch (index) {
    case 0:  // bar
      return std::abs(u) <= 0.9 && std::abs(v) <= 0.2;
    case 1:
      return in_plus(u, v);
    case 2: {  // plus rotated by 45 degrees
      const double c = std::numbers::sqrt2 / 2.0;
      return in_plus(c * (u + v), c * (v - u));
    }
    case 3: {  // triangle, apex up (image y grows downwards)
      const double ax = 0.0, ay = -0.9, bx = 0.85, by = 0.6, cx = -0.85, cy = 0.6;
      const double e0 = edge(ax, ay, bx, by, u, v);
      const double e1 = edge(bx, by, cx, cy, u, v);
      const double e2 = edge(cx, cy, ax, ay, u, v);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    case 4: {  // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return m >= 0.55 && m <= 0.85;
    }
    case 5:
      return r >= 0.55 && r <= 0.85;
    case 6:  // upper half ring
      return r >= 0.55 && r <= 0.85 && v <= 0.0;
    case 7:
      return in_box(u, v, -0.7, -0.35, -0.85, 0.85) || in_box(u, v, -0.7, 0.75, 0.5, 0.85);
    case 8:
      return in_box(u, v, -0.8, 0.8, -0.85, -0.5) || in_box(u, v, -0.18, 0.18, -0.85, 0.85);
    case 9:
      return r <= 0.7;
    default:
      throw std::out_of_range("glyph index out of range");
  }
}

SaccadePath triangle_saccade(double amplitude, std::uint64_t segment_us, double heading) {
  const double c = std::cos(heading), s = std::sin(heading);
  auto rot = [&](double x, double y) { return Offset2{c * x - s * y, s * x + c * y}; };
  const Offset2 p0 = rot(0, 0), p1 = rot(amplitude, 0), p2 = rot(amplitude / 2, amplitude);
  return SaccadePath{{SaccadeSegment{p0, p1, segment_us}, SaccadeSegment{p1, p2, segment_us},
                      SaccadeSegment{p2, p0, segment_us}}};
}

void validate(const EsimConfig& cfg) {
  if (!(cfg.threshold > 0)) throw std::invalid_argument("esim threshold must be > 0");
  if (cfg.frame_rate < 2) throw std::invalid_argument("esim frame_rate must be >= 2");
  if (!(cfg.noise_rate >= 0)) throw std::invalid_argument("esim noise_rate must be >= 0");
}

IntensityImage render_frame(const SceneSpec& scene, Offset2 offset, int width, int height) {
  if (width < 8 || height < 8) throw std::invalid_argument("render_frame needs at least 8x8 pixels");
  IntensityImage img{width, height, std::vector<double>(static_cast<std::size_t>(width) * height)};
  const double fg = kBackgroundIntensity + scene.contrast * (1.0 - kBackgroundIntensity);
  const double cx = width / 2.0 + offset.x;
  const double cy = height / 2.0 + offset.y;
  const double cr = std::cos(scene.rotation), sr = std::sin(scene.rotation);
  const double inv_scale = 1.0 / scene.scale;
  constexpr double samples = kSupersample * kSupersample;

  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      int hits = 0;
      for (int j = 0; j < kSupersample; ++j) {
        const double dy = (py + (j + 0.5) / kSupersample) - cy;
        for (int i = 0; i < kSupersample; ++i) {
          const double dx = (px + (i + 0.5) / kSupersample) - cx;
          // inverse rotation into glyph-local coordinates
          const double u = (cr * dx + sr * dy) * inv_scale;
          const double v = (-sr * dx + cr * dy) * inv_scale;
          if (std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && glyph_contains(scene.glyph, u, v)) ++hits;
        }
      }
      img.at(px, py) = kBackgroundIntensity + (fg - kBackgroundIntensity) * (hits / samples);
    }
  }
  return img;
}

std::vector<TimedFrame> render_saccade(const SceneSpec& scene, const SaccadePath& path, int width, int height,
                                       int frame_rate) {
  if (frame_rate < 2) throw std::invalid_argument("frame_rate must be >= 2");
  std::vector<TimedFrame> frames;
  std::uint64_t t0 = 0;
  frames.push_back({render_frame(scene, path.segments[0].start, width, height), 0});
  for (const auto& seg : path.segments) {
    if (seg.duration_us == 0) throw std::invalid_argument("saccade segment duration must be > 0");
    for (int k = 1; k <= frame_rate; ++k) {
      const double a = static_cast<double>(k) / frame_rate;
      const Offset2 off{seg.start.x + a * (seg.end.x - seg.start.x), seg.start.y + a * (seg.end.y - seg.start.y)};
      const auto t = t0 + static_cast<std::uint64_t>(std::llround(a * static_cast<double>(seg.duration_us)));
      frames.push_back({render_frame(scene, off, width, height), t});
    }
    t0 += seg.duration_us;
  }
  return frames;
}

EventStream frames_to_events(std::span<const TimedFrame> frames, const EsimConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  if (frames.size() < 2) throw std::invalid_argument("frames_to_events needs at least 2 frames");
  const int w = frames[0].image.width, h = frames[0].image.height;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k].image.width != w || frames[k].image.height != h)
      throw std::invalid_argument("frames_to_events: frame sizes differ");
    if (k > 0 && frames[k].t_us <= frames[k - 1].t_us)
      throw NonMonotonicTimestamps(fmt::format("frame {} timestamp {} does not follow {}", k, frames[k].t_us,
                                               frames[k - 1].t_us));
  }

  const std::size_t n_pix = static_cast<std::size_t>(w) * h;
  auto log_i = [](double v) { return std::log(v + kLogEpsilon); };
  std::vector<double> ref(n_pix);
  for (std::size_t p = 0; p < n_pix; ++p) ref[p] = log_i(frames[0].image.pixels[p]);

  const double c = cfg.threshold;
  std::vector<Event> events;
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const auto& prev = frames[k - 1];
    const auto& cur = frames[k];
    const double t0 = static_cast<double>(prev.t_us);
    const double dt = static_cast<double>(cur.t_us - prev.t_us);
    for (std::size_t p = 0; p < n_pix; ++p) {
      const double l0 = log_i(prev.image.pixels[p]);
      const double l1 = log_i(cur.image.pixels[p]);
      auto crossing_time = [&](double level) {
        const double span = l1 - l0;
        double a = span != 0.0 ? (level - l0) / span : 1.0;
        a = std::clamp(a, 0.0, 1.0);
        return static_cast<std::uint64_t>(std::llround(t0 + a * dt));
      };
      const auto x = static_cast<std::uint16_t>(p % w), y = static_cast<std::uint16_t>(p / w);
      while (l1 - ref[p] >= c - kCrossingSlack) {
        ref[p] += c;
        events.push_back(Event{x, y, crossing_time(ref[p]), 1});
      }
      while (ref[p] - l1 >= c - kCrossingSlack) {
        ref[p] -= c;
        events.push_back(Event{x, y, crossing_time(ref[p]), -1});
      }
    }
  }

  if (cfg.noise_rate > 0) {
    const std::uint64_t t_begin = frames.front().t_us, t_end = frames.back().t_us;
    const double seconds = static_cast<double>(t_end - t_begin) * 1e-6;
    std::poisson_distribution<std::uint64_t> count_dist(cfg.noise_rate * static_cast<double>(n_pix) * seconds);
    const std::uint64_t n_noise = count_dist(rng);
    std::uniform_int_distribution<int> xd(0, w - 1), yd(0, h - 1);
    std::uniform_int_distribution<std::uint64_t> td(t_begin, t_end);
    std::bernoulli_distribution pd(0.5);
    for (std::uint64_t i = 0; i < n_noise; ++i) {
      Event e;
      e.x = static_cast<std::uint16_t>(xd(rng));
      e.y = static_cast<std::uint16_t>(yd(rng));
      e.t_us = td(rng);
      e.polarity = pd(rng) ? 1 : -1;
      events.push_back(e);
    }
  }
  return EventStream(w, h, std::move(events));
}

std::pair<SceneSpec, SaccadePath> sample_scene(int class_id, int width, int height, std::mt19937_64& rng) {
  const double extent = std::min(width, height);
  std::uniform_real_distribution<double> scale_d(0.26 * extent, 0.34 * extent);
  std::uniform_real_distribution<double> rot_d(-0.26, 0.26);
  std::uniform_real_distribution<double> contrast_d(0.5, 1.0);
  std::uniform_real_distribution<double> amp_d(0.08 * extent, 0.12 * extent);
  std::uniform_real_distribution<double> heading_d(-0.3, 0.3);
  std::uniform_int_distribution<std::uint64_t> dur_d(80'000, 120'000);

  SceneSpec scene;
  scene.class_id = class_id;
  scene.glyph = class_id;
  scene.scale = scale_d(rng);
  scene.rotation = rot_d(rng);
  scene.contrast = contrast_d(rng);
  const double amplitude = amp_d(rng);
  const double heading = heading_d(rng);
  auto path = triangle_saccade(amplitude, dur_d(rng), heading);
  // centre the sweep on the sensor
  const Offset2 shift{-amplitude / 2, -amplitude / 2};
  for (auto& seg : path.segments) {
    seg.start = {seg.start.x + shift.x, seg.start.y + shift.y};
    seg.end = {seg.end.x + shift.x, seg.end.y + shift.y};
  }
  return {scene, path};
}

DatasetManifest gen_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  validate(cfg.esim);
  if (cfg.n_classes < 1 || cfg.n_classes > kNumGlyphs)
    throw std::invalid_argument(fmt::format("n_classes must be in 1..{}", kNumGlyphs));
  if (cfg.train_per_class < 0 || cfg.test_per_class < 0)
    throw std::invalid_argument("per-class sample counts must be >= 0");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  for (int c = 0; c < cfg.n_classes; ++c) manifest.class_names.emplace_back(glyph_name(c));

  std::uint64_t sample_index = 0;
  for (Split split : {Split::Train, Split::Test}) {
    const int per_class = split == Split::Train ? cfg.train_per_class : cfg.test_per_class;
    for (int c = 0; c < cfg.n_classes; ++c) {
      for (int i = 0; i < per_class; ++i, ++sample_index) {
        std::mt19937_64 rng(cfg.seed ^ sample_index);
        auto [scene, path] = sample_scene(c, cfg.width, cfg.height, rng);
        auto frames = render_saccade(scene, path, cfg.width, cfg.height, cfg.esim.frame_rate);
        auto events = frames_to_events(frames, cfg.esim, rng);
        EventStream stream(cfg.width, cfg.height, {events.events().begin(), events.events().end()}, c);
        const auto name = fmt::format("{}_c{:02d}_{:04d}.evs1", to_string(split), c, i);
        write_evs1_file(out_dir / name, stream);
        manifest.entries.push_back({name, c, split});
      }
    }
  }
  write_manifest_file(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace evl
