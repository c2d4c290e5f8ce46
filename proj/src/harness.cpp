#include "evl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <thread>

#include "evl/binary_io.hpp"

namespace evl {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  text = trim(text);
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError(fmt::format("config key '{}': cannot parse '{}'", key, text));
  return v;
}

struct KeyDef {
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T, typename Acc>
KeyDef number(Acc acc) {
  return {[acc](ExperimentConfig& c, std::string_view k, std::string_view v) { acc(c) = parse_value<T>(k, v); },
          [acc](const ExperimentConfig& c) { return fmt::format("{}", acc(const_cast<ExperimentConfig&>(c))); }};
}

template <typename Acc>
KeyDef text(Acc acc) {
  return {[acc](ExperimentConfig& c, std::string_view, std::string_view v) { acc(c) = std::string(trim(v)); },
          [acc](const ExperimentConfig& c) { return acc(const_cast<ExperimentConfig&>(c)); }};
}

const std::vector<std::pair<std::string, KeyDef>>& key_table() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, KeyDef>> table = {
      {"workspace", text([](C& c) -> std::string& { return c.workspace; })},
      {"data_dir", text([](C& c) -> std::string& { return c.data_dir; })},
      {"n_classes", number<int>([](C& c) -> int& { return c.gen.n_classes; })},
      {"train_per_class", number<int>([](C& c) -> int& { return c.gen.train_per_class; })},
      {"test_per_class", number<int>([](C& c) -> int& { return c.gen.test_per_class; })},
      {"width", number<int>([](C& c) -> int& { return c.gen.width; })},
      {"height", number<int>([](C& c) -> int& { return c.gen.height; })},
      {"data_seed", number<std::uint64_t>([](C& c) -> std::uint64_t& { return c.gen.seed; })},
      {"esim_threshold", number<double>([](C& c) -> double& { return c.gen.esim.threshold; })},
      {"esim_frame_rate", number<int>([](C& c) -> int& { return c.gen.esim.frame_rate; })},
      {"esim_noise_rate", number<double>([](C& c) -> double& { return c.gen.esim.noise_rate; })},
      {"window", number<std::size_t>([](C& c) -> std::size_t& { return c.histogram.window; })},
      {"clip", number<std::uint32_t>([](C& c) -> std::uint32_t& { return c.histogram.clip; })},
      {"enc_conv1", number<std::size_t>([](C& c) -> std::size_t& { return c.encoder.conv1_channels; })},
      {"enc_conv2", number<std::size_t>([](C& c) -> std::size_t& { return c.encoder.conv2_channels; })},
      {"enc_kernel", number<int>([](C& c) -> int& { return c.encoder.kernel; })},
      {"feature_dim", number<std::size_t>([](C& c) -> std::size_t& { return c.encoder.feature_dim; })},
      {"proj_hidden", number<std::size_t>([](C& c) -> std::size_t& { return c.projection_hidden; })},
      {"proj_dim", number<std::size_t>([](C& c) -> std::size_t& { return c.projection_dim; })},
      {"ssl_epochs", number<int>([](C& c) -> int& { return c.pretrain.epochs; })},
      {"ssl_batch", number<std::size_t>([](C& c) -> std::size_t& { return c.pretrain.batch_size; })},
      {"ssl_temperature", number<double>([](C& c) -> double& { return c.pretrain.temperature; })},
      {"ssl_lr", number<double>([](C& c) -> double& { return c.pretrain.lr; })},
      {"ssl_seed", number<std::uint64_t>([](C& c) -> std::uint64_t& { return c.pretrain.seed; })},
      {"aug_crop_min", number<double>([](C& c) -> double& { return c.pretrain.augment.crop_scale_min; })},
      {"aug_crop_max", number<double>([](C& c) -> double& { return c.pretrain.augment.crop_scale_max; })},
      {"aug_flip_p", number<double>([](C& c) -> double& { return c.pretrain.augment.flip_p; })},
      {"aug_dropout_p", number<double>([](C& c) -> double& { return c.pretrain.augment.dropout_p; })},
      {"aug_jitter_min", number<double>([](C& c) -> double& { return c.pretrain.augment.jitter_min; })},
      {"aug_jitter_max", number<double>([](C& c) -> double& { return c.pretrain.augment.jitter_max; })},
      {"presets",
       {[](C& c, std::string_view k, std::string_view v) {
          c.presets.clear();
          for (auto p : split(v, ',')) {
            auto name = std::string(trim(p));
            try {
              preset(name);
            } catch (const UnknownPreset&) {
              throw ConfigError(fmt::format("config key '{}': unknown preset '{}'", k, name));
            }
            c.presets.push_back(name);
          }
        },
        [](const C& c) { return fmt::format("{}", fmt::join(c.presets, ",")); }}},
      {"seeds",
       {[](C& c, std::string_view k, std::string_view v) {
          c.seeds.clear();
          for (auto p : split(v, ',')) c.seeds.push_back(parse_value<std::uint64_t>(k, p));
        },
        [](const C& c) { return fmt::format("{}", fmt::join(c.seeds, ",")); }}},
      {"episodes", number<std::size_t>([](C& c) -> std::size_t& { return c.episodes; })},
      {"classes_per_episode", number<std::size_t>([](C& c) -> std::size_t& { return c.classes_per_episode; })},
      {"cil_batch", number<std::size_t>([](C& c) -> std::size_t& { return c.train.batch_size; })},
      {"cil_lr", number<double>([](C& c) -> double& { return c.train.lr; })},
      {"cil_steps", number<int>([](C& c) -> int& { return c.train.steps_per_episode; })},
      {"vae_hidden", number<std::size_t>([](C& c) -> std::size_t& { return c.train.vae.hidden; })},
      {"vae_latent", number<std::size_t>([](C& c) -> std::size_t& { return c.train.vae.latent; })},
      {"kl_weight", number<double>([](C& c) -> double& { return c.train.vae.kl_weight; })},
      {"si_strength", number<double>([](C& c) -> double& { return c.si_strength; })},
      {"si_damping", number<double>([](C& c) -> double& { return c.si_damping; })},
      {"tau_bir_h", number<double>([](C& c) -> double& { return c.tau_bir_h; })},
      {"gamma_bir_h", number<double>([](C& c) -> double& { return c.gamma_bir_h; })},
      {"tau_bir_si_h", number<double>([](C& c) -> double& { return c.tau_bir_si_h; })},
      {"gamma_bir_si_h", number<double>([](C& c) -> double& { return c.gamma_bir_si_h; })},
      {"workers", number<int>([](C& c) -> int& { return c.workers; })},
  };
  return table;
}

void check_config(const ExperimentConfig& c) {
  auto fail = [](std::string_view key, std::string_view why) {
    throw ConfigError(fmt::format("config key '{}': {}", key, why));
  };
  if (c.workspace.empty()) fail("workspace", "must not be empty");
  if (c.gen.n_classes < 1 || c.gen.n_classes > kNumGlyphs) fail("n_classes", "must be in 1..10");
  if (c.gen.width < 8 || c.gen.height < 8) fail("width", "sensor must be at least 8x8");
  if (c.gen.esim.threshold <= 0) fail("esim_threshold", "must be > 0");
  if (c.gen.esim.frame_rate < 2) fail("esim_frame_rate", "must be >= 2");
  if (c.gen.esim.noise_rate < 0) fail("esim_noise_rate", "must be >= 0");
  if (c.histogram.window < 1) fail("window", "must be >= 1");
  if (c.histogram.clip < 1) fail("clip", "must be >= 1");
  if (c.encoder.kernel < 1 || c.encoder.kernel % 2 == 0) fail("enc_kernel", "must be odd");
  if (c.projection_dim < 2) fail("proj_dim", "must be >= 2");
  if (c.pretrain.batch_size < 2) fail("ssl_batch", "must be >= 2");
  if (c.pretrain.temperature <= 0) fail("ssl_temperature", "must be > 0");
  try {
    c.pretrain.augment.validate();
  } catch (const std::invalid_argument& e) {
    fail("aug_*", e.what());
  }
  if (c.seeds.empty()) fail("seeds", "needs at least one seed");
  if (c.presets.empty()) fail("presets", "needs at least one preset");
  if (c.episodes == 0 || c.classes_per_episode == 0) fail("episodes", "schedule must be non-empty");
  if (c.episodes * c.classes_per_episode > static_cast<std::size_t>(c.gen.n_classes))
    fail("episodes", "episodes x classes_per_episode exceeds n_classes");
  if (c.train.batch_size < 1) fail("cil_batch", "must be >= 1");
  if (c.train.steps_per_episode < 0) fail("cil_steps", "must be >= 0");
  if (c.tau_bir_h < 0 || c.tau_bir_h >= 1) fail("tau_bir_h", "must be in [0, 1)");
  if (c.tau_bir_si_h < 0 || c.tau_bir_si_h >= 1) fail("tau_bir_si_h", "must be in [0, 1)");
  if (c.gamma_bir_h <= 0 || c.gamma_bir_h > 1) fail("gamma_bir_h", "must be in (0, 1]");
  if (c.gamma_bir_si_h <= 0 || c.gamma_bir_si_h > 1) fail("gamma_bir_si_h", "must be in (0, 1]");
  if (c.workers < 1) fail("workers", "must be >= 1");
}

std::string fmt_pct(double fraction) { return fmt::format("{:.4f}", 100.0 * fraction); }

void ensure_dir(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void require_file(const std::filesystem::path& p, std::string_view what) {
  if (!std::filesystem::exists(p)) throw IoError(fmt::format("missing {}: {}", what, p.string()));
}

std::filesystem::path encoder_path(const ExperimentConfig& cfg) { return std::filesystem::path(cfg.workspace) / "encoder.evck"; }
std::filesystem::path features_dir(const ExperimentConfig& cfg) { return std::filesystem::path(cfg.workspace) / "features"; }
std::filesystem::path cil_dir(const ExperimentConfig& cfg) { return std::filesystem::path(cfg.workspace) / "cil"; }

}  // namespace

MethodConfig ExperimentConfig::method(std::string_view preset_name) const {
  MethodConfig m = preset(preset_name);
  m.si_strength = si_strength;
  m.si_damping = si_damping;
  if (m.name == "BIR+H") {
    m.tau = tau_bir_h;
    m.gamma = gamma_bir_h;
  } else if (m.name == "BIR+SI+H") {
    m.tau = tau_bir_si_h;
    m.gamma = gamma_bir_si_h;
  }
  return m;
}

std::filesystem::path ExperimentConfig::data_path() const {
  return data_dir.empty() ? std::filesystem::path(workspace) / "data" : std::filesystem::path(data_dir);
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  const auto& table = key_table();
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("config line {}: expected key = value", line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& kv) { return kv.first == key; });
    if (it == table.end()) throw ConfigError(fmt::format("config line {}: unknown key '{}'", line_no, key));
    it->second.set(cfg, key, value);
  }
  check_config(cfg);
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, def] : key_table()) out += fmt::format("{} = {}\n", key, def.get(cfg));
  return out;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text_file(path)); }

// ---------------------------------------------------------------------------

RunSummary aggregate(std::string_view preset_name, std::span<const std::vector<double>> curves) {
  if (curves.empty()) throw LengthMismatch("aggregate needs at least one curve");
  const std::size_t len = curves[0].size();
  for (const auto& c : curves)
    if (c.size() != len) throw LengthMismatch(fmt::format("curve lengths differ: {} vs {}", c.size(), len));
  RunSummary s;
  s.preset = std::string(preset_name);
  s.curves.assign(curves.begin(), curves.end());
  const double n = static_cast<double>(curves.size());
  for (std::size_t e = 0; e < len; ++e) {
    double m = 0.0;
    for (const auto& c : curves) m += c[e];
    m /= n;
    double var = 0.0;
    for (const auto& c : curves) var += (c[e] - m) * (c[e] - m);
    const double sem = curves.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
    s.mean.push_back(m);
    s.sem.push_back(sem);
  }
  if (len > 0) {
    s.final_mean = s.mean.back();
    s.final_sem = s.sem.back();
  }
  return s;
}

std::string format_run_csv(const CilResult& result, const EpisodeSchedule& schedule) {
  std::string out = "episode,seen_classes,accuracy\n";
  std::size_t seen = 0;
  for (std::size_t e = 0; e < result.seen_accuracy.size(); ++e) {
    seen += schedule.episodes[e].size();
    out += fmt::format("{},{},{}\n", e + 1, seen, fmt_pct(result.seen_accuracy[e]));
  }
  return out;
}

std::string format_log_csv(const CilResult& result) {
  std::string out = "episode,step,total,classification,replay,vae,si\n";
  for (const auto& s : result.log)
    out += fmt::format("{},{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g}\n", s.episode, s.step, s.total, s.classification,
                       s.replay, s.vae, s.si);
  return out;
}

std::string format_matrix_csv(const CilResult& result) {
  std::string out = "episode,eval_episode,accuracy\n";
  for (std::size_t e = 0; e < result.matrix.size(); ++e)
    for (std::size_t j = 0; j < result.matrix[e].size(); ++j)
      out += fmt::format("{},{},{}\n", e + 1, j + 1, fmt_pct(result.matrix[e][j]));
  return out;
}

std::string format_summary_csv(std::span<const RunSummary> summaries) {
  std::string out = "preset,episode,mean_acc,sem\n";
  for (const auto& s : summaries)
    for (std::size_t e = 0; e < s.mean.size(); ++e)
      out += fmt::format("{},{},{},{}\n", s.preset, e + 1, fmt_pct(s.mean[e]), fmt_pct(s.sem[e]));
  return out;
}

std::vector<SummaryRow> parse_summary_csv(std::string_view text) {
  std::vector<SummaryRow> rows;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = trim(raw);
    if (line.empty() || (line_no == 1 && line.starts_with("preset"))) continue;
    auto f = split(line, ',');
    if (f.size() != 4) throw ConfigError(fmt::format("summary line {}: expected 4 fields", line_no));
    rows.push_back({std::string(trim(f[0])), parse_value<int>("episode", f[1]), parse_value<double>("mean_acc", f[2]),
                    parse_value<double>("sem", f[3])});
  }
  return rows;
}

std::string render_report_svg(std::span<const SummaryRow> rows) {
  constexpr double kW = 800, kH = 500, left = 70, right = 170, top = 40, bottom = 60;
  const double pw = kW - left - right, ph = kH - top - bottom;
  static constexpr std::string_view palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

  std::vector<std::string> order;
  int max_ep = 1;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.preset) == order.end()) order.push_back(r.preset);
    max_ep = std::max(max_ep, r.episode);
  }
  auto px = [&](double ep) { return left + (max_ep > 1 ? (ep - 1) / (max_ep - 1) : 0.5) * pw; };
  auto py = [&](double acc) { return top + (1.0 - std::clamp(acc, 0.0, 100.0) / 100.0) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      kW, kH);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, top + ph, left + pw);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, top + ph);
  for (int a = 0; a <= 100; a += 20)
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n", left - 8,
                       py(a) + 4, a);
  for (int e = 1; e <= max_ep; ++e)
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n", px(e),
                       top + ph + 18, e);
  svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"14\" text-anchor=\"middle\">episode</text>\n",
                     left + pw / 2, kH - 15);
  svg += fmt::format(
      "<text x=\"18\" y=\"{:.1f}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1f})\">"
      "test accuracy (%)</text>\n",
      top + ph / 2, top + ph / 2);

  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto colour = palette[k % std::size(palette)];
    std::vector<SummaryRow> pts;
    for (const auto& r : rows)
      if (r.preset == order[k]) pts.push_back(r);
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.episode < b.episode; });
    std::string band, line;
    for (const auto& p : pts) band += fmt::format("{:.2f},{:.2f} ", px(p.episode), py(p.mean_acc + p.sem));
    for (auto it = pts.rbegin(); it != pts.rend(); ++it)
      band += fmt::format("{:.2f},{:.2f} ", px(it->episode), py(it->mean_acc - it->sem));
    for (const auto& p : pts) line += fmt::format("{:.2f},{:.2f} ", px(p.episode), py(p.mean_acc));
    svg += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", trim(band), colour);
    svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", trim(line), colour);
    const double ly = top + 20 + 22.0 * static_cast<double>(k);
    svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"3\"/>\n",
                       left + pw + 15, ly, left + pw + 40, ly, colour);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"13\">{}</text>\n", left + pw + 48, ly + 4, order[k]);
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------

std::string run_file_stem(std::string_view preset_name, std::uint64_t seed) {
  std::string stem(preset_name);
  std::replace(stem.begin(), stem.end(), '+', '_');
  return fmt::format("{}_seed{}", stem, seed);
}

DatasetManifest stage_gen_data(const ExperimentConfig& cfg) { return gen_dataset(cfg.gen, cfg.data_path()); }

PretrainResult stage_pretrain(const ExperimentConfig& cfg) {
  const auto manifest = cfg.data_path() / "manifest.tsv";
  require_file(manifest, "dataset manifest");
  const EventDataset data = load_dataset(manifest, Split::Train);
  SparseEncoder encoder(cfg.encoder, cfg.pretrain.seed);
  ProjectionHead head(cfg.encoder.feature_dim, cfg.projection_hidden, cfg.projection_dim, cfg.pretrain.seed + 1);
  PretrainConfig pc = cfg.pretrain;
  pc.histogram = cfg.histogram;
  PretrainResult result = pretrain(data, encoder, head, pc);
  ensure_dir(cfg.workspace);
  save_checkpoint(encoder_path(cfg), std::as_const(encoder).parameters());
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
    csv += fmt::format("{},{:.6f}\n", e + 1, result.epoch_losses[e]);
  write_text_file(std::filesystem::path(cfg.workspace) / "pretrain_loss.csv", csv);
  return result;
}

void standardize(FeatureTable& train, FeatureTable& test) {
  const std::size_t dim = train.dim();
  if (train.rows() == 0) return;
  if (test.dim() != dim && test.rows() > 0) throw ShapeMismatch("standardize", train.features.shape(), test.features.shape());
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  const double n = static_cast<double>(train.rows());
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t d = 0; d < dim; ++d) mu[d] += train.row(i)[d] / n;
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t d = 0; d < dim; ++d) sd[d] += (train.row(i)[d] - mu[d]) * (train.row(i)[d] - mu[d]) / n;
  for (auto& s : sd) s = std::sqrt(s) + 1e-8;
  for (FeatureTable* t : {&train, &test})
    for (std::size_t i = 0; i < t->rows(); ++i)
      for (std::size_t d = 0; d < dim; ++d) t->features[i * dim + d] = (t->features[i * dim + d] - mu[d]) / sd[d];
}

std::pair<FeatureTable, FeatureTable> stage_extract(const ExperimentConfig& cfg) {
  const auto manifest = cfg.data_path() / "manifest.tsv";
  require_file(manifest, "dataset manifest");
  require_file(encoder_path(cfg), "encoder checkpoint (run `pretrain` first)");
  SparseEncoder encoder(cfg.encoder, cfg.pretrain.seed);
  load_checkpoint(encoder_path(cfg), encoder.parameters());
  FeatureTable train = extract_features(load_dataset(manifest, Split::Train), encoder, cfg.histogram);
  FeatureTable test = extract_features(load_dataset(manifest, Split::Test), encoder, cfg.histogram);
  standardize(train, test);
  ensure_dir(features_dir(cfg));
  write_evft_file(features_dir(cfg) / "train.evft", train);
  write_evft_file(features_dir(cfg) / "test.evft", test);
  return {std::move(train), std::move(test)};
}

CilStageResult run_cil_grid(const ExperimentConfig& cfg, const FeatureTable& train, const FeatureTable& test) {
  std::vector<std::uint32_t> classes;
  for (auto l : train.labels)
    if (std::find(classes.begin(), classes.end(), l) == classes.end()) classes.push_back(l);
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw ConfigError("feature table has no rows");

  TrainConfig tc = cfg.train;
  tc.vae.feature_dim = train.dim();
  tc.vae.n_classes = classes.back() + 1;

  CilStageResult out;
  for (const auto& p : cfg.presets)
    for (auto seed : cfg.seeds) {
      CilRun run;
      run.preset = p;
      run.seed = seed;
      run.schedule = make_schedule(classes, cfg.episodes, cfg.classes_per_episode, seed);
      out.runs.push_back(std::move(run));
    }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < out.runs.size(); i = next++) {
      try {
        auto& run = out.runs[i];
        run.result = run_cil(train, test, run.schedule, cfg.method(run.preset), tc, run.seed);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto n_workers = static_cast<std::size_t>(std::max(1, cfg.workers));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(n_workers, out.runs.size()); ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& p : cfg.presets) {
    std::vector<std::vector<double>> curves;
    for (const auto& run : out.runs)
      if (run.preset == p) curves.push_back(run.result.seen_accuracy);
    out.summaries.push_back(aggregate(p, curves));
  }
  return out;
}

CilStageResult stage_cil(const ExperimentConfig& cfg) {
  const auto fdir = features_dir(cfg);
  require_file(fdir / "train.evft", "feature table (run `extract` first)");
  require_file(fdir / "test.evft", "feature table (run `extract` first)");
  const FeatureTable train = read_evft_file(fdir / "train.evft");
  const FeatureTable test = read_evft_file(fdir / "test.evft");
  CilStageResult out = run_cil_grid(cfg, train, test);

  const auto dir = cil_dir(cfg);
  ensure_dir(dir / "runs");
  ensure_dir(dir / "logs");
  for (const auto& run : out.runs) {
    const auto stem = run_file_stem(run.preset, run.seed);
    write_text_file(dir / "runs" / (stem + ".csv"), format_run_csv(run.result, run.schedule));
    write_text_file(dir / "logs" / (stem + ".csv"), format_log_csv(run.result));
    write_text_file(dir / "logs" / (stem + "_matrix.csv"), format_matrix_csv(run.result));
  }
  write_text_file(dir / "summary.csv", format_summary_csv(out.summaries));
  return out;
}

std::filesystem::path stage_report(const ExperimentConfig& cfg) {
  const auto summary = cil_dir(cfg) / "summary.csv";
  require_file(summary, "summary CSV (run `cil` first)");
  const auto rows = parse_summary_csv(read_text_file(summary));
  const auto out = cil_dir(cfg) / "report.svg";
  write_text_file(out, render_report_svg(rows));
  return out;
}

}  // namespace evl
