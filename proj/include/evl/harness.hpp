#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evl/continual.hpp"
#include "evl/ssl_pretrain.hpp"
#include "evl/synth_events.hpp"

namespace evl {

/// Bad configuration or arguments; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of the pipeline. Serialized as flat `key = value` lines with
/// `#` comments; unknown keys are rejected.
struct ExperimentConfig {
  std::string workspace = "evl_out";
  std::string data_dir;  ///< defaults to <workspace>/data

  GenConfig gen;
  HistogramConfig histogram;
  EncoderConfig encoder;
  std::size_t projection_hidden = 64;
  std::size_t projection_dim = 32;
  PretrainConfig pretrain;

  std::vector<std::string> presets = {"BIR", "BIR+SI", "BIR+H", "BIR+SI+H"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t episodes = 5;
  std::size_t classes_per_episode = 2;
  TrainConfig train;
  double si_strength = 1e9;
  double si_damping = 1e-3;
  double tau_bir_h = 0.3;
  double gamma_bir_h = 0.05;
  double tau_bir_si_h = 0.02;
  double gamma_bir_si_h = 0.01;
  int workers = 1;

  /// Preset with this config's hyperparameters applied.
  MethodConfig method(std::string_view preset_name) const;
  std::filesystem::path data_path() const;
};

ExperimentConfig parse_config(std::string_view text);
std::string format_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Pointwise mean and standard error over seeds for one method. SEM uses the
/// n-1 sample deviation and is 0 for a single curve.
struct RunSummary {
  std::string preset;
  std::vector<std::vector<double>> curves;
  std::vector<double> mean;
  std::vector<double> sem;
  double final_mean = 0.0;
  double final_sem = 0.0;
};

RunSummary aggregate(std::string_view preset, std::span<const std::vector<double>> curves);

// ---------------------------------------------------------------------------
// CSV / SVG
// ---------------------------------------------------------------------------

/// Accuracies are written in percent.
std::string format_run_csv(const CilResult& result, const EpisodeSchedule& schedule);
std::string format_log_csv(const CilResult& result);
std::string format_matrix_csv(const CilResult& result);
std::string format_summary_csv(std::span<const RunSummary> summaries);

struct SummaryRow {
  std::string preset;
  int episode = 0;
  double mean_acc = 0.0;
  double sem = 0.0;
};

std::vector<SummaryRow> parse_summary_csv(std::string_view text);

/// 800x500 accuracy-vs-episode chart: one mean polyline and a translucent
/// mean +/- SEM band per preset.
std::string render_report_svg(std::span<const SummaryRow> rows);

// ---------------------------------------------------------------------------
// Pipeline stages used by the CLI
// ---------------------------------------------------------------------------

std::string run_file_stem(std::string_view preset, std::uint64_t seed);

DatasetManifest stage_gen_data(const ExperimentConfig& cfg);
PretrainResult stage_pretrain(const ExperimentConfig& cfg);
/// Writes features/train.evft and features/test.evft, standardized with the
/// training split's per-dimension statistics.
std::pair<FeatureTable, FeatureTable> stage_extract(const ExperimentConfig& cfg);

struct CilRun {
  std::string preset;
  std::uint64_t seed = 0;
  EpisodeSchedule schedule;
  CilResult result;
};

struct CilStageResult {
  std::vector<CilRun> runs;
  std::vector<RunSummary> summaries;
};

/// Runs every (preset, seed) pair on in-memory feature tables.
CilStageResult run_cil_grid(const ExperimentConfig& cfg, const FeatureTable& train, const FeatureTable& test);
/// Reads the feature tables from the workspace and writes cil/runs,
/// cil/logs and cil/summary.csv.
CilStageResult stage_cil(const ExperimentConfig& cfg);
std::filesystem::path stage_report(const ExperimentConfig& cfg);

/// In-place standardization of both tables with the statistics of `train`.
void standardize(FeatureTable& train, FeatureTable& test);

}  // namespace evl
