#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "evl/binary_io.hpp"
#include "evl/event_model.hpp"
#include "evl/feature_table.hpp"
#include "evl/harness.hpp"
#include "evl/optim.hpp"

namespace {

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> presets;
  std::string out;
};

evl::ExperimentConfig resolve(const Options& o) {
  evl::ExperimentConfig cfg = o.config.empty() ? evl::parse_config("") : evl::load_config(o.config);
  if (!o.out.empty()) cfg.workspace = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.presets.empty()) {
    for (const auto& p : o.presets) {
      try {
        evl::preset(p);
      } catch (const evl::UnknownPreset&) {
        throw evl::ConfigError(fmt::format("--preset: unknown preset '{}'", p));
      }
    }
    cfg.presets = o.presets;
  }
  return cfg;
}

int run(const std::string& command, const Options& o) {
  const evl::ExperimentConfig cfg = resolve(o);
  if (command == "gen-data") {
    const auto m = evl::stage_gen_data(cfg);
    fmt::print("wrote {} streams to {}\n", m.entries.size(), cfg.data_path().string());
  } else if (command == "pretrain") {
    const auto r = evl::stage_pretrain(cfg);
    if (!r.epoch_losses.empty())
      fmt::print("pretrained {} epochs, final loss {:.4f}\n", r.epoch_losses.size(), r.epoch_losses.back());
    else
      fmt::print("saved untrained encoder\n");
  } else if (command == "extract") {
    const auto [train, test] = evl::stage_extract(cfg);
    fmt::print("extracted {} train and {} test feature rows (dim {})\n", train.rows(), test.rows(), train.dim());
  } else if (command == "cil") {
    const auto r = evl::stage_cil(cfg);
    for (const auto& s : r.summaries)
      fmt::print("{:<10} final accuracy {:6.2f}% +/- {:.2f}\n", s.preset, 100.0 * s.final_mean, 100.0 * s.final_sem);
  } else if (command == "report") {
    fmt::print("wrote {}\n", evl::stage_report(cfg).string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera self-supervised and class-incremental learning pipeline"};
  app.require_subcommand(1);
  Options opts;
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "synthesize the event dataset and manifest"},
      {"pretrain", "contrastive pretraining of the sparse encoder"},
      {"extract", "write standardized feature tables with the frozen encoder"},
      {"cil", "run every (preset, seed) class-incremental experiment"},
      {"report", "render the accuracy-vs-episode SVG from the summary"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "key = value configuration file");
    sub->add_option("--seed", opts.seeds, "run seed (repeatable)")->take_all()->allow_extra_args(false);
    sub->add_option("--preset", opts.presets, "method preset (repeatable)")->allow_extra_args(false);
    sub->add_option("--out", opts.out, "workspace directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opts);
  } catch (const evl::IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
