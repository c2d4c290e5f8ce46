#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "blobs.hpp"
#include "evl/binary_io.hpp"
#include "evl/harness.hpp"
#include "test_util.hpp"

using namespace evl;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_grid_config(std::size_t dim) {
  ExperimentConfig cfg;
  cfg.episodes = 2;
  cfg.classes_per_episode = 2;
  cfg.train = test::small_train_config(dim, 4, 10);
  return cfg;
}

}  // namespace

TEST_CASE("aggregate") {
  const std::vector<std::vector<double>> three{{0.5, 10.0}, {0.7, 20.0}, {0.9, 30.0}};
  const auto s = aggregate("BIR", three);
  CHECK(s.preset == "BIR");
  CHECK(s.final_mean == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(s.final_sem == doctest::Approx(10.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(std::abs(s.final_sem - 5.7735) < 1e-4);
  CHECK(s.mean[0] == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(s.sem[0] == doctest::Approx(0.2 / std::sqrt(3.0)).epsilon(1e-12));

  const std::vector<std::vector<double>> same{{0.3, 0.4}, {0.3, 0.4}};
  const auto z = aggregate("X", same);
  CHECK(z.sem == std::vector<double>{0.0, 0.0});

  const std::vector<std::vector<double>> one{{0.1, 0.2, 0.3}};
  const auto o = aggregate("X", one);
  CHECK(o.mean == one[0]);
  CHECK(o.sem == std::vector<double>{0.0, 0.0, 0.0});

  const std::vector<std::vector<double>> ragged{{0.1, 0.2}, {0.1}};
  CHECK_THROWS_AS(aggregate("X", ragged), LengthMismatch);
  CHECK_THROWS(aggregate("X", std::vector<std::vector<double>>{}));
}

TEST_CASE("config parse and format round trip") {
  const auto defaults = parse_config("");
  CHECK(defaults.presets == std::vector<std::string>{"BIR", "BIR+SI", "BIR+H", "BIR+SI+H"});
  CHECK(defaults.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(defaults.si_strength == 1e9);

  const auto cfg = parse_config(
      "# comment\n"
      "workspace = /tmp/somewhere\n"
      "n_classes = 6   # trailing\n"
      "episodes = 3\n"
      "presets = NONE, BIR+SI+H\n"
      "seeds = 4,5\n"
      "ssl_temperature = 0.25\n"
      "\n"
      "tau_bir_h = 0.1\n");
  CHECK(cfg.workspace == "/tmp/somewhere");
  CHECK(cfg.gen.n_classes == 6);
  CHECK(cfg.presets == std::vector<std::string>{"NONE", "BIR+SI+H"});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(cfg.pretrain.temperature == 0.25);
  CHECK(cfg.method("BIR+H").tau == 0.1);
  CHECK(cfg.method("BIR+SI+H").tau == 0.02);

  const auto text = format_config(cfg);
  CHECK(format_config(parse_config(text)) == text);
}

TEST_CASE("config errors name the offending key") {
  try {
    parse_config("n_classes = 4\nlearning_rate = 0.1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("presets = BIR, FOO\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ssl_temperature = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("n_classes = four\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("episodes = 6\nclasses_per_episode = 2\n"), ConfigError);
}

TEST_CASE("CSV formats") {
  CilResult r;
  r.matrix = {{0.9}, {0.25, 0.5}};
  r.seen_accuracy = {0.9, 0.375};
  r.final_accuracy = 0.375;
  const EpisodeSchedule s{{{4, 1}, {0, 2}}, 0};
  CHECK(format_run_csv(r, s) == "episode,seen_classes,accuracy\n1,2,90.0000\n2,4,37.5000\n");
  CHECK(format_matrix_csv(r) == "episode,eval_episode,accuracy\n1,1,90.0000\n2,1,25.0000\n2,2,50.0000\n");

  const std::vector<RunSummary> sums{aggregate("BIR", std::vector<std::vector<double>>{{0.5, 0.25}})};
  const auto csv = format_summary_csv(sums);
  CHECK(csv == "preset,episode,mean_acc,sem\nBIR,1,50.0000,0.0000\nBIR,2,25.0000,0.0000\n");
  const auto rows = parse_summary_csv(csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].preset == "BIR");
  CHECK(rows[1].episode == 2);
  CHECK(rows[1].mean_acc == 25.0);
  CHECK_THROWS_AS(parse_summary_csv("preset,episode,mean_acc,sem\nBIR,1,2\n"), ConfigError);
}

TEST_CASE("report SVG") {
  std::vector<SummaryRow> rows;
  for (std::string p : {"BIR", "BIR+SI", "BIR+H"})
    for (int e = 1; e <= 3; ++e) rows.push_back({p, e, 10.0 * e, 0.0});
  const auto svg = render_report_svg(rows);
  CHECK(svg.find("width=\"800\" height=\"500\"") != std::string::npos);
  CHECK(count_of(svg, "<polyline") == 3);
  CHECK(count_of(svg, "<polygon") == 3);
  for (std::string p : {">BIR<", ">BIR+SI<", ">BIR+H<"}) CHECK(count_of(svg, p) == 1);

  // With SEM 0 the band's upper edge, reversed, is its lower edge.
  const std::regex poly("<polygon points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  std::vector<std::string> pts;
  std::istringstream in(m[1].str());
  for (std::string p; in >> p;) pts.push_back(p);
  REQUIRE(pts.size() == 6);
  for (std::size_t i = 0; i < 3; ++i) CHECK(pts[i] == pts[5 - i]);
}

TEST_CASE("run file stems") {
  CHECK(run_file_stem("BIR+SI+H", 3) == "BIR_SI_H_seed3");
  CHECK(run_file_stem("NONE", 12) == "NONE_seed12");
}

TEST_CASE("standardize uses training statistics") {
  FeatureTable train, test_t;
  train.features = Tensor({2, 2}, std::vector<double>{1.0, 5.0, 3.0, 5.0});
  train.labels = {0, 1};
  test_t.features = Tensor({1, 2}, std::vector<double>{2.0, 7.0});
  test_t.labels = {0};
  standardize(train, test_t);
  CHECK(train.features.at(0, 0) == doctest::Approx(-1.0));
  CHECK(train.features.at(1, 0) == doctest::Approx(1.0));
  CHECK(test_t.features.at(0, 0) == doctest::Approx(0.0));
  CHECK(std::isfinite(test_t.features.at(0, 1)));
}

TEST_CASE("CIL grid runs every preset and seed and ignores worker count") {
  auto [train, test_t] = test::blob_tables(4, 10, 5, 6, 1);
  auto cfg = small_grid_config(6);
  const auto serial = run_cil_grid(cfg, train, test_t);
  REQUIRE(serial.runs.size() == 12);
  REQUIRE(serial.summaries.size() == 4);
  for (const auto& s : serial.summaries) {
    CHECK(s.curves.size() == 3);
    CHECK(s.mean.size() == 2);
  }
  for (const auto& run : serial.runs) CHECK(run.result.final_accuracy == run.result.seen_accuracy.back());

  cfg.workers = 3;
  const auto parallel = run_cil_grid(cfg, train, test_t);
  REQUIRE(parallel.runs.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(parallel.runs[i].preset == serial.runs[i].preset);
    CHECK(parallel.runs[i].seed == serial.runs[i].seed);
    CHECK(test::same_result(parallel.runs[i].result, serial.runs[i].result));
  }
}

TEST_CASE("summary final accuracy matches the last matrix row of each run") {
  auto [train, test_t] = test::blob_tables(4, 10, 5, 6, 2);
  auto cfg = small_grid_config(6);
  cfg.presets = {"NONE", "BIR"};
  const auto grid = run_cil_grid(cfg, train, test_t);
  for (const auto& s : grid.summaries) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& run : grid.runs) {
      if (run.preset != s.preset) continue;
      // Seen-class accuracy after the last episode, weighted by class count per episode.
      const auto& last = run.result.matrix.back();
      double weighted = 0.0, classes = 0.0;
      for (std::size_t j = 0; j < last.size(); ++j) {
        weighted += last[j] * static_cast<double>(run.schedule.episodes[j].size());
        classes += static_cast<double>(run.schedule.episodes[j].size());
      }
      CHECK(run.result.final_accuracy == doctest::Approx(weighted / classes).epsilon(1e-12));
      total += run.result.final_accuracy;
      ++n;
    }
    CHECK(s.final_mean == doctest::Approx(total / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("stages report missing inputs and write reproducible CSVs") {
  test::TempDir dir("harness");
  auto [train, test_t] = test::blob_tables(4, 10, 5, 6, 3);
  auto cfg = small_grid_config(6);
  cfg.workspace = dir.path().string();
  CHECK_THROWS_AS(stage_cil(cfg), IoError);
  CHECK_THROWS_AS(stage_report(cfg), IoError);

  std::filesystem::create_directories(dir.path() / "features");
  write_evft_file(dir.path() / "features" / "train.evft", train);
  write_evft_file(dir.path() / "features" / "test.evft", test_t);
  stage_cil(cfg);
  const auto first = slurp(dir.path() / "cil" / "summary.csv");
  const auto run_csv = slurp(dir.path() / "cil" / "runs" / "BIR_SI_H_seed2.csv");
  stage_cil(cfg);
  CHECK(slurp(dir.path() / "cil" / "summary.csv") == first);
  CHECK(slurp(dir.path() / "cil" / "runs" / "BIR_SI_H_seed2.csv") == run_csv);

  std::size_t runs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "cil" / "runs")) runs += e.is_regular_file();
  CHECK(runs == 12);

  const auto svg = slurp(stage_report(cfg));
  CHECK(count_of(svg, "<polyline") == 4);
}
