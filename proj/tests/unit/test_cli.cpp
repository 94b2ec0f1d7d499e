#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "mmtlab/commands.hpp"
#include "mmtlab/error.hpp"
#include "mmtlab/report_io.hpp"

using namespace mmtlab;

namespace {

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "mmtlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  return code;
}

// Data rows of an artifact CSV (comment lines and header dropped).
std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  for (const auto& line : read_lines(p)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("dotted config overrides") {
  nlohmann::json doc = ExperimentConfig{}.to_json();
  set_config_field(doc, "train.max_steps", "17");
  set_config_field(doc, "train.toggles", "cd");
  set_config_field(doc, "model.share_projection", "false");
  const auto cfg = ExperimentConfig::from_json(doc);
  CHECK(cfg.train.max_steps == 17);
  CHECK(cfg.train.toggles == LossToggles::preset("cd"));
  CHECK_FALSE(cfg.model.share_projection);
  CHECK_THROWS_AS(set_config_field(doc, "", "1"), UsageError);
}

TEST_CASE("config precedence: file, then environment, then flags") {
  const auto dir = test::scratch("precedence");
  ExperimentConfig base;
  base.output_dir = "from_file";
  base.threads = 2;
  base.train.max_steps = 5;
  base.manifest = "corpus/manifest.json";
  base.save(dir / "c.json");

  const std::map<std::string, std::string> env = {{kEnvOutputDir, "from_env"}, {kEnvThreads, "3"}};
  auto cfg = resolve_config(dir / "c.json", {}, env);
  CHECK(cfg.output_dir == "from_env");
  CHECK(cfg.threads == 3);
  CHECK(cfg.train.max_steps == 5);
  CHECK(cfg.manifest == dir / "corpus/manifest.json");

  cfg = resolve_config(dir / "c.json", {{"output_dir", "from_flag"}, {"train.max_steps", "9"}}, env);
  CHECK(cfg.output_dir == "from_flag");
  CHECK(cfg.train.max_steps == 9);
  CHECK(resolve_config(std::nullopt, {}, {}).output_dir == ExperimentConfig{}.output_dir);
}

TEST_CASE("run directory lock") {
  const auto dir = test::scratch("lock");
  {
    RunLock a(dir);
    CHECK(std::filesystem::exists(dir / kLockFile));
    CHECK_THROWS_AS(RunLock{dir}, IoError);
  }
  CHECK_FALSE(std::filesystem::exists(dir / kLockFile));
  RunLock again(dir);
}

TEST_CASE("exit codes") {
  const auto dir = test::scratch("exit");
  CHECK(cli({}) == 1);
  CHECK(cli({"frobnicate"}) == 1);
  CHECK(cli({"train", "--run-dir", (dir / "r").string(), "--preset", "bogus"}) == 1);
  CHECK(cli({"analyze", dir.string(), "pcc", "--group", "middle"}) == 1);
  CHECK(cli({"analyze", dir.string(), "nonsense"}) == 1);
  CHECK(cli({"eval", (dir / "missing").string()}) == 2);
  CHECK(cli({"--help"}) == 0);
}

TEST_CASE("corpus, training and analysis through the command line") {
  const auto dir = test::scratch("flow");
  const auto corpus = dir / "corpus", run = dir / "run";
  REQUIRE(cli({"gen-corpus", "--out", corpus.string(), "--sizes", "200,80,20,8", "--mono-sizes", "100,100,100,100",
               "--dev-size", "10", "--max-length", "8", "--latent-vocab", "16"}) == 0);
  REQUIRE(cli({"train", "--manifest", (corpus / "manifest.json").string(), "--run-dir", run.string(), "--preset",
               "cd_id", "--precision", "64", "--max-steps", "6", "--eval-interval", "3", "--batch-tokens", "200",
               "--set", "model.model_dim=16", "--set", "model.ffn_dim=32", "--set", "model.heads=2", "--set",
               "model.layers=1", "--set", "model.max_positions=24", "--set", "analysis.batches=2", "--set",
               "analysis.batch_tokens=200"}) == 0);
  CHECK(std::filesystem::exists(run / kBestCheckpoint));
  CHECK(std::filesystem::exists(run / "config.json"));
  CHECK_FALSE(std::filesystem::exists(run / kLockFile));
  const auto saved = ExperimentConfig::load(run / "config.json");
  CHECK(saved.precision == 64);
  CHECK(saved.manifest.is_absolute());

  const auto sha = file_sha256(run / kBestCheckpoint);

  SUBCASE("PCC matrix over the low-sensitivity group") {
    REQUIRE(cli({"analyze", run.string(), "pcc", "--group", "low"}) == 0);
    const auto p = run / "analysis" / "pcc_translation_low.csv";
    CHECK(read_lines(p).front() + "\n" == provenance_line(sha));
    const auto rows = csv_rows(p);
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(rows[i].size() == 5);
      CHECK(std::stod(rows[i][i + 1]) == doctest::Approx(1.0));
      for (std::size_t j = 0; j < 4; ++j) CHECK(rows[i][j + 1] == rows[j][i + 1]);
    }
    CHECK(std::filesystem::exists(run / "analysis" / "pcc_translation_low.svg"));
  }
  SUBCASE("pruning curve starts at the unpruned model") {
    REQUIRE(cli({"analyze", run.string(), "prune", "--ratios", "0,0.25,0.5,0.75", "--metric", "dev_loss"}) == 0);
    const auto rows = csv_rows(run / "analysis" / "prune_translation.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0][1] == "0");
    std::string text;
    REQUIRE(cli({"eval", run.string()}, &text) == 0);
    const auto j = nlohmann::json::parse(text);
    CHECK(std::stod(rows[0][2]) == doctest::Approx(j.at("dev_loss").get<double>()).epsilon(1e-12));
    CHECK(j.at("checkpoint_sha256") == sha);
    CHECK(cli({"analyze", run.string(), "prune", "--ratios", "0.5,0.25"}) == 1);
  }
  SUBCASE("BLEU table and a held lock") {
    REQUIRE(cli({"analyze", run.string(), "bleu", "--max-sentences", "3"}) == 0);
    const auto rows = csv_rows(run / "analysis" / "bleu.csv");
    CHECK(rows.size() >= 4);
    CHECK(rows[0][0] == "x00");
    RunLock held(run);
    CHECK(cli({"analyze", run.string(), "bleu"}) == 2);
  }
}
