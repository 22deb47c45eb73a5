#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "posr/cli.hpp"

using namespace posr;
using namespace posr::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

std::string column(const std::string& csv, const std::string& name, std::size_t row = 1) {
  const auto ls = lines(csv);
  const auto header = fields(ls.at(0));
  const auto values = fields(ls.at(row));
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return values.at(i);
  FAIL("missing column " << name);
  return {};
}

fs::path config_file(const std::string& name, const ExperimentConfig& c) {
  const fs::path dir = scratch_dir(name);
  fs::create_directories(dir);
  write_config(dir / "config.json", c);
  return dir / "config.json";
}

}  // namespace

TEST_CASE("unknown verb prints usage and exits 2") {
  const Run r = cli({"frobnicate"});
  CHECK(r.status == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli({}).status == 2);
  CHECK(cli({"--help"}).status == 0);
}

TEST_CASE("generate, train and evaluate on one config") {
  const fs::path cfg = config_file("cli_cfg", learnable_experiment());
  const fs::path root = scratch_dir("cli_flow");
  const std::string data = (root / "data").string(), run = (root / "run").string(), eval = (root / "eval").string();

  REQUIRE(cli({"generate", "--config", cfg.string(), "--out", data}).status == 0);
  CHECK(fs::exists(fs::path(data) / "iq.bin"));
  CHECK(fs::exists(fs::path(data) / "manifest.json"));

  const Run t = cli({"train", "--config", cfg.string(), "--data", data, "--out", run});
  REQUIRE_MESSAGE(t.status == 0, t.err);
  for (const char* f : {"checkpoint.json", "report.json", "report.csv", "metrics.csv", "confusion.json", "config.json"})
    CHECK(fs::exists(fs::path(run) / f));
  CHECK(lines(slurp(fs::path(run) / "report.csv")).size() == 1 + learnable_experiment().train.epochs);

  const std::string metrics = slurp(fs::path(run) / "metrics.csv");
  CHECK(column(metrics, "known_accuracy") != "NA");
  CHECK(column(metrics, "rejection_rate") != "NA");
  CHECK(column(metrics, "auroc") != "NA");

  const Run e = cli({"evaluate", "--config", cfg.string(), "--data", data, "--checkpoint",
                     (fs::path(run) / "checkpoint.json").string(), "--out", eval});
  REQUIRE_MESSAGE(e.status == 0, e.err);
  CHECK(slurp(fs::path(eval) / "metrics.csv") == metrics);
  CHECK(slurp(fs::path(eval) / "confusion.json") == slurp(fs::path(run) / "confusion.json"));

  SUBCASE("outputs are never silently overwritten") {
    const Run again = cli({"generate", "--config", cfg.string(), "--out", data});
    CHECK(again.status == 2);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(cli({"generate", "--config", cfg.string(), "--out", data, "--force"}).status == 0);
  }

  SUBCASE("embeddings export") {
    const std::string out = (root / "emb").string();
    const Run x = cli({"export-embeddings", "--config", cfg.string(), "--data", data, "--checkpoint",
                       (fs::path(run) / "checkpoint.json").string(), "--split", "val", "--out", out});
    REQUIRE_MESSAGE(x.status == 0, x.err);
    const auto rows = lines(slurp(fs::path(out) / "embeddings.csv"));
    CHECK(fields(rows.at(0)).size() == 3 + learnable_experiment().train.backbone.embed_dim);
    CHECK(rows.size() == 1 + load_dataset(data).indices(Split::val).size());
  }

  SUBCASE("a missing checkpoint is a runtime failure") {
    const Run m = cli({"evaluate", "--data", data, "--checkpoint", (root / "absent.json").string(), "--out",
                       (root / "eval2").string()});
    CHECK(m.status == 1);
  }
}

TEST_CASE("invalid configuration exits 2 with the field name") {
  const Run r = cli({"generate", "--out", scratch_dir("cli_bad").string(), "--set", "train.epochs=0"});
  CHECK(r.status == 2);
  CHECK(r.err.find("train.epochs") != std::string::npos);
  const Run u = cli({"generate", "--out", scratch_dir("cli_bad2").string(), "--set", "loss.lambda3=1"});
  CHECK(u.status == 2);
  CHECK(u.err.find("lambda3") != std::string::npos);
}

TEST_CASE("ablate emits one row per grid cell") {
  const fs::path cfg = config_file("cli_ablate_cfg", learnable_experiment());
  const fs::path out = scratch_dir("cli_ablate");
  const Run r = cli({"ablate", "--config", cfg.string(), "--out", out.string(), "--set", R"(ablation.arms=["consistency"])",
                     "--set", "ablation.lambda2=[0, 0.1, 0.5, 1.0]"});
  REQUIRE_MESSAGE(r.status == 0, r.err);
  const std::string csv = slurp(out / "ablation.csv");
  const auto rows = lines(csv);
  REQUIRE(rows.size() == 5);
  CHECK(column(csv, "lambda2", 1) == "0");
  CHECK(column(csv, "lambda2", 4) == "1");
  for (std::size_t i = 1; i <= 4; ++i) {
    CHECK(column(csv, "run", i) == "consistency");
    CHECK(column(csv, "alpha", i) == "NA");
  }
}

TEST_CASE("metrics CSV writes undefined values as NA") {
  MetricsRow row;
  row.run = "x";
  row.known_accuracy = 0.1;
  const auto csv = metrics_csv({row});
  CHECK(column(csv, "known_accuracy") == "0.10000000000000001");
  CHECK(column(csv, "rejection_rate") == "NA");
  CHECK(column(csv, "lambda2") == "NA");
}
