// Copyright (c) 2026, The psgmmt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs the psg executable as a subprocess.

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PSG_FIXTURE_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("psg_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result run(const fs::path& cwd, const std::string& args, const std::string& env = "") {
  const fs::path out = cwd / "stdout.txt", err = cwd / "stderr.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && " + env + " '" + PSG_CLI + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

bool has_temp_files(const fs::path& dir) {
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().string().ends_with(".tmp")) return true;
  }
  return false;
}

const std::string kTinyTrain =
    "--set preset=tiny --set model.layers=1 --set model.d_model=32 --set model.d_ff=64 --set model.heads=2 "
    "--set train.max_epochs=2 --set train.warmup=10 --set bpe.merges=100 --set labels.dim=16";

}  // namespace

TEST_CASE("eval with hypotheses equal to references reports BLEU 100") {
  TempDir dir("eval");
  write(dir.path / "ref.txt", "a man rides a horse .\ntwo dogs play in the snow\n");
  const Result r = run(dir.path, "eval --hyp ref.txt --ref ref.txt --out report.json");
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "report.json"));
  CHECK(report.at("bleu") == 100.0);
  CHECK(report.at("meteor_lite").get<double>() > 99.0);
  CHECK(report.at("comet") == "n/a");
  CHECK(report.at("n_examples") == 2);
  CHECK(report.contains("config"));

  // A short hypothesis: the literal (1 - r) factor turns negative, the standard one does not.
  write(dir.path / "short.txt", "a man rides a horse\ntwo dogs play in the\n");
  const auto standard = nlohmann::json::parse(run(dir.path, "eval --hyp short.txt --ref ref.txt").out);
  const auto literal = nlohmann::json::parse(run(dir.path, "eval --hyp short.txt --ref ref.txt --literal-brevity").out);
  CHECK(standard.at("bleu").get<double>() > 0.0);
  CHECK(literal.at("bleu").get<double>() < 0.0);
}

TEST_CASE("stats matches the brute-force oracle counts") {
  TempDir dir("stats");
  fs::create_directories(dir.path / "graphs");
  fs::copy_file(kFixtures / "stats_visual.jsonl", dir.path / "graphs" / "visual.jsonl");
  fs::copy_file(kFixtures / "stats_language.jsonl", dir.path / "graphs" / "language.jsonl");
  const auto expected = nlohmann::json::parse(slurp(kFixtures / "stats_expected.json"));
  for (const char* t : {"0.0", "0.3", "0.5"}) {
    const Result r = run(dir.path, std::string("stats --graphs graphs --threshold ") + t);
    REQUIRE(r.code == 0);
    const auto report = nlohmann::json::parse(r.out);
    const auto& want = expected.at(std::string("visual@") + t);
    CHECK(report.at("visual").at("mean_entities").get<double>() == want.at("mean_entities").get<double>());
    CHECK(report.at("visual").at("mean_reliable").get<double>() == want.at("mean_reliable").get<double>());
    CHECK(report.at("language").at("mean_entities").get<double>() ==
          expected.at("language").at("mean_entities").get<double>());
  }
  const Result r = run(dir.path, "stats --graphs graphs");
  CHECK(nlohmann::json::parse(r.out).at("multi30k_reference").at("visual_mean_reliable") == 9.06);
}

TEST_CASE("synth, train, translate, average and analyze") {
  TempDir dir("pipeline");
  write(dir.path / "spec.json", R"({"train": 40, "valid": 8, "test": 6})");
  REQUIRE(run(dir.path, "synth --spec spec.json --out data").code == 0);

  const Result a = run(dir.path, "train --data data --out run_a " + kTinyTrain, "PSG_SEED=7");
  REQUIRE(a.code == 0);
  const Result b = run(dir.path, "train --data data --out run_b " + kTinyTrain, "PSG_SEED=7");
  REQUIRE(b.code == 0);
  CHECK(slurp(dir.path / "run_a/averaged.bin") == slurp(dir.path / "run_b/averaged.bin"));
  CHECK(slurp(dir.path / "run_a/checkpoints/checkpoint_2.bin") == slurp(dir.path / "run_b/checkpoints/checkpoint_2.bin"));
  const auto echo = nlohmann::json::parse(slurp(dir.path / "run_a/config.json"));
  CHECK(echo.at("train.seed") == 7);
  CHECK(echo.at("model.d_model") == 32);
  CHECK(fs::exists(dir.path / "run_a/train_log.jsonl"));
  CHECK(fs::exists(dir.path / "run_a/report.json"));
  CHECK_FALSE(has_temp_files(dir.path));

  REQUIRE(run(dir.path,
              "translate --ckpt run_a/averaged.bin --src data/test.src --graphs data/graphs/test --beam 2 --out hyp.txt")
              .code == 0);
  std::ifstream hyp(dir.path / "hyp.txt");
  std::size_t lines = 0;
  for (std::string l; std::getline(hyp, l);) ++lines;
  CHECK(lines == 6);
  CHECK(fs::exists(dir.path / "hyp.txt.config.json"));

  const Result e = run(dir.path,
                       "eval --hyp hyp.txt --ref data/test.tgt --items data/items.test.jsonl --ckpt run_a/averaged.bin "
                       "--graphs data/graphs/test --answer-key data/answer_key.json");
  REQUIRE(e.code == 0);
  const auto report = nlohmann::json::parse(e.out);
  CHECK(report.at("accuracy").get<double>() >= 0.0);
  CHECK(report.at("ambiguous_accuracy").get<double>() <= 100.0);

  REQUIRE(run(dir.path, "avg-ckpt --last 1 --dir run_a/checkpoints --out last.bin").code == 0);
  const auto avg = nlohmann::json::parse(slurp(dir.path / "last.bin.config.json"));
  CHECK(avg.at("checkpoints") == nlohmann::json::array({"checkpoint_2.bin"}));

  REQUIRE(run(dir.path, "prune-analyze --ckpt run_a/averaged.bin --data data --example test-1 --out analysis").code == 0);
  const auto trace = nlohmann::json::parse(slurp(dir.path / "analysis/trace.json"));
  REQUIRE(trace.at("steps").size() == 5);
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(fs::exists(dir.path / "analysis" / ("step_" + std::to_string(s + 1) + ".svg")));
    const auto kept = trace["steps"][s]["kept"].get<std::vector<std::size_t>>();
    const auto alive = trace["steps"][s]["visual_nodes"].get<std::vector<std::size_t>>();
    for (std::size_t k : kept) CHECK(std::find(alive.begin(), alive.end(), k) != alive.end());
  }
}

TEST_CASE("failures exit nonzero with one JSON line") {
  TempDir dir("errors");
  write(dir.path / "spec.json", R"({"train": 20, "valid": 4, "test": 4})");
  REQUIRE(run(dir.path, "synth --spec spec.json --out data").code == 0);

  const auto check = [&](const std::string& args, int code, const std::string& kind, const std::string& env = "") {
    const Result r = run(dir.path, args, env);
    CHECK(r.code == code);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    const auto j = nlohmann::json::parse(r.err, nullptr, false);
    REQUIRE_FALSE(j.is_discarded());
    CHECK(j.at("error") == kind);
  };
  check("", 2, "usage");
  check("eval --hyp", 2, "usage");
  check("train --data data --out r --set train.nope=1", 2, "config");
  check("train --data data --out r --set train.warmup=-1", 2, "config");
  check("train --data data --out r", 2, "config", "PSG_SEED=abc");
  check("eval --hyp missing.txt --ref missing.txt", 3, "data");
  check("avg-ckpt --dir data --out x.bin", 3, "data");
  check("prune-analyze --ckpt spec.json --data data --example test-0 --out a", 3, "data");
  check("train --data data --out r " + kTinyTrain + " --set train.lr=1e300 --set train.warmup=0", 4, "numeric");
}
