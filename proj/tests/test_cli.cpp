#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "ptrm/harness.hpp"
#include "ptrm/metrics.hpp"
#include "ptrm/report.hpp"
#include "test_util.hpp"

using namespace ptrm;
using ptrm::testing::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + PTRM_CLI_PATH + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

const std::string kModel =
    " --set model.hidden=32 --set model.latent_updates=2 --set model.recursions=2 --set model.supervision_steps=3";

// One shared dataset and trained checkpoint for the read-only CLI tests.
struct Workspace {
  TempDir dir{"cli"};
  fs::path data = dir / "data";
  fs::path run_dir = dir / "run";
  double train_cpu_seconds = 0.0;
  int gen_code = -1, train_code = -1;

  Workspace() {
    gen_code = run("gen-data --out " + data.string() +
                   " --set data.sudoku4=200 --set data.val_per_type=40 --set data.golden_per_type=30 --seed 5");
    const auto c0 = std::clock();
    const auto t0 = std::chrono::steady_clock::now();
    train_code = run("train --data " + data.string() + " --out " + run_dir.string() + kModel +
                     " --set train.epochs=2 --set train.batch_size=32 --set train.eval_every_steps=4"
                     " --set train.checkpoint_every_steps=5 --seed 9");
    (void)c0;
    // The child runs single-threaded, so wall time bounds its CPU time.
    train_cpu_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("override parsing") {
    nlohmann::json cfg = nlohmann::json::object();
    apply_override(cfg, "train.lr=0.003");
    apply_override(cfg, "infer.selector=mode");
    apply_override(cfg, "sweep.sigmas=[0,0.5]");
    apply_override(cfg, "data.augmentation=5");
    CHECK(cfg["train"]["lr"] == 0.003);
    CHECK(cfg["infer"]["selector"] == "mode");
    CHECK(cfg["sweep"]["sigmas"].size() == 2);
    CHECK(cfg["data"]["augmentation"] == 5);
    CHECK_THROWS_AS(apply_override(cfg, "noequals"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "train.lr.x=1"), ConfigError);
    CHECK(command_names().size() == 6);
  }

  TEST_CASE("exit codes for usage and configuration errors") {
    TempDir tmp("codes");
    CHECK(run("") == kExitConfig);
    CHECK(run("frobnicate") == kExitConfig);
    CHECK(run("--help") == kExitOk);
    CHECK(run("eval --data " + (tmp / "nothing").string()) == kExitConfig);
    CHECK(run("gen-data --out " + tmp.path().string() + " --set data.sudoku4=-3") == kExitConfig);
    CHECK(run("gen-data --out " + tmp.path().string() + " --set data.colour=blue --set data.sudoku4=3") == kExitConfig);
    CHECK(run("gen-data --out " + tmp.path().string() + " --set bogus=1 --set data.sudoku4=3") == kExitConfig);
    CHECK(run("gen-data --config " + (tmp / "missing.json").string()) == kExitConfig);
    std::ofstream(tmp / "broken.json") << "{ not json";
    CHECK(run("gen-data --config " + (tmp / "broken.json").string()) == kExitConfig);
  }

  TEST_CASE("default output directory comes from the environment") {
    TempDir tmp("env");
    const auto target = tmp / "from-env";
    CHECK(run("gen-data --set data.sudoku4=5 --set data.val_per_type=2", std::string(kOutDirEnv) + "=" + target.string()) == kExitOk);
    CHECK(fs::exists(target / "manifest.json"));
    CHECK(fs::exists(target / "train.jsonl"));
  }

  TEST_CASE("gen-data: seeded output is byte-identical; new seeds give new ids") {
    TempDir tmp("gen");
    const std::string base = " --set data.sudoku4=30 --set data.maze=5 --set data.val_per_type=4 --set data.augmentation=3";
    REQUIRE(run("gen-data --out " + (tmp / "a").string() + base + " --seed 1") == 0);
    REQUIRE(run("gen-data --out " + (tmp / "b").string() + base + " --seed 1") == 0);
    REQUIRE(run("gen-data --out " + (tmp / "c").string() + base + " --seed 2") == 0);
    for (const char* f : {"train.jsonl", "val.jsonl", "golden.jsonl", "manifest.json"})
      CHECK(slurp(tmp / "a" / f) == slurp(tmp / "b" / f));
    const auto manifest = read_json(tmp / "a" / "manifest.json");
    CHECK(manifest["splits"]["train"]["count"] == read_jsonl(tmp / "a" / "train.jsonl").size());
    CHECK(manifest["splits"]["val"]["count"] == 8);
    std::set<std::string> ids;
    for (const auto& j : read_jsonl(tmp / "a" / "train.jsonl")) ids.insert(j["id"].get<std::string>());
    for (const auto& j : read_jsonl(tmp / "c" / "train.jsonl")) CHECK(ids.count(j["id"].get<std::string>()) == 0);
  }

  TEST_CASE("train: smoke run, log shape and checkpoints") {
    auto& ws = workspace();
    REQUIRE(ws.gen_code == 0);
    REQUIRE(ws.train_code == 0);
    CHECK(ws.train_cpu_seconds < 120.0);
    const auto log = read_jsonl(ws.run_dir / "train_log.jsonl");
    const auto summary = read_json(ws.run_dir / "train_summary.json");
    std::size_t evals = 0;
    for (const auto& j : log) evals += j.contains("event");
    CHECK(log.size() == summary["steps"].get<std::size_t>() + evals);
    CHECK(fs::exists(ws.run_dir / "checkpoint" / "manifest.json"));
    CHECK(fs::exists(ws.run_dir / "checkpoints" / "step-00000005" / "manifest.json"));
    CHECK(fs::exists(ws.run_dir / "train_curve.svg"));
    CHECK(summary["config"]["model"]["hidden"] == 32);
    CHECK_FALSE(summary["config"].contains("workers"));
  }

  TEST_CASE("train: rerun and resume reproduce the final checkpoint") {
    auto& ws = workspace();
    REQUIRE(ws.train_code == 0);
    const std::string common = "--data " + ws.data.string() + kModel +
                               " --set train.epochs=2 --set train.batch_size=32 --set train.eval_every_steps=4"
                               " --set train.checkpoint_every_steps=5 --seed 9";
    const auto again = ws.dir / "run-again";
    const auto resumed = ws.dir / "run-resumed";
    REQUIRE(run("train " + common + " --out " + again.string()) == 0);
    REQUIRE(run("train " + common + " --out " + resumed.string() + " --resume " +
                (ws.run_dir / "checkpoints" / "step-00000005").string()) == 0);
    const auto final_blob = slurp(ws.run_dir / "checkpoint" / "params.bin");
    CHECK(slurp(again / "checkpoint" / "params.bin") == final_blob);
    CHECK(slurp(resumed / "checkpoint" / "params.bin") == final_blob);
    CHECK(slurp(resumed / "checkpoint" / "trainer.bin") == slurp(ws.run_dir / "checkpoint" / "trainer.bin"));
    // The resumed log holds exactly the lines after step 5.
    const auto full = read_jsonl(ws.run_dir / "train_log.jsonl");
    const auto tail = read_jsonl(resumed / "train_log.jsonl");
    REQUIRE(tail.size() < full.size());
    for (std::size_t i = 0; i < tail.size(); ++i) CHECK(tail[i] == full[full.size() - tail.size() + i]);
    // A checkpoint from a different model is refused before training starts.
    CHECK(run("train --data " + ws.data.string() + " --out " + (ws.dir / "x").string() +
              " --set model.hidden=16 --resume " + (ws.run_dir / "checkpoint").string()) == kExitConfig);
  }

  TEST_CASE("eval: reports are byte-identical across workers and reruns") {
    auto& ws = workspace();
    REQUIRE(ws.train_code == 0);
    const std::string common = "eval --data " + ws.data.string() + " --checkpoint " +
                               (ws.run_dir / "checkpoint").string() +
                               " --set infer.rollouts=6 --set infer.sigma=0.4 --seed 3";
    for (int w : {1, 4}) REQUIRE(run(common + " --workers " + std::to_string(w) + " --out " + (ws.dir / ("ev" + std::to_string(w))).string()) == 0);
    REQUIRE(run(common + " --workers 1 --out " + (ws.dir / "ev1b").string()) == 0);
    const auto report = slurp(ws.dir / "ev1" / "eval_report.json");
    CHECK(report == slurp(ws.dir / "ev4" / "eval_report.json"));
    CHECK(report == slurp(ws.dir / "ev1b" / "eval_report.json"));
    CHECK(slurp(ws.dir / "ev1" / "eval_table.csv") == slurp(ws.dir / "ev4" / "eval_table.csv"));
    const auto j = nlohmann::json::parse(report);
    for (const auto& row : j["rows"]) {
      CHECK(row["oracle"] >= row["best_q"]);
      CHECK(row["oracle"] >= row["mode"]);
    }
    const auto meta = read_json(ws.dir / "ev1" / "eval_meta.json");
    CHECK(meta.contains("seconds"));
    CHECK(meta["cost_per_puzzle"] == doctest::Approx(cost_estimate(meta["seconds_per_puzzle"], 2.5)));

    REQUIRE(run("eval --data " + ws.data.string() + " --checkpoint " + (ws.run_dir / "checkpoint").string() +
                " --set infer.rollouts=1 --out " + (ws.dir / "k1").string()) == 0);
    const auto k1 = read_json(ws.dir / "k1" / "eval_report.json")["overall"];
    CHECK(k1["best_q"] == k1["mode"]);
    CHECK(k1["best_q"] == k1["oracle"]);
    CHECK(k1["best_q"] == k1["deterministic"]);
  }

  TEST_CASE("eval: thresholds, fail-fast validation and runtime errors") {
    auto& ws = workspace();
    REQUIRE(ws.train_code == 0);
    const std::string ck = " --data " + ws.data.string() + " --checkpoint " + (ws.run_dir / "checkpoint").string();
    CHECK(run("eval" + ck + " --set require.accuracy=1.01 --out " + (ws.dir / "req").string()) == kExitCheck);
    CHECK(run("eval" + ck + " --set require.accuracy=0 --out " + (ws.dir / "req0").string()) == kExitOk);
    const auto untouched = ws.dir / "untouched";
    CHECK(run("eval" + ck + " --set infer.sigma=-1 --out " + untouched.string()) == kExitConfig);
    CHECK(run("eval" + ck + " --set infer.selector=vote --out " + untouched.string()) == kExitConfig);
    CHECK(run("eval" + ck + " --set langevin.steps=2 --set langevin.step_size=0.1 --out " + untouched.string()) == kExitConfig);
    CHECK(run("eval" + ck + " --split test --out " + untouched.string()) == kExitConfig);
    CHECK_FALSE(fs::exists(untouched));
    std::ofstream(ws.dir / "a-file") << "x";
    CHECK(run("eval" + ck + " --out " + (ws.dir / "a-file" / "sub").string()) == kExitRuntime);
  }

  TEST_CASE("sweep: one row per (sigma, seed); sigma 0 matches eval") {
    auto& ws = workspace();
    REQUIRE(ws.train_code == 0);
    const std::string ck = " --data " + ws.data.string() + " --checkpoint " + (ws.run_dir / "checkpoint").string();
    REQUIRE(run("sweep" + ck + " --set infer.rollouts=4 --set sweep.sigmas=[0,0.3,0.6] --set sweep.seeds=[1,2] --out " + (ws.dir / "sw").string()) == 0);
    const auto rows = read_csv(ws.dir / "sw" / "sweep.csv");
    CHECK(rows.rows.size() == 6);
    const auto summary = read_csv(ws.dir / "sw" / "sweep_summary.csv");
    CHECK(summary.rows.size() == 3);
    const auto svg = slurp(ws.dir / "sw" / "sweep.svg");
    std::size_t series = 0;
    for (auto p = svg.find("class=\"series\""); p != std::string::npos; p = svg.find("class=\"series\"", p + 1)) ++series;
    CHECK(series == 3);
    for (const auto& r : rows.rows) {
      CHECK(std::stod(r[rows.column("best_q")]) <= std::stod(r[rows.column("pass")]));
      CHECK(std::stod(r[rows.column("mode")]) <= std::stod(r[rows.column("pass")]));
    }

    REQUIRE(run("sweep" + ck + " --set infer.rollouts=4 --set sweep.sigmas=[0] --set sweep.seeds=[1] --out " + (ws.dir / "sw0").string()) == 0);
    REQUIRE(run("eval" + ck + " --set infer.rollouts=4 --out " + (ws.dir / "ev0").string()) == 0);
    const auto one = read_csv(ws.dir / "sw0" / "sweep.csv");
    REQUIRE(one.rows.size() == 1);
    const auto ev = read_json(ws.dir / "ev0" / "eval_report.json")["overall"];
    CHECK(std::stod(one.rows[0][one.column("deterministic")]) == doctest::Approx(ev["deterministic"].get<double>()));
    CHECK(std::stod(one.rows[0][one.column("pass")]) == doctest::Approx(ev["deterministic"].get<double>()));
  }

  TEST_CASE("trace: lengths, point counts and colours agree across files") {
    auto& ws = workspace();
    REQUIRE(ws.train_code == 0);
    const auto out = ws.dir / "tr";
    REQUIRE(run("trace --data " + ws.data.string() + " --checkpoint " + (ws.run_dir / "checkpoint").string() +
                " --set infer.rollouts=7 --set infer.depth=4 --set infer.sigma=0.5 --out " + out.string()) == 0);
    const auto lines = read_jsonl(out / "trace.jsonl");
    REQUIRE(lines.size() == 7);
    for (const auto& l : lines) CHECK(l["steps"].size() == 4);
    const auto pca = read_csv(out / "pca.csv");
    CHECK(pca.rows.size() == 28);
    std::size_t correct_points = 0;
    for (const auto& r : pca.rows) {
      const auto k = std::stoul(r[pca.column("k")]);
      CHECK(r[pca.column("correct")] == (lines[k]["correct"].get<bool>() ? "1" : "0"));
      correct_points += r[pca.column("correct")] == "1";
    }
    const auto svg = slurp(out / "pca.svg");
    const auto ok_group = svg.find("data-name=\"correct\"");
    const auto bad_group = svg.find("data-name=\"incorrect\"");
    REQUIRE(ok_group != std::string::npos);
    REQUIRE(bad_group != std::string::npos);
    std::size_t circles_in_ok = 0;
    const auto ok_end = svg.find("</g>", ok_group);
    for (auto p = svg.find("<circle", ok_group); p != std::string::npos && p < ok_end; p = svg.find("<circle", p + 1))
      ++circles_in_ok;
    CHECK(circles_in_ok == correct_points);
    const auto report = read_json(out / "trace_report.json");
    CHECK(report["rollouts"] == 7);

    // `report` re-renders the same charts from the CSVs.
    const auto before = slurp(out / "pca.svg");
    fs::remove(out / "pca.svg");
    CHECK(run("report --out " + out.string()) == 0);
    CHECK(slurp(out / "pca.svg") == before);
    CHECK(run("trace --data " + ws.data.string() + " --checkpoint " + (ws.run_dir / "checkpoint").string() +
              " --puzzle no-such-id --out " + out.string()) == kExitConfig);
  }
}
