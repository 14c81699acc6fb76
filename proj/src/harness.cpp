#include "ptrm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>

#include "ptrm/checkpoint.hpp"
#include "ptrm/inference.hpp"
#include "ptrm/metrics.hpp"
#include "ptrm/puzzles.hpp"
#include "ptrm/report.hpp"
#include "ptrm/sweep.hpp"
#include "ptrm/training.hpp"

#ifndef PTRM_BUILD_ID
#define PTRM_BUILD_ID "unknown"
#endif

namespace ptrm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopLevelKeys = {"out_dir", "workers",  "seed",  "data",   "model",
                                             "train",   "infer",    "langevin", "checkpoint", "resume",
                                             "split",   "limit",    "sweep", "trace",  "hourly_rate",
                                             "require", "input_dir"};

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

// Key check against the fields a default-constructed section serializes.
template <typename T>
void check_section_keys(const json& section, const char* name) {
  if (!section.is_object()) throw ConfigError(std::string("config: '") + name + "' must be an object");
  const json known = T{};
  for (const auto& [key, _] : section.items())
    if (!known.contains(key)) throw ConfigError(std::string("config: unknown key '") + name + "." + key + "'");
}

template <typename T>
T parse_section(const json& cfg, const char* name) {
  T out{};
  if (!cfg.contains(name)) return out;
  check_section_keys<T>(cfg.at(name), name);
  try {
    out = cfg.at(name).get<T>();
    out.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad '") + name + "' section: " + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: invalid '") + name + "' section: " + e.what());
  }
  return out;
}

template <typename T>
T get_or(const json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

fs::path out_dir_of(const json& cfg) {
  return cfg.contains("out_dir") ? fs::path(get_or<std::string>(cfg, "out_dir", "")) : default_out_dir();
}

int workers_of(const json& cfg) {
  const int w = get_or<int>(cfg, "workers", 1);
  if (w < 1) throw ConfigError("config: workers must be >= 1");
  return w;
}

fs::path data_dir_of(const json& cfg) {
  if (!cfg.contains("data") || !cfg["data"].contains("dir"))
    throw ConfigError("config: data.dir is required for this command");
  const fs::path dir = cfg["data"]["dir"].get<std::string>();
  if (!fs::exists(dir / "manifest.json")) throw ConfigError("config: no dataset manifest in " + dir.string());
  return dir;
}

std::vector<PuzzleInstance> load_split(const fs::path& dir, const std::string& split) {
  if (split != "train" && split != "val" && split != "golden")
    throw ConfigError("config: split must be train, val or golden, not '" + split + "'");
  const auto path = dir / (split + ".jsonl");
  if (!fs::exists(path)) throw ConfigError("config: missing dataset split " + path.string());
  try {
    return read_split(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint_or_config_error(const json& cfg, const char* key) {
  const auto path = get_or<std::string>(cfg, key, "");
  if (path.empty()) throw ConfigError(std::string("config: '") + key + "' is required for this command");
  if (!fs::exists(path)) throw ConfigError(std::string("config: checkpoint ") + path + " does not exist");
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw ConfigError(e.what());
  }
}

void check_against_manifest(const ModelConfig& model, const json& manifest) {
  const int v = manifest.value("V", vocab::kSize), l = manifest.value("L", 0);
  if (model.vocab != v || model.seq_len != l)
    throw ConfigError("config: checkpoint expects V=" + std::to_string(model.vocab) + ", L=" +
                      std::to_string(model.seq_len) + " but the dataset has V=" + std::to_string(v) +
                      ", L=" + std::to_string(l));
}

// Config echo with the knobs that must not influence results stripped out,
// so reports stay byte-identical across worker counts and output paths.
json provenance(const json& cfg) {
  json echo = cfg;
  echo.erase("workers");
  echo.erase("out_dir");
  if (echo.contains("infer")) echo["infer"].erase("workers");
  if (echo.contains("train")) echo["train"].erase("eval_workers");
  return {{"config", echo}, {"build", PTRM_BUILD_ID}};
}

void require_threshold(const json& cfg, const char* key, double actual) {
  if (!cfg.contains("require") || !cfg["require"].contains(key)) return;
  const double want = cfg["require"][key].get<double>();
  if (actual < want)
    throw CheckFailed(std::string("check failed: ") + key + " = " + format_number(actual) + " < required " +
                      format_number(want));
}

std::vector<PuzzleInstance> cap(std::vector<PuzzleInstance> v, const json& cfg) {
  const int limit = get_or<int>(cfg, "limit", 0);
  if (limit < 0) throw ConfigError("config: limit must be >= 0");
  if (limit > 0 && static_cast<std::size_t>(limit) < v.size()) v.resize(static_cast<std::size_t>(limit));
  return v;
}

InferenceConfig infer_config(const json& cfg, const ModelConfig& model) {
  auto ic = parse_section<InferenceConfig>(cfg, "infer");
  if (!cfg.contains("infer") || !cfg["infer"].contains("depth")) ic.depth = model.supervision_steps;
  ic.workers = cfg.contains("infer") && cfg["infer"].contains("workers") ? ic.workers : workers_of(cfg);
  return ic;
}

// --- gen-data ------------------------------------------------------------------

json cmd_gen_data(const json& cfg, std::ostream& log) {
  if (!cfg.contains("data")) throw ConfigError("config: gen-data needs a 'data' section");
  json spec_json = cfg["data"];
  fs::path dir = spec_json.contains("dir") ? fs::path(spec_json["dir"].get<std::string>()) : out_dir_of(cfg);
  spec_json.erase("dir");
  check_section_keys<DatasetSpec>(spec_json, "data");
  DatasetSpec spec;
  try {
    spec = spec_json.get<DatasetSpec>();
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid data section: ") + e.what());
  }
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = build_dataset(spec);
  write_dataset(data, dir);
  log << "gen-data: " << data.train.size() << " train, " << data.val.size() << " val, " << data.golden.size()
      << " golden (L=" << data.seq_len << ") -> " << dir.string() << "\n";
  write_text_file(dir / "gen_meta.json", pretty({{"seconds", elapsed_since(t0)}}));
  return data.manifest();
}

// --- train ---------------------------------------------------------------------

json cmd_train(const json& cfg, std::ostream& log) {
  const fs::path out = out_dir_of(cfg);
  const fs::path data_dir = data_dir_of(cfg);
  const json manifest = read_manifest(data_dir);
  ModelConfig model = parse_section<ModelConfig>(cfg, "model");
  if (!cfg.contains("model") || !cfg["model"].contains("seq_len")) model.seq_len = manifest.value("L", 0);
  if (!cfg.contains("model") || !cfg["model"].contains("vocab")) model.vocab = manifest.value("V", vocab::kSize);
  try {
    model.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("config: invalid model: ") + e.what());
  }
  check_against_manifest(model, manifest);
  TrainConfig tc = parse_section<TrainConfig>(cfg, "train");
  if (!cfg.contains("train") || !cfg["train"].contains("eval_workers")) tc.eval_workers = workers_of(cfg);
  if (cfg.contains("seed") && (!cfg.contains("train") || !cfg["train"].contains("seed")))
    tc.seed = cfg["seed"].get<std::uint64_t>();

  const auto train = load_split(data_dir, "train");
  const auto val = load_split(data_dir, "val");
  try {
    check_dataset_matches(train, model, "train");
    check_dataset_matches(val, model, "val");
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  if (train.empty()) throw ConfigError("config: training split is empty");

  std::optional<LoadedCheckpoint> resume;
  if (cfg.contains("resume")) {
    resume = load_checkpoint_or_config_error(cfg, "resume");
    if (!(resume->params.config == model))
      throw ConfigError("config: resume checkpoint was trained with a different model config");
    if (!resume->has_trainer_state()) throw ConfigError("config: resume checkpoint holds no trainer state");
  }

  const json echo = provenance(cfg);
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(resume ? resume->params.clone() : init_params<float>(model, tc.seed), train, val, tc);
  if (resume) {
    try {
      restore_trainer(trainer, get_or<std::string>(cfg, "resume", ""), resume->manifest);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: cannot resume: ") + e.what());
    }
  }

  std::ofstream log_file(out / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!log_file) throw std::runtime_error("cannot write " + (out / "train_log.jsonl").string());
  EvalEvent last{};
  bool have_eval = false;
  FitHooks hooks;
  hooks.on_log = [&](const json& line) {
    log_file << line.dump() << '\n';
    if (line.contains("event")) {
      last.step = line["step"].get<std::int64_t>();
      last.val_exact = line["val_exact"].get<double>();
      last.val_cell = line["val_cell"].get<double>();
      have_eval = true;
      log << "train: step " << last.step << " val_exact " << format_number(last.val_exact) << " val_cell "
          << format_number(last.val_cell) << "\n";
    }
  };
  auto snapshot_info = [&](const Trainer& t) {
    CheckpointInfo info;
    info.step = t.steps();
    info.config = echo;
    if (have_eval) info.metrics = {{"val_exact", last.val_exact}, {"val_cell", last.val_cell}, {"eval_step", last.step}};
    return info;
  };
  hooks.on_checkpoint = [&](const Trainer& t, bool final) {
    if (final) {
      save_checkpoint(out / "checkpoint", t.params(), snapshot_info(t), &t);
    } else {
      std::ostringstream name;
      name << "step-" << std::setw(8) << std::setfill('0') << t.steps();
      save_checkpoint(out / "checkpoints" / name.str(), t.params(), snapshot_info(t), &t);
    }
  };
  const auto result = fit(trainer, hooks);
  log_file.close();
  const double seconds = elapsed_since(t0);
  json summary = echo;
  summary["steps"] = result.steps;
  summary["stopped_early"] = result.stopped_early;
  summary["samples_consumed"] = trainer.samples_consumed();
  summary["final_eval"] = have_eval ? json{{"val_exact", last.val_exact}, {"val_cell", last.val_cell}, {"step", last.step}}
                                    : json(nullptr);
  write_text_file(out / "train_summary.json", pretty(summary));
  write_text_file(out / "train_meta.json", pretty({{"seconds", seconds}, {"steps", result.steps}}));
  render_training_curve(out);
  require_threshold(cfg, "val_exact", have_eval ? last.val_exact : 0.0);
  return summary;
}

// --- eval ----------------------------------------------------------------------

json cmd_eval(const json& cfg, std::ostream& log) {
  const fs::path out = out_dir_of(cfg);
  const fs::path data_dir = data_dir_of(cfg);
  const auto ckpt = load_checkpoint_or_config_error(cfg, "checkpoint");
  check_against_manifest(ckpt.params.config, read_manifest(data_dir));
  const auto ic = infer_config(cfg, ckpt.params.config);
  const auto lc = parse_section<LangevinConfig>(cfg, "langevin");
  if (lc.steps > 0 && ckpt.params.config.q_head != QHeadKind::attention_pooled)
    throw ConfigError("config: Langevin refinement requires the attention-pooled Q head");
  const double rate = get_or<double>(cfg, "hourly_rate", 2.50);
  if (!(rate >= 0.0)) throw ConfigError("config: hourly_rate must be >= 0");
  const std::string split = get_or<std::string>(cfg, "split", "golden");
  const auto puzzles = cap(load_split(data_dir, split), cfg);
  if (puzzles.empty()) throw ConfigError("config: split '" + split + "' is empty");

  const auto t0 = std::chrono::steady_clock::now();
  const auto outcomes = evaluate_puzzles(ckpt.params, std::span<const PuzzleInstance>(puzzles), ic,
                                         lc.steps > 0 ? &lc : nullptr);
  const double seconds = elapsed_since(t0);

  struct Tally {
    std::size_t n = 0;
    double det = 0, cell = 0, best = 0, mode = 0, oracle = 0;
  };
  std::map<std::string, Tally> by_type;
  Tally all;
  CsvTable per_puzzle;
  per_puzzle.header = {"id", "type", "deterministic", "deterministic_cell", "best_q", "mode", "oracle", "rollouts_correct"};
  for (const auto& o : outcomes) {
    for (Tally* t : {&by_type[to_string(o.type)], &all}) {
      ++t->n;
      t->det += o.deterministic_correct;
      t->cell += o.deterministic_cell_accuracy;
      t->best += o.best_q_correct;
      t->mode += o.mode_correct;
      t->oracle += o.oracle_correct;
    }
    const auto hits = std::count(o.rollout_correct.begin(), o.rollout_correct.end(), char(1));
    per_puzzle.add_row({o.id, to_string(o.type), std::to_string(int(o.deterministic_correct)),
                        format_number(o.deterministic_cell_accuracy), std::to_string(int(o.best_q_correct)),
                        std::to_string(int(o.mode_correct)), std::to_string(int(o.oracle_correct)),
                        std::to_string(hits)});
  }
  auto row = [](const std::string& type, const Tally& t) {
    const double n = static_cast<double>(t.n);
    return json{{"type", type},          {"puzzles", t.n},           {"deterministic", t.det / n},
                {"deterministic_cell", t.cell / n}, {"best_q", t.best / n}, {"mode", t.mode / n},
                {"oracle", t.oracle / n}};
  };
  json rows = json::array();
  CsvTable table;
  table.header = {"type", "puzzles", "deterministic", "best_q", "mode", "oracle", "deterministic_cell"};
  for (const auto& [type, t] : by_type) {
    rows.push_back(row(type, t));
    const auto& r = rows.back();
    table.add_row({type, std::to_string(t.n), format_number(r["deterministic"]), format_number(r["best_q"]),
                   format_number(r["mode"]), format_number(r["oracle"]), format_number(r["deterministic_cell"])});
  }
  json report = provenance(cfg);
  report["split"] = split;
  report["checkpoint"] = {{"step", ckpt.manifest.value("step", 0)}, {"model", ckpt.params.config}};
  report["inference"] = ic;
  report["inference"].erase("workers");
  report["rows"] = rows;
  report["overall"] = row("all", all);
  write_text_file(out / "eval_report.json", pretty(report));
  write_csv(out / "eval_table.csv", table);
  write_csv(out / "eval_puzzles.csv", per_puzzle);

  // Timing is machine-dependent and lives apart from the report.
  const double per_puzzle_s = seconds / static_cast<double>(puzzles.size());
  const double per_attempt_s = per_puzzle_s / static_cast<double>(ic.rollouts);
  write_text_file(out / "eval_meta.json", pretty({{"seconds", seconds},
                                                  {"workers", ic.workers},
                                                  {"seconds_per_puzzle", per_puzzle_s},
                                                  {"seconds_per_attempt", per_attempt_s},
                                                  {"hourly_rate", rate},
                                                  {"cost_per_puzzle", cost_estimate(per_puzzle_s, rate)},
                                                  {"cost_per_attempt", cost_estimate(per_attempt_s, rate)}}));
  const auto& o = report["overall"];
  log << "eval: " << puzzles.size() << " puzzles, deterministic " << format_number(o["deterministic"])
      << ", best-q " << format_number(o["best_q"]) << ", mode " << format_number(o["mode"]) << ", oracle "
      << format_number(o["oracle"]) << "\n";
  const std::string selector_key = to_string(ic.selector) == "best-q" ? "best_q" : to_string(ic.selector);
  require_threshold(cfg, "accuracy", o[selector_key].get<double>());
  require_threshold(cfg, "deterministic", o["deterministic"].get<double>());
  return report;
}

// --- sweep ---------------------------------------------------------------------

json cmd_sweep(const json& cfg, std::ostream& log) {
  const fs::path out = out_dir_of(cfg);
  const fs::path data_dir = data_dir_of(cfg);
  const auto ckpt = load_checkpoint_or_config_error(cfg, "checkpoint");
  check_against_manifest(ckpt.params.config, read_manifest(data_dir));
  const auto ic = infer_config(cfg, ckpt.params.config);
  SweepOptions opts;
  opts.rollouts = ic.rollouts;
  opts.depth = ic.depth;
  opts.workers = ic.workers;
  const json sweep = cfg.value("sweep", json::object());
  for (const auto& [key, _] : sweep.items())
    if (key != "sigmas" && key != "seeds") throw ConfigError("config: unknown key 'sweep." + key + "'");
  try {
    opts.sigmas = sweep.value("sigmas", std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.5, 1.0});
    opts.seeds = sweep.value("seeds", std::vector<std::uint64_t>{ic.master_seed});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad sweep section: ") + e.what());
  }
  if (opts.sigmas.empty() || opts.seeds.empty()) throw ConfigError("config: sweep needs sigmas and seeds");
  for (double s : opts.sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("config: sweep sigmas must be finite and >= 0");
  const std::string split = get_or<std::string>(cfg, "split", "golden");
  const auto puzzles = cap(load_split(data_dir, split), cfg);
  if (puzzles.empty()) throw ConfigError("config: split '" + split + "' is empty");

  const auto t0 = std::chrono::steady_clock::now();
  const auto table = sigma_sweep(ckpt.params, std::span<const PuzzleInstance>(puzzles), opts);
  CsvTable rows;
  rows.header = {"sigma", "seed", "deterministic", "pass", "best_q", "mode"};
  for (const auto& r : table.rows)
    rows.add_row({format_number(r.sigma), std::to_string(r.seed), format_number(r.deterministic),
                  format_number(r.pass), format_number(r.best_q), format_number(r.mode)});
  CsvTable summary;
  summary.header = {"sigma", "pass_mean", "pass_spread", "best_q_mean", "best_q_spread", "mode_mean", "mode_spread"};
  for (const auto& s : table.summary)
    summary.add_row({format_number(s.sigma), format_number(s.pass_mean), format_number(s.pass_spread),
                     format_number(s.best_q_mean), format_number(s.best_q_spread), format_number(s.mode_mean),
                     format_number(s.mode_spread)});
  write_csv(out / "sweep.csv", rows);
  write_csv(out / "sweep_summary.csv", summary);
  render_sweep(out);
  json report = provenance(cfg);
  report["split"] = split;
  report["puzzles"] = puzzles.size();
  report["rollouts"] = opts.rollouts;
  report["depth"] = opts.depth;
  report["deterministic"] = table.deterministic;
  json js = json::array();
  for (const auto& s : table.summary)
    js.push_back({{"sigma", s.sigma}, {"pass_mean", s.pass_mean}, {"best_q_mean", s.best_q_mean},
                  {"mode_mean", s.mode_mean}, {"pass_spread", s.pass_spread}, {"best_q_spread", s.best_q_spread},
                  {"mode_spread", s.mode_spread}});
  report["summary"] = js;
  write_text_file(out / "sweep_report.json", pretty(report));
  write_text_file(out / "sweep_meta.json", pretty({{"seconds", elapsed_since(t0)}}));
  log << "sweep: " << table.rows.size() << " rows, deterministic " << format_number(table.deterministic) << "\n";
  return report;
}

// --- trace ---------------------------------------------------------------------

json cmd_trace(const json& cfg, std::ostream& log) {
  const fs::path out = out_dir_of(cfg);
  const fs::path data_dir = data_dir_of(cfg);
  const auto ckpt = load_checkpoint_or_config_error(cfg, "checkpoint");
  check_against_manifest(ckpt.params.config, read_manifest(data_dir));
  auto ic = infer_config(cfg, ckpt.params.config);
  ic.trace = true;
  const std::string split = get_or<std::string>(cfg, "split", "golden");
  const auto puzzles = load_split(data_dir, split);
  const json tr = cfg.value("trace", json::object());
  for (const auto& [key, _] : tr.items())
    if (key != "puzzle_id") throw ConfigError("config: unknown key 'trace." + key + "'");
  const std::string wanted = tr.value("puzzle_id", std::string());

  const PuzzleInstance* puzzle = nullptr;
  if (!wanted.empty()) {
    for (const auto& p : puzzles)
      if (p.id == wanted) puzzle = &p;
    if (!puzzle) throw ConfigError("config: puzzle '" + wanted + "' not found in split '" + split + "'");
  } else {
    // First puzzle the deterministic model gets wrong, else the first one.
    for (const auto& p : puzzles) {
      if (!answer_correct(deterministic_infer(ckpt.params, p.x, ic.depth).answer, p.y)) {
        puzzle = &p;
        break;
      }
    }
    if (!puzzle && !puzzles.empty()) puzzle = &puzzles.front();
    if (!puzzle) throw ConfigError("config: split '" + split + "' is empty");
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto det = deterministic_infer(ckpt.params, puzzle->x, ic.depth, true, &puzzle->y);
  const bool det_correct = answer_correct(det.answer, puzzle->y);
  std::vector<RolloutRecord> records;
  if (!det_correct) {
    records = basin_escape_experiment(ckpt.params, *puzzle, ic).records;
  } else {
    records = ptrm_infer(ckpt.params, puzzle->x, ic, &puzzle->y).records;
  }

  std::ostringstream jsonl;
  std::vector<TrajectoryLog> logs;
  std::vector<std::vector<double>> latents;
  std::size_t escaped = 0;
  for (const auto& r : records) {
    TrajectoryLog tl;
    tl.correct = answer_correct(r.answer, puzzle->y);
    escaped += tl.correct;
    json steps = json::array();
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      tl.q.push_back(r.trace[t].q);
      tl.cell_accuracy.push_back(r.trace[t].cell_accuracy);
      latents.emplace_back(r.trace[t].y.data().begin(), r.trace[t].y.data().end());
      steps.push_back({{"t", t + 1}, {"q", r.trace[t].q}, {"cell_accuracy", r.trace[t].cell_accuracy}});
    }
    jsonl << json{{"k", r.k}, {"correct", tl.correct}, {"answer", r.answer}, {"steps", steps}}.dump() << '\n';
    logs.push_back(std::move(tl));
  }
  write_text_file(out / "trace.jsonl", jsonl.str());

  const auto curves = aggregate_trajectories(logs);
  CsvTable ctab;
  ctab.header = {"step", "group", "mean_q", "mean_cellacc"};
  auto emit = [&](const char* group, const std::vector<double>& q, const std::vector<double>& c) {
    for (std::size_t t = 0; t < q.size(); ++t)
      ctab.add_row({std::to_string(t + 1), group, format_number(q[t]), format_number(c[t])});
  };
  emit("correct", curves.correct_q, curves.correct_cell_accuracy);
  emit("incorrect", curves.incorrect_q, curves.incorrect_cell_accuracy);
  write_csv(out / "curves.csv", ctab);

  json pca_json = nullptr;
  if (latents.size() >= 3) {
    const auto proj = pca_project(latents);
    CsvTable ptab;
    ptab.header = {"k", "t", "pc1", "pc2", "correct"};
    std::size_t idx = 0;
    for (std::size_t i = 0; i < records.size(); ++i)
      for (std::size_t t = 0; t < records[i].trace.size(); ++t, ++idx)
        ptab.add_row({std::to_string(records[i].k), std::to_string(t + 1), format_number(proj.coords[idx][0]),
                      format_number(proj.coords[idx][1]), std::to_string(int(logs[i].correct))});
    write_csv(out / "pca.csv", ptab);
    pca_json = {{"variance", proj.plane.variance}, {"total_variance", proj.total_variance}, {"points", idx}};
  }
  render_trace(out);

  json report = provenance(cfg);
  report["puzzle_id"] = puzzle->id;
  report["split"] = split;
  report["deterministic_correct"] = det_correct;
  report["rollouts"] = records.size();
  report["depth"] = ic.depth;
  report["sigma"] = ic.sigma;
  report["escape_fraction"] = static_cast<double>(escaped) / static_cast<double>(records.size());
  report["pca"] = pca_json;
  write_text_file(out / "trace_report.json", pretty(report));
  write_text_file(out / "trace_meta.json", pretty({{"seconds", elapsed_since(t0)}}));
  log << "trace: " << puzzle->id << ", " << records.size() << " rollouts, escape fraction "
      << format_number(report["escape_fraction"]) << "\n";
  return report;
}

// --- report --------------------------------------------------------------------

json cmd_report(const json& cfg, std::ostream& log) {
  const fs::path in = cfg.contains("input_dir") ? fs::path(get_or<std::string>(cfg, "input_dir", "")) : out_dir_of(cfg);
  if (!fs::is_directory(in)) throw ConfigError("config: report input " + in.string() + " is not a directory");
  json rendered = json::array();
  for (const auto& name : render_training_curve(in)) rendered.push_back(name);
  for (const auto& name : render_sweep(in)) rendered.push_back(name);
  for (const auto& name : render_trace(in)) rendered.push_back(name);
  if (rendered.empty()) throw ConfigError("config: nothing to render in " + in.string());
  log << "report: rendered " << rendered.size() << " charts in " << in.string() << "\n";
  return {{"rendered", rendered}};
}

}  // namespace

// --- rendering (shared by the commands and `report`) ----------------------------

std::vector<std::string> render_training_curve(const fs::path& dir) {
  const auto path = dir / "train_log.jsonl";
  if (!fs::exists(path)) return {};
  std::ifstream in(path);
  Series loss{"loss", {}, {}}, val{"val exact", {}, {}, false, true}, cell{"val cell", {}, {}, true, true};
  CsvTable csv;
  csv.header = {"step", "kind", "value"};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const double step = j["step"].get<double>();
    if (j.contains("event")) {
      val.x.push_back(step);
      val.y.push_back(j["val_exact"]);
      cell.x.push_back(step);
      cell.y.push_back(j["val_cell"]);
      csv.add_row({format_number(step), "val_exact", format_number(j["val_exact"])});
      csv.add_row({format_number(step), "val_cell", format_number(j["val_cell"])});
    } else {
      loss.x.push_back(step);
      loss.y.push_back(j["loss"]);
      csv.add_row({format_number(step), "loss", format_number(j["loss"])});
    }
  }
  LineChart chart{"Training", "optimizer step", "loss", "validation accuracy", {loss, val, cell}};
  write_text_file(dir / "train_curve.svg", render_svg(chart));
  write_csv(dir / "train_curve.csv", csv);
  return {"train_curve.svg"};
}

std::vector<std::string> render_sweep(const fs::path& dir) {
  const auto path = dir / "sweep_summary.csv";
  if (!fs::exists(path)) return {};
  const auto t = read_csv(path);
  LineChart chart{"Accuracy vs noise scale", "sigma", "accuracy", "", {}};
  const auto sc = t.column("sigma");
  for (const auto& [col, label] : std::vector<std::pair<std::string, std::string>>{
           {"pass_mean", "pass@K"}, {"best_q_mean", "best-Q@K"}, {"mode_mean", "mode@K"}}) {
    Series s{label, {}, {}};
    const auto c = t.column(col);
    for (const auto& r : t.rows) {
      s.x.push_back(std::stod(r[sc]));
      s.y.push_back(std::stod(r[c]));
    }
    chart.series.push_back(std::move(s));
  }
  write_text_file(dir / "sweep.svg", render_svg(chart));
  return {"sweep.svg"};
}

std::vector<std::string> render_trace(const fs::path& dir) {
  std::vector<std::string> out;
  if (fs::exists(dir / "curves.csv")) {
    const auto t = read_csv(dir / "curves.csv");
    const auto sc = t.column("step"), gc = t.column("group"), qc = t.column("mean_q"), cc = t.column("mean_cellacc");
    LineChart chart{"Mean Q and cell accuracy per supervision step", "supervision step", "mean Q logit",
                    "mean cell accuracy", {}};
    for (const char* group : {"correct", "incorrect"}) {
      Series q{std::string(group) + " Q", {}, {}}, c{std::string(group) + " cell acc", {}, {}, true, true};
      for (const auto& r : t.rows) {
        if (r[gc] != group) continue;
        q.x.push_back(std::stod(r[sc]));
        q.y.push_back(std::stod(r[qc]));
        c.x.push_back(std::stod(r[sc]));
        c.y.push_back(std::stod(r[cc]));
      }
      if (!q.x.empty()) {
        chart.series.push_back(std::move(q));
        chart.series.push_back(std::move(c));
      }
    }
    write_text_file(dir / "curves.svg", render_svg(chart));
    out.push_back("curves.svg");
  }
  if (fs::exists(dir / "pca.csv")) {
    const auto t = read_csv(dir / "pca.csv");
    const auto x = t.column("pc1"), y = t.column("pc2"), c = t.column("correct");
    ScatterGroup ok{"correct", "#2ca02c", {}, {}}, bad{"incorrect", "#d62728", {}, {}};
    for (const auto& r : t.rows) {
      auto& g = r[c] == "1" ? ok : bad;
      g.x.push_back(std::stod(r[x]));
      g.y.push_back(std::stod(r[y]));
    }
    ScatterChart chart{"Rollout latents in the principal plane", "PC1", "PC2", {bad, ok}};
    write_text_file(dir / "pca.svg", render_svg(chart));
    out.push_back("pca.svg");
  }
  return out;
}

fs::path default_out_dir() {
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "ptrm_out";
}

json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("config: override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("config: bad override key '" + key + "'");
    if (!node->is_object()) throw ConfigError("config: override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train", "eval", "sweep", "trace", "report"};
  return names;
}

json execute_command(const std::string& verb, const json& config, std::ostream& log) {
  if (!config.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [key, _] : config.items())
    if (!kTopLevelKeys.count(key)) throw ConfigError("config: unknown top-level key '" + key + "'");
  if (verb == "gen-data") return cmd_gen_data(config, log);
  if (verb == "train") return cmd_train(config, log);
  if (verb == "eval") return cmd_eval(config, log);
  if (verb == "sweep") return cmd_sweep(config, log);
  if (verb == "trace") return cmd_trace(config, log);
  if (verb == "report") return cmd_report(config, log);
  throw ConfigError("unknown command '" + verb + "'");
}

int run_command(const std::string& verb, const json& config, std::ostream& log) {
  try {
    execute_command(verb, config, log);
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckFailed& e) {
    log << e.what() << "\n";
    return kExitCheck;
  } catch (const std::exception& e) {
    log << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace ptrm
