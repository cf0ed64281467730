// hfdtm: generate synthetic corridors, train and evaluate forecasters, and
// run the comparison and ablation experiments.
//
// Exit codes: 0 success, 2 invalid input, 3 numeric or runtime failure.
// Failures print one JSON object on stderr.

#include "hfdtm/digest.hpp"
#include "hfdtm/errors.hpp"
#include "hfdtm/evaluation.hpp"
#include "hfdtm/synthgen.hpp"
#include "hfdtm/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef HFDTM_VERSION
#define HFDTM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hfdtm;

namespace {

std::string utc_now() {
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return format_timestamp(now) + "Z";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw ValidationError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

/// Records inputs, configuration and outputs of one command.
class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) : started_(utc_now()) {
    j_["command"] = std::move(command);
    j_["argv"] = std::vector<std::string>(argv, argv + argc);
    j_["tool_version"] = HFDTM_VERSION;
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
  }

  void input(const std::string& name, const fs::path& path) {
    j_["inputs"][name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }
  void config(const std::string& config_json, const std::string& digest) {
    j_["config"] = json::parse(config_json);
    j_["config_digest"] = digest;
  }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void output(const std::string& name, const fs::path& path) {
    j_["outputs"][name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }

  void write(const fs::path& dir) {
    j_["started_at"] = started_;
    j_["finished_at"] = utc_now();
    write_file(dir / "manifest.json", j_.dump(2));
  }

 private:
  json j_;
  std::string started_;
};

TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : TrainConfig::from_json(read_file(path));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      seeds.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  if (seeds.empty()) throw ValidationError("--seeds: no seeds given");
  return seeds;
}

struct DataArgs {
  std::string data;
  std::string topology;
};

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "Movement count CSV")->required();
  cmd->add_option("--topology", a.topology, "Corridor topology JSON")->required();
}

struct LoadedData {
  MovementTable table;
  CorridorTopology topology;
};

LoadedData load_data(const DataArgs& a) {
  LoadedData d{load_movement_csv(a.data), load_topology(a.topology)};
  check_table_matches(d.table, d.topology);
  return d;
}

void progress_line(const std::string& line) { std::cerr << line << std::endl; }

// generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> days;
  std::string out = "data";
};

int cmd_generate(const GenerateArgs& a, int argc, char** argv) {
  SynthConfig c = a.config.empty() ? SynthConfig{} : SynthConfig::from_json(read_file(a.config));
  if (a.seed) c.seed = *a.seed;
  if (a.days) c.days = *a.days;
  c.validate();
  const fs::path out(a.out);
  ensure_dir(out);
  Manifest m("generate", argc, argv);
  if (!a.config.empty()) m.input("config", a.config);
  const std::string cfg = c.to_json();
  m.config(cfg, sha256_hex(cfg));
  m.set("seed", c.seed);

  const SynthDataset ds = generate_corridor_data(c);
  const FlowStats stats = compute_flow_statistics(ds.table, ds.topology);
  write_movement_csv(ds.table, out / "counts.csv");
  write_topology(ds.topology, out / "topology.json");
  write_file(out / "flow_stats.json", flow_stats_to_json(stats, ds.topology));
  m.output("data", out / "counts.csv");
  m.output("topology", out / "topology.json");
  m.output("flow_stats", out / "flow_stats.json");
  m.write(out);
  std::cout << fmt::format("wrote {} rows x {} movements to {}\n", ds.table.rows(), ds.table.cols(), out.string());
  std::cout << flow_stats_to_text(stats);
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string config;
  std::string model = "hfdtm";
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

int cmd_train(const TrainArgs& a, int argc, char** argv) {
  TrainConfig c = load_train_config(a.config);
  if (a.seed) c.seed = *a.seed;
  c.validate();
  const ModelKind kind = model_kind_from_string(a.model);
  const LoadedData d = load_data(a.data);
  const fs::path out(a.out);
  ensure_dir(out);
  Manifest m("train", argc, argv);
  m.input("data", a.data.data);
  m.input("topology", a.data.topology);
  if (!a.config.empty()) m.input("config", a.config);
  m.config(c.to_json(), c.digest());
  m.set("seed", c.seed);
  m.set("model", a.model);

  const PreparedData data = prepare_data(d.table, c.window);
  const TrainResult r = train(kind, data, d.topology, c);
  const CheckpointMeta meta{c.seed, c.window, d.topology.digest(), data.normalization.digest()};
  save_checkpoint(r.model, meta, out / "checkpoint.json");
  write_file(out / "history.json", history_to_json(r.history, false));
  m.output("checkpoint", out / "checkpoint.json");
  m.output("history", out / "history.json");
  m.set("train_seconds", r.history.total_seconds);
  m.write(out);
  std::cout << fmt::format("{}: best epoch {} of {}, validation MAE {:.4f} ({:.1f} s)\n", to_string(r.model.kind()),
                           r.history.best_epoch, r.history.epochs.size(), r.history.best_val_mae,
                           r.history.total_seconds);
  return 0;
}

// evaluate ------------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  DataArgs data;
  std::string out;
  bool as_json = false;
};

int cmd_evaluate(const EvaluateArgs& a, int argc, char** argv) {
  const LoadedData d = load_data(a.data);
  const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint, d.topology);
  const PreparedData data = prepare_data(d.table, ckpt.meta.window);
  const MetricsReport report = evaluate_checkpoint(ckpt, data, d.topology);
  std::cout << (a.as_json ? report_to_json(report, false) + "\n" : report_to_text(report));
  if (!a.out.empty()) {
    const fs::path out(a.out);
    ensure_dir(out);
    Manifest m("evaluate", argc, argv);
    m.input("checkpoint", a.checkpoint);
    m.input("data", a.data.data);
    m.input("topology", a.data.topology);
    m.set("seed", ckpt.meta.seed);
    write_file(out / "report.json", report_to_json(report, false));
    write_residual_csv(report, out / "per_movement_mae.csv");
    m.output("report", out / "report.json");
    m.output("per_movement_mae", out / "per_movement_mae.csv");
    m.write(out);
  }
  return 0;
}

// compare / ablate -----------------------------------------------------------

struct ExperimentArgs {
  DataArgs data;
  std::string config;
  std::string seeds = "1,2,3";
  std::string out;
};

int cmd_experiment(const std::string& name, const ExperimentArgs& a, int argc, char** argv) {
  const TrainConfig c = load_train_config(a.config);
  const auto seeds = parse_seeds(a.seeds);
  const LoadedData d = load_data(a.data);
  const PreparedData data = prepare_data(d.table, c.window);
  const ReportTable table = name == "compare" ? run_comparison(data, d.topology, c, seeds, progress_line)
                                              : run_ablation(data, d.topology, c, seeds, progress_line);
  std::cout << table_to_text(table);
  if (!a.out.empty()) {
    const fs::path out(a.out);
    ensure_dir(out);
    Manifest m(name, argc, argv);
    m.input("data", a.data.data);
    m.input("topology", a.data.topology);
    if (!a.config.empty()) m.input("config", a.config);
    m.config(c.to_json(), c.digest());
    m.set("seeds", seeds);
    write_file(out / "table.json", table_to_json(table, false));
    write_file(out / "table.txt", table_to_text(table));
    m.output("table", out / "table.json");
    m.output("table_text", out / "table.txt");
    m.write(out);
  }
  return 0;
}

// analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  DataArgs data;
  std::size_t bins = 20;
  std::string out;
  bool as_json = false;
};

int cmd_analyze(const AnalyzeArgs& a, int argc, char** argv) {
  const LoadedData d = load_data(a.data);
  const FlowStats stats = analyze_dataset(d.table, d.topology, a.bins);
  std::cout << (a.as_json ? flow_stats_to_json(stats, d.topology) + "\n" : flow_stats_to_text(stats));
  if (!a.out.empty()) {
    const fs::path out(a.out);
    ensure_dir(out);
    Manifest m("analyze", argc, argv);
    m.input("data", a.data.data);
    m.input("topology", a.data.topology);
    m.set("bins", a.bins);
    write_file(out / "flow_stats.json", flow_stats_to_json(stats, d.topology));
    m.output("flow_stats", out / "flow_stats.json");
    m.write(out);
  }
  return 0;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical turning-movement forecasting"};
  app.set_version_flag("--version", HFDTM_VERSION);
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic corridor dataset");
  generate->add_option("--config", gen.config, "Generator config JSON");
  generate->add_option("--seed", gen.seed, "Random seed");
  generate->add_option("--days", gen.days, "Number of days")->check(CLI::PositiveNumber);
  generate->add_option("--out,--out-dir", gen.out, "Output directory")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model and save the best checkpoint");
  add_data_options(train_cmd, tr.data);
  train_cmd->add_option("--config", tr.config, "Training config JSON");
  train_cmd->add_option("--model", tr.model, "hfdtm, hfdtm_flat, gru or lstm")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Override the config seed");
  train_cmd->add_option("--out", tr.out, "Output directory")->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  evaluate_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  add_data_options(evaluate_cmd, ev.data);
  evaluate_cmd->add_option("--out", ev.out, "Directory for report files");
  evaluate_cmd->add_flag("--json", ev.as_json, "Print JSON instead of text");

  ExperimentArgs cmp, abl;
  auto* compare = app.add_subcommand("compare", "HFD-TM against the GRU and LSTM baselines");
  auto* ablate = app.add_subcommand("ablate", "HFD-TM with one component removed at a time");
  for (auto [cmd, args] : {std::pair{compare, &cmp}, std::pair{ablate, &abl}}) {
    add_data_options(cmd, args->data);
    cmd->add_option("--config", args->config, "Training config JSON");
    cmd->add_option("--seeds", args->seeds, "Comma-separated seeds")->capture_default_str();
    cmd->add_option("--out", args->out, "Directory for table files");
  }

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Flow statistics of a dataset");
  add_data_options(analyze, an.data);
  analyze->add_option("--bins", an.bins, "Conditioning bins")->capture_default_str();
  analyze->add_option("--out", an.out, "Directory for the report");
  analyze->add_flag("--json", an.as_json, "Print JSON instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    if (generate->parsed()) return cmd_generate(gen, argc, argv);
    if (train_cmd->parsed()) return cmd_train(tr, argc, argv);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ev, argc, argv);
    if (compare->parsed()) return cmd_experiment("compare", cmp, argc, argv);
    if (ablate->parsed()) return cmd_experiment("ablate", abl, argc, argv);
    if (analyze->parsed()) return cmd_analyze(an, argc, argv);
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), 2);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 3);
  }
  return 0;
}
