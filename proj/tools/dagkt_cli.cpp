// dagkt command-line front end. Talks to the library only through the C API.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dagkt/dagkt.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;

// A failed library call, carrying its status for the exit code.
struct CallError {
  dagkt_status status;
  std::string message;
};

void check(dagkt_status s) {
  if (s != DAGKT_OK) throw CallError{s, dagkt_last_error()};
}

struct StringDeleter {
  void operator()(char* s) const { dagkt_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct DatasetDeleter {
  void operator()(dagkt_dataset* d) const { dagkt_dataset_free(d); }
};
using Dataset = std::unique_ptr<dagkt_dataset, DatasetDeleter>;

struct GraphDeleter {
  void operator()(dagkt_graph* g) const { dagkt_graph_free(g); }
};
using Graph = std::unique_ptr<dagkt_graph, GraphDeleter>;

std::string take(char* raw) {
  OwnedString owned(raw);
  return owned ? std::string(owned.get()) : std::string();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CallError{DAGKT_ERR_IO, "cannot open config '" + path + "'"};
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CallError{DAGKT_ERR_PARSE, path + ": " + e.what()};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CallError{DAGKT_ERR_IO, "cannot write '" + path.string() + "'"};
  out << text;
}

Dataset load_dataset(const std::string& path) {
  dagkt_dataset* raw = nullptr;
  check(dagkt_dataset_load(path.c_str(), &raw));
  return Dataset(raw);
}

Graph load_graph(const std::string& path) {
  dagkt_graph* raw = nullptr;
  check(dagkt_graph_load(path.c_str(), &raw));
  return Graph(raw);
}

// Provenance record written next to each command's outputs.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), started_(utc_now()) {}

  void input(const std::string& path) {
    char* hex = nullptr;
    check(dagkt_sha256_file(path.c_str(), &hex));
    inputs_.push_back({{"path", path}, {"sha256", take(hex)}});
  }
  void output(const fs::path& path) { outputs_.push_back(path.string()); }
  void config(json c) { config_ = std::move(c); }
  void seed(std::uint64_t s) { seed_ = s; }

  void write(const fs::path& path) const {
    json j{{"command", command_},
           {"version", dagkt_version()},
           {"config", config_},
           {"seeds", seed_ ? json::array({*seed_}) : json::array()},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"started_at", started_},
           {"finished_at", utc_now()}};
    write_text(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::string started_;
  json config_ = json::object();
  std::optional<std::uint64_t> seed_;
  json inputs_ = json::array();
  std::vector<std::string> outputs_;
};

fs::path sibling(const fs::path& output, const std::string& suffix) {
  return output.parent_path() / (output.filename().string() + suffix);
}

struct Options {
  std::string input;
  std::string output;
  std::string config;
  std::string graph;
  std::string checkpoint;
  std::string variant;
  std::string truth;
  std::uint64_t seed = 0;
  double omega = 0.0;
  double lambda = 0.0;
  std::uint32_t min_support = 0;
  std::size_t folds = 0;
  std::size_t epochs = 0;
  bool derive_attempts = false;
};

// Flags given on the command line (or through the environment) win over the config file.
void apply_flags(json& cfg, const CLI::App& cmd, const Options& o) {
  auto given = [&](const char* name) {
    const auto* opt = cmd.get_option_no_throw(name);
    return opt && opt->count() > 0;
  };
  if (given("--seed")) cfg["seed"] = o.seed;
  if (given("--omega")) cfg["omega"] = o.omega;
  if (given("--lambda")) cfg["lambda"] = o.lambda;
  if (given("--min-support")) cfg["min_support"] = o.min_support;
  if (given("--folds")) cfg["folds"] = o.folds;
  if (given("--epochs")) cfg["epochs"] = o.epochs;
  if (given("--variant")) cfg["variant"] = o.variant;
}

json load_config(const Options& o) { return o.config.empty() ? json::object() : read_json_file(o.config); }

void cmd_ingest(const Options& o) {
  Manifest m("ingest");
  json mapping = load_config(o);
  if (o.derive_attempts) mapping["attempts"] = "";
  m.config(mapping);
  m.input(o.input);
  dagkt_dataset* raw = nullptr;
  check(dagkt_dataset_parse_csv(o.input.c_str(), mapping.dump().c_str(), &raw));
  Dataset ds(raw);
  check(dagkt_dataset_save(ds.get(), o.output.c_str()));
  char* stats = nullptr;
  check(dagkt_dataset_stats_json(ds.get(), &stats));
  const auto stats_path = sibling(o.output, ".stats.json");
  write_text(stats_path, json::parse(take(stats)).dump(2) + "\n");
  m.output(o.output);
  m.output(stats_path);
  m.write(sibling(o.output, ".manifest.json"));
}

void cmd_build_graph(const CLI::App& cmd, const Options& o) {
  Manifest m("build-graph");
  json cfg = load_config(o);
  apply_flags(cfg, cmd, o);
  const double omega = cfg.value("omega", 0.7);
  const double lambda = cfg.value("lambda", 0.01);
  const std::uint32_t min_support = cfg.value("min_support", 3u);
  m.config({{"omega", omega}, {"lambda", lambda}, {"min_support", min_support}});
  m.input(o.input);
  auto ds = load_dataset(o.input);
  dagkt_graph* raw = nullptr;
  check(dagkt_graph_build(ds.get(), omega, lambda, min_support, &raw));
  Graph g(raw);
  const fs::path out(o.output);
  const auto manifest_path = sibling(out, ".manifest.json");
  const std::string note = "manifest " + manifest_path.filename().string();
  check(dagkt_graph_save(g.get(), o.output.c_str(), note.c_str()));
  const auto difficulty = sibling(out, ".difficulty.tsv");
  const auto attempts = sibling(out, ".attempts.tsv");
  check(dagkt_dataset_save_tables(ds.get(), difficulty.c_str(), attempts.c_str()));
  m.output(out);
  m.output(difficulty);
  m.output(attempts);
  m.write(manifest_path);
  std::cout << "question-KC edges: " << dagkt_graph_question_kc_edges(g.get())
            << ", similarity edges: " << dagkt_graph_similarity_edges(g.get()) << "\n";
}

void cmd_train(const CLI::App& cmd, const Options& o) {
  Manifest m("train");
  json cfg = load_config(o);
  m.input(o.input);
  auto ds = load_dataset(o.input);
  if (!o.graph.empty()) {
    m.input(o.graph);
    auto g = load_graph(o.graph);
    double omega = 0, lambda = 0;
    std::uint32_t min_support = 0;
    check(dagkt_graph_params(g.get(), &omega, &lambda, &min_support));
    cfg["omega"] = omega;
    cfg["lambda"] = lambda;
    cfg["min_support"] = min_support;
  }
  apply_flags(cfg, cmd, o);
  fs::create_directories(o.output);
  char* report = nullptr;
  check(dagkt_train_cv(ds.get(), nullptr, cfg.dump().c_str(), o.output.c_str(), &report));
  const json r = json::parse(take(report));
  m.config(r.at("config"));
  m.seed(r.at("config").at("seed").get<std::uint64_t>());
  const fs::path dir(o.output);
  m.output(dir / "metrics.jsonl");
  m.output(dir / "report.json");
  for (const auto& f : r.at("folds")) m.output(dir / ("fold_" + std::to_string(f.at("fold").get<int>())));
  m.write(dir / "manifest.json");
  std::printf("mean best AUC over %zu folds: %.4f\n", r.at("folds").size(), r.at("mean_best_auc").get<double>());
}

void cmd_eval(const Options& o) {
  Manifest m("eval");
  m.input(o.input);
  m.input(o.graph);
  m.config({{"checkpoint", o.checkpoint}});
  auto ds = load_dataset(o.input);
  auto g = load_graph(o.graph);
  char* report = nullptr;
  check(dagkt_evaluate(o.checkpoint.c_str(), g.get(), ds.get(), &report));
  const json r = json::parse(take(report));
  if (!o.output.empty()) {
    write_text(o.output, r.dump(2) + "\n");
    m.output(o.output);
    m.write(sibling(o.output, ".manifest.json"));
  }
  std::printf("AUC %.6f over %zu predictions\n", r.at("auc").get<double>(), r.at("predictions").get<std::size_t>());
}

void cmd_ablate(const CLI::App& cmd, const Options& o) {
  Manifest m("ablate");
  json cfg = load_config(o);
  apply_flags(cfg, cmd, o);
  cfg.erase("variant");
  m.config(cfg);
  m.seed(cfg.value("seed", std::uint64_t{0}));
  m.input(o.input);
  auto ds = load_dataset(o.input);
  const std::string variants = o.variant.empty() ? "R,D,A,DA,G,full" : o.variant;
  char* table = nullptr;
  check(dagkt_ablate(ds.get(), cfg.dump().c_str(), variants.c_str(), &table));
  const json t = json::parse(take(table));
  write_text(o.output, t.dump(2) + "\n");
  m.output(o.output);
  m.write(sibling(o.output, ".manifest.json"));
  for (const auto& row : t) {
    std::printf("%-5s %.4f\n", row.at("variant").get<std::string>().c_str(), row.at("mean_best_auc").get<double>());
  }
}

void cmd_synth(const Options& o) {
  Manifest m("synth");
  json spec = load_config(o);
  m.config(spec);
  m.seed(o.seed);
  if (!o.config.empty()) m.input(o.config);
  dagkt_dataset* raw = nullptr;
  char* truth = nullptr;
  check(dagkt_synthesize(spec.dump().c_str(), o.seed, &raw, &truth));
  Dataset ds(raw);
  const std::string truth_text = take(truth);
  check(dagkt_dataset_save(ds.get(), o.output.c_str()));
  m.output(o.output);
  if (!o.truth.empty()) {
    write_text(o.truth, json::parse(truth_text).dump(2) + "\n");
    m.output(o.truth);
  }
  m.write(sibling(o.output, ".manifest.json"));
}

int exit_code(dagkt_status s) {
  switch (s) {
    case DAGKT_OK: return 0;
    case DAGKT_ERR_ARGUMENT: return kExitUsage;
    case DAGKT_ERR_PARSE: return 2;
    case DAGKT_ERR_VALIDATION: return 3;
    case DAGKT_ERR_RUNTIME: return 4;
    case DAGKT_ERR_IO: return 5;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge tracing with a difficulty- and attempt-aware question graph"};
  app.require_subcommand(1);
  Options o;

  auto input = [&](CLI::App* c, const std::string& what) {
    c->add_option("--input", o.input, what)->required()->check(CLI::ExistingFile)->envname("DAGKT_INPUT");
  };
  auto seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed")->envname("DAGKT_SEED"); };
  auto graph_flags = [&](CLI::App* c) {
    c->add_option("--omega", o.omega, "Similarity threshold")->check(CLI::Range(0.0, 1.0))->envname("DAGKT_OMEGA");
    c->add_option("--lambda", o.lambda, "F1 smoothing constant")->envname("DAGKT_LAMBDA");
    c->add_option("--min-support", o.min_support, "Minimum pair co-occurrences")->envname("DAGKT_MIN_SUPPORT");
  };
  auto config = [&](CLI::App* c, const std::string& what) {
    c->add_option("--config", o.config, what)->check(CLI::ExistingFile)->envname("DAGKT_CONFIG");
  };

  auto* ingest = app.add_subcommand("ingest", "Parse a CSV log into canonical sequences");
  input(ingest, "CSV interaction log");
  ingest->add_option("--output", o.output, "Canonical JSONL output")->required();
  config(ingest, "Column mapping JSON");
  ingest->add_flag("--derive-attempts", o.derive_attempts, "Count attempts from repeated (student, question) rows");

  auto* build = app.add_subcommand("build-graph", "Build the question-KC graph and feature tables");
  input(build, "Canonical sequences");
  build->add_option("--output", o.output, "Graph TSV output")->required();
  config(build, "JSON with omega/lambda/min_support");
  graph_flags(build);

  auto* train = app.add_subcommand("train", "Cross-validated training");
  input(train, "Canonical sequences");
  train->add_option("--graph", o.graph, "Graph TSV whose omega/lambda/min_support are reused")
      ->check(CLI::ExistingFile);
  train->add_option("--output", o.output, "Run directory")->required();
  config(train, "Training config JSON");
  seed(train);
  graph_flags(train);
  train->add_option("--variant", o.variant, "full, R, D, A, DA or G")->envname("DAGKT_VARIANT");
  train->add_option("--folds", o.folds, "Cross-validation folds")->envname("DAGKT_FOLDS");
  train->add_option("--epochs", o.epochs, "Epochs per fold")->envname("DAGKT_EPOCHS");

  auto* eval = app.add_subcommand("eval", "Score sequences with a trained checkpoint");
  input(eval, "Canonical sequences");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--graph", o.graph, "Graph the checkpoint was trained on")->required()->check(CLI::ExistingFile);
  eval->add_option("--output", o.output, "Report JSON output");

  auto* ablate = app.add_subcommand("ablate", "Cross-validate each model variant");
  input(ablate, "Canonical sequences");
  ablate->add_option("--output", o.output, "Table JSON output")->required();
  config(ablate, "Training config JSON");
  seed(ablate);
  graph_flags(ablate);
  ablate->add_option("--variant", o.variant, "Comma-separated variants (default all six)");
  ablate->add_option("--folds", o.folds, "Cross-validation folds")->envname("DAGKT_FOLDS");
  ablate->add_option("--epochs", o.epochs, "Epochs per fold")->envname("DAGKT_EPOCHS");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--output", o.output, "Canonical JSONL output")->required();
  config(synth, "Synthetic spec JSON");
  seed(synth);
  synth->add_option("--truth", o.truth, "Ground-truth JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ingest) cmd_ingest(o);
    else if (*build) cmd_build_graph(*build, o);
    else if (*train) cmd_train(*train, o);
    else if (*eval) cmd_eval(o);
    else if (*ablate) cmd_ablate(*ablate, o);
    else if (*synth) cmd_synth(o);
  } catch (const CallError& e) {
    std::cerr << "error: " << e.message << "\n";
    return exit_code(e.status);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(DAGKT_ERR_RUNTIME);
  }
  return 0;
}
