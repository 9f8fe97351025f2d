#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dagkt/dagkt.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  dagkt_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kSpec = R"({"students":30,"questions":10,"kcs":3,"min_length":8,"max_length":12,"planted_pairs":2})";
const char* kTinyModel =
    R"({"embed_dim":4,"lstm_layer_sizes":[5,4],"encoder_hidden":3,"gcn_layers":2})";

std::string tiny_config(int epochs, int folds) {
  return json{{"epochs", epochs}, {"folds", folds}, {"batch_size", 8}, {"model", json::parse(kTinyModel)}}.dump();
}

struct Work {
  fs::path dir;
  explicit Work(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Work() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

// Runs the CLI, returning its exit code; combined output goes to `log`.
int cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(DAGKT_CLI_PATH) + " " + args + " > '" + log + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(CApi, VersionAndArgumentErrors) {
  EXPECT_STRNE(dagkt_version(), "");
  EXPECT_EQ(dagkt_dataset_load(nullptr, nullptr), DAGKT_ERR_ARGUMENT);
  EXPECT_STRNE(dagkt_last_error(), "");
  EXPECT_EQ(dagkt_dataset_students(nullptr), 0u);
  dagkt_dataset_free(nullptr);
  dagkt_graph_free(nullptr);
}

TEST(CApi, ErrorClasses) {
  Work w("dagkt_capi_errors");
  dagkt_dataset* ds = nullptr;
  EXPECT_EQ(dagkt_dataset_parse_csv((w / "missing.csv").c_str(), nullptr, &ds), DAGKT_ERR_IO);
  EXPECT_NE(std::string(dagkt_last_error()).find("missing.csv"), std::string::npos);
  write(w.dir / "bad.csv", "order_id,user_id,problem_id,skill_id,correct\n1,u,p\n");
  EXPECT_EQ(dagkt_dataset_parse_csv((w / "bad.csv").c_str(), nullptr, &ds), DAGKT_ERR_PARSE);
  EXPECT_NE(std::string(dagkt_last_error()).find("line 2"), std::string::npos);
  write(w.dir / "val.csv", "order_id,user_id,problem_id,skill_id,correct\n1,u,p,s,5\n");
  EXPECT_EQ(dagkt_dataset_parse_csv((w / "val.csv").c_str(), nullptr, &ds), DAGKT_ERR_VALIDATION);
  EXPECT_EQ(dagkt_dataset_parse_csv((w / "val.csv").c_str(), "{not json", &ds), DAGKT_ERR_PARSE);
  EXPECT_EQ(dagkt_synthesize(R"({"planted_pairs":99})", 1, &ds, nullptr), DAGKT_ERR_VALIDATION);
  EXPECT_EQ(ds, nullptr);
}

TEST(CApi, SynthesizeBuildSaveLoad) {
  Work w("dagkt_capi_graph");
  dagkt_dataset* ds = nullptr;
  char* truth = nullptr;
  ASSERT_EQ(dagkt_synthesize(kSpec, 3, &ds, &truth), DAGKT_OK) << dagkt_last_error();
  EXPECT_EQ(json::parse(take(truth)).at("planted_pairs").size(), 2u);
  EXPECT_EQ(dagkt_dataset_students(ds), 30u);

  ASSERT_EQ(dagkt_dataset_save(ds, (w / "c.jsonl").c_str()), DAGKT_OK);
  dagkt_dataset* back = nullptr;
  ASSERT_EQ(dagkt_dataset_load((w / "c.jsonl").c_str(), &back), DAGKT_OK);
  char* s1 = nullptr;
  char* s2 = nullptr;
  ASSERT_EQ(dagkt_dataset_stats_json(ds, &s1), DAGKT_OK);
  ASSERT_EQ(dagkt_dataset_stats_json(back, &s2), DAGKT_OK);
  EXPECT_EQ(take(s1), take(s2));

  dagkt_graph* g = nullptr;
  ASSERT_EQ(dagkt_graph_build(ds, 0.7, 0.01, 3, &g), DAGKT_OK);
  EXPECT_EQ(dagkt_graph_question_kc_edges(g), 10u);
  ASSERT_EQ(dagkt_graph_save(g, (w / "g.tsv").c_str(), "note"), DAGKT_OK);
  dagkt_graph* g2 = nullptr;
  ASSERT_EQ(dagkt_graph_load((w / "g.tsv").c_str(), &g2), DAGKT_OK);
  char* h1 = nullptr;
  char* h2 = nullptr;
  ASSERT_EQ(dagkt_graph_hash(g, &h1), DAGKT_OK);
  ASSERT_EQ(dagkt_graph_hash(g2, &h2), DAGKT_OK);
  const auto hash = take(h1);
  EXPECT_EQ(hash.size(), 64u);
  EXPECT_EQ(hash, take(h2));
  double omega = 0;
  uint32_t support = 0;
  ASSERT_EQ(dagkt_graph_params(g2, &omega, nullptr, &support), DAGKT_OK);
  EXPECT_EQ(omega, 0.7);
  EXPECT_EQ(support, 3u);
  EXPECT_EQ(dagkt_graph_build(ds, 1.5, 0.01, 3, &g2), DAGKT_ERR_VALIDATION);

  ASSERT_EQ(dagkt_dataset_save_tables(ds, (w / "d.tsv").c_str(), nullptr), DAGKT_OK);
  EXPECT_FALSE(slurp(w.dir / "d.tsv").empty());
  dagkt_graph_free(g);
  dagkt_graph_free(g2);
  dagkt_dataset_free(ds);
  dagkt_dataset_free(back);
}

TEST(CApi, TrainEvaluateAndRefuseForeignGraph) {
  Work w("dagkt_capi_train");
  dagkt_dataset* ds = nullptr;
  ASSERT_EQ(dagkt_synthesize(kSpec, 5, &ds, nullptr), DAGKT_OK);
  char* report = nullptr;
  ASSERT_EQ(dagkt_train_cv(ds, nullptr, tiny_config(2, 2).c_str(), w.dir.c_str(), &report), DAGKT_OK)
      << dagkt_last_error();
  auto r = json::parse(take(report));
  EXPECT_EQ(r.at("folds").size(), 2u);

  dagkt_graph* fold_graph = nullptr;
  ASSERT_EQ(dagkt_graph_load((w / "fold_0/graph.tsv").c_str(), &fold_graph), DAGKT_OK);
  char* eval = nullptr;
  ASSERT_EQ(dagkt_evaluate((w / "fold_0/checkpoint").c_str(), fold_graph, ds, &eval), DAGKT_OK)
      << dagkt_last_error();
  EXPECT_EQ(json::parse(take(eval)).at("students"), 30);

  dagkt_graph* other = nullptr;
  ASSERT_EQ(dagkt_graph_build(ds, 0.2, 0.01, 1, &other), DAGKT_OK);
  EXPECT_EQ(dagkt_evaluate((w / "fold_0/checkpoint").c_str(), other, ds, &eval), DAGKT_ERR_RUNTIME);
  EXPECT_NE(std::string(dagkt_last_error()).find("graph"), std::string::npos);

  EXPECT_EQ(dagkt_train_cv(ds, nullptr, R"({"epochs":0})", nullptr, &report), DAGKT_ERR_VALIDATION);
  EXPECT_EQ(dagkt_ablate(ds, tiny_config(1, 2).c_str(), "R,bogus", &report), DAGKT_ERR_VALIDATION);
  dagkt_graph_free(fold_graph);
  dagkt_graph_free(other);
  dagkt_dataset_free(ds);
}

TEST(CApi, Sha256File) {
  Work w("dagkt_capi_sha");
  write(w.dir / "abc", "abc");
  char* hex = nullptr;
  ASSERT_EQ(dagkt_sha256_file((w / "abc").c_str(), &hex), DAGKT_OK);
  EXPECT_EQ(take(hex), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cli, IngestBuildGraphIsReproducible) {
  Work w("dagkt_cli_graph");
  std::string csv = "order_id,user_id,problem_id,skill_id,correct\n";
  int order = 0;
  for (int s = 0; s < 6; ++s)
    for (int q = 0; q < 5; ++q)
      csv += std::to_string(++order) + ",u" + std::to_string(s) + ",p" + std::to_string(q) + ",k" +
             std::to_string(q % 2) + "," + std::to_string((s + q) % 3 != 0) + "\n";
  write(w.dir / "log.csv", csv);
  const auto log = w / "log.txt";
  ASSERT_EQ(cli("ingest --input " + (w / "log.csv") + " --output " + (w / "c.jsonl"), log), 0) << slurp(log);
  EXPECT_EQ(json::parse(slurp(w / "c.jsonl.stats.json")).at("students"), 6);
  auto manifest = json::parse(slurp(w / "c.jsonl.manifest.json"));
  EXPECT_EQ(manifest.at("command"), "ingest");
  EXPECT_EQ(manifest.at("inputs").at(0).at("sha256").get<std::string>().size(), 64u);

  const auto args = " --input " + (w / "c.jsonl") + " --omega 0.6 --min-support 2";
  ASSERT_EQ(cli("build-graph" + args + " --output " + (w / "g1.tsv"), log), 0) << slurp(log);
  ASSERT_EQ(cli("build-graph" + args + " --output " + (w / "g2.tsv"), log), 0) << slurp(log);
  auto body = [](std::string text) {
    // Drop the header note that names the output file.
    std::string out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
      if (line.rfind("# manifest", 0) != 0) out += line + "\n";
    return out;
  };
  EXPECT_EQ(body(slurp(w / "g1.tsv")), body(slurp(w / "g2.tsv")));
  EXPECT_EQ(slurp(w / "g1.tsv.difficulty.tsv"), slurp(w / "g2.tsv.difficulty.tsv"));
}

TEST(Cli, TrainEvalAblateAndExitCodes) {
  Work w("dagkt_cli_train");
  const auto log = w / "log.txt";
  write(w.dir / "spec.json", kSpec);
  write(w.dir / "cfg.json", tiny_config(50, 2));
  ASSERT_EQ(cli("synth --config " + (w / "spec.json") + " --seed 4 --output " + (w / "c.jsonl"), log), 0)
      << slurp(log);

  ASSERT_EQ(cli("train --input " + (w / "c.jsonl") + " --config " + (w / "cfg.json") + " --output " + (w / "run"),
                log),
            0)
      << slurp(log);
  std::map<int, int> lines_per_fold;
  std::istringstream metrics(slurp(w / "run/metrics.jsonl"));
  for (std::string line; std::getline(metrics, line);) ++lines_per_fold[json::parse(line).at("fold").get<int>()];
  ASSERT_EQ(lines_per_fold.size(), 2u);
  for (auto [fold, n] : lines_per_fold) EXPECT_GE(n, 50) << "fold " << fold;
  EXPECT_TRUE(fs::exists(w / "run/manifest.json"));

  const auto ckpt = " --checkpoint " + (w / "run/fold_1/checkpoint") + " --input " + (w / "c.jsonl");
  EXPECT_EQ(cli("eval" + ckpt + " --graph " + (w / "run/fold_1/graph.tsv"), log), 0) << slurp(log);
  ASSERT_EQ(cli("build-graph --input " + (w / "c.jsonl") + " --omega 0.1 --output " + (w / "other.tsv"), log), 0);
  EXPECT_EQ(cli("eval" + ckpt + " --graph " + (w / "other.tsv"), log), 4);
  EXPECT_NE(slurp(log).find("graph"), std::string::npos);

  write(w.dir / "cfg1.json", tiny_config(1, 2));
  ASSERT_EQ(cli("ablate --input " + (w / "c.jsonl") + " --config " + (w / "cfg1.json") + " --output " +
                    (w / "table.json"),
                log),
            0)
      << slurp(log);
  auto table = json::parse(slurp(w / "table.json"));
  ASSERT_EQ(table.size(), 6u);

  write(w.dir / "bad.csv", "order_id,user_id,problem_id,skill_id,correct\n1,u,p\n");
  EXPECT_EQ(cli("ingest --input " + (w / "bad.csv") + " --output " + (w / "x.jsonl"), log), 2);
  write(w.dir / "zero.json", R"({"epochs":0})");
  EXPECT_EQ(cli("train --input " + (w / "c.jsonl") + " --config " + (w / "zero.json") + " --output " + (w / "z"),
                log),
            3);
  EXPECT_EQ(cli("synth --config " + (w / "spec.json") + " --output /nonexistent-dir/c.jsonl", log), 5);
  EXPECT_EQ(cli("train --no-such-flag", log), 1);
  EXPECT_EQ(cli("", log), 1);
}
