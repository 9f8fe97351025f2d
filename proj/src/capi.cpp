#include "dagkt/dagkt.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "errors.hpp"
#include "graph_builder.hpp"
#include "hashing.hpp"
#include "log_ingest.hpp"
#include "pipeline.hpp"
#include "synthetic.hpp"

struct dagkt_dataset {
  std::vector<dagkt::ingest::StudentSequence> sequences;
};

struct dagkt_graph {
  dagkt::graph::QKGraph graph;
};

namespace {

using nlohmann::json;

thread_local std::string last_error;

dagkt_status fail(dagkt_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Maps the exception in flight onto a status code.
dagkt_status translate() {
  try {
    throw;
  } catch (const dagkt::ParseError& e) {
    return fail(DAGKT_ERR_PARSE, e.what());
  } catch (const json::parse_error& e) {
    return fail(DAGKT_ERR_PARSE, e.what());
  } catch (const dagkt::ValidationError& e) {
    return fail(DAGKT_ERR_VALIDATION, e.what());
  } catch (const dagkt::LookupError& e) {
    return fail(DAGKT_ERR_VALIDATION, e.what());
  } catch (const dagkt::IoError& e) {
    return fail(DAGKT_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(DAGKT_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(DAGKT_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(DAGKT_ERR_RUNTIME, "unknown error");
  }
}

template <typename F>
dagkt_status guard(F&& body) {
  try {
    body();
    last_error.clear();
    return DAGKT_OK;
  } catch (...) {
    return translate();
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_json_arg(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw dagkt::ParseError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

extern "C" {

const char* dagkt_version(void) { return "0.1.0"; }

const char* dagkt_last_error(void) { return last_error.c_str(); }

void dagkt_string_free(char* s) { std::free(s); }

dagkt_status dagkt_dataset_parse_csv(const char* path, const char* mapping_json, dagkt_dataset** out) {
  if (!path || !out) return fail(DAGKT_ERR_ARGUMENT, "path and out must not be null");
  return guard([&] {
    const auto mapping = dagkt::ingest::ColumnMapping::from_json(parse_json_arg(mapping_json, "column mapping"));
    auto ds = std::make_unique<dagkt_dataset>();
    ds->sequences = dagkt::ingest::parse_log_file(path, mapping);
    *out = ds.release();
  });
}

dagkt_status dagkt_dataset_load(const char* path, dagkt_dataset** out) {
  if (!path || !out) return fail(DAGKT_ERR_ARGUMENT, "path and out must not be null");
  return guard([&] {
    auto ds = std::make_unique<dagkt_dataset>();
    ds->sequences = dagkt::ingest::read_canonical_file(path);
    *out = ds.release();
  });
}

dagkt_status dagkt_dataset_save(const dagkt_dataset* ds, const char* path) {
  if (!ds || !path) return fail(DAGKT_ERR_ARGUMENT, "dataset and path must not be null");
  return guard([&] { dagkt::ingest::write_canonical_file(path, ds->sequences); });
}

dagkt_status dagkt_dataset_stats_json(const dagkt_dataset* ds, char** out_json) {
  if (!ds || !out_json) return fail(DAGKT_ERR_ARGUMENT, "dataset and out must not be null");
  return guard([&] { *out_json = copy_string(dagkt::ingest::compute_stats(ds->sequences).to_json().dump()); });
}

size_t dagkt_dataset_students(const dagkt_dataset* ds) { return ds ? ds->sequences.size() : 0; }

void dagkt_dataset_free(dagkt_dataset* ds) { delete ds; }

dagkt_status dagkt_dataset_save_tables(const dagkt_dataset* ds, const char* difficulty_path,
                                       const char* attempts_path) {
  if (!ds) return fail(DAGKT_ERR_ARGUMENT, "dataset must not be null");
  return guard([&] {
    auto open = [](const char* p) {
      std::ofstream f(p, std::ios::binary);
      if (!f) throw dagkt::IoError(std::string("cannot write '") + p + "'");
      return f;
    };
    if (difficulty_path) {
      auto f = open(difficulty_path);
      dagkt::graph::compute_difficulty(ds->sequences).write_tsv(f);
    }
    if (attempts_path) {
      auto f = open(attempts_path);
      dagkt::graph::compute_attempts(ds->sequences).write_tsv(f);
    }
  });
}

dagkt_status dagkt_synthesize(const char* spec_json, uint64_t seed, dagkt_dataset** out, char** truth_json) {
  if (!out) return fail(DAGKT_ERR_ARGUMENT, "out must not be null");
  return guard([&] {
    const auto spec = dagkt::synth::SynthSpec::from_json(parse_json_arg(spec_json, "synthetic spec"));
    auto corpus = dagkt::synth::generate(spec, seed);
    auto ds = std::make_unique<dagkt_dataset>();
    ds->sequences = std::move(corpus.sequences);
    if (truth_json) *truth_json = copy_string(corpus.truth.to_json().dump());
    *out = ds.release();
  });
}

dagkt_status dagkt_graph_build(const dagkt_dataset* ds, double omega, double lambda, uint32_t min_support,
                               dagkt_graph** out) {
  if (!ds || !out) return fail(DAGKT_ERR_ARGUMENT, "dataset and out must not be null");
  return guard([&] {
    auto g = std::make_unique<dagkt_graph>();
    g->graph = dagkt::graph::build_graph(ds->sequences, dagkt::graph::GraphParams{omega, lambda, min_support});
    *out = g.release();
  });
}

dagkt_status dagkt_graph_load(const char* path, dagkt_graph** out) {
  if (!path || !out) return fail(DAGKT_ERR_ARGUMENT, "path and out must not be null");
  return guard([&] {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dagkt::IoError(std::string("cannot open '") + path + "'");
    auto g = std::make_unique<dagkt_graph>();
    g->graph = dagkt::graph::QKGraph::read_tsv(in);
    *out = g.release();
  });
}

dagkt_status dagkt_graph_save(const dagkt_graph* g, const char* path, const char* note) {
  if (!g || !path) return fail(DAGKT_ERR_ARGUMENT, "graph and path must not be null");
  return guard([&] {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw dagkt::IoError(std::string("cannot write '") + path + "'");
    std::vector<std::string> notes;
    if (note && *note) notes.emplace_back(note);
    g->graph.write_tsv(f, notes);
  });
}

dagkt_status dagkt_graph_hash(const dagkt_graph* g, char** out_hex) {
  if (!g || !out_hex) return fail(DAGKT_ERR_ARGUMENT, "graph and out must not be null");
  return guard([&] { *out_hex = copy_string(g->graph.content_hash()); });
}

size_t dagkt_graph_similarity_edges(const dagkt_graph* g) { return g ? g->graph.similarity_edges().size() : 0; }

size_t dagkt_graph_question_kc_edges(const dagkt_graph* g) { return g ? g->graph.question_kc_edges().size() : 0; }

dagkt_status dagkt_graph_params(const dagkt_graph* g, double* omega, double* lambda, uint32_t* min_support) {
  if (!g) return fail(DAGKT_ERR_ARGUMENT, "graph must not be null");
  const auto& p = g->graph.params();
  if (omega) *omega = p.omega;
  if (lambda) *lambda = p.lambda;
  if (min_support) *min_support = p.min_support;
  return DAGKT_OK;
}

void dagkt_graph_free(dagkt_graph* g) { delete g; }

dagkt_status dagkt_train_cv(const dagkt_dataset* ds, const dagkt_graph* graph, const char* config_json,
                            const char* output_dir, char** report_json) {
  if (!ds) return fail(DAGKT_ERR_ARGUMENT, "dataset must not be null");
  return guard([&] {
    auto config = dagkt::pipeline::TrainConfig::from_json(parse_json_arg(config_json, "train config"));
    if (graph) {
      config.graph = graph->graph.params();
      config.validate();
    }
    std::optional<std::filesystem::path> dir;
    if (output_dir && *output_dir) dir = output_dir;
    const auto report = dagkt::pipeline::run_cv(ds->sequences, config, dir);
    if (report_json) {
      json j = report.to_json();
      j["config"] = config.to_json();
      *report_json = copy_string(j.dump());
    }
  });
}

dagkt_status dagkt_evaluate(const char* checkpoint_dir, const dagkt_graph* graph, const dagkt_dataset* ds,
                            char** report_json) {
  if (!checkpoint_dir || !graph || !ds || !report_json) {
    return fail(DAGKT_ERR_ARGUMENT, "checkpoint, graph, dataset and out must not be null");
  }
  return guard([&] {
    const auto report = dagkt::pipeline::evaluate_checkpoint(checkpoint_dir, graph->graph, ds->sequences);
    *report_json = copy_string(report.to_json().dump());
  });
}

dagkt_status dagkt_ablate(const dagkt_dataset* ds, const char* config_json, const char* variants,
                          char** table_json) {
  if (!ds || !table_json) return fail(DAGKT_ERR_ARGUMENT, "dataset and out must not be null");
  return guard([&] {
    const auto config = dagkt::pipeline::TrainConfig::from_json(parse_json_arg(config_json, "train config"));
    std::vector<dagkt::pipeline::Variant> list;
    std::stringstream ss(variants && *variants ? variants : "R,D,A,DA,G,full");
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) list.push_back(dagkt::pipeline::parse_variant(item));
    }
    if (list.empty()) throw dagkt::ValidationError("no ablation variants given");
    const auto table = dagkt::pipeline::run_ablation(ds->sequences, config, list);
    *table_json = copy_string(table.to_json().dump());
  });
}

dagkt_status dagkt_sha256_file(const char* path, char** out_hex) {
  if (!path || !out_hex) return fail(DAGKT_ERR_ARGUMENT, "path and out must not be null");
  return guard([&] { *out_hex = copy_string(dagkt::sha256_file(path)); });
}

}  // extern "C"
