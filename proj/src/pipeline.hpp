#pragma once

// Training and evaluation: the three-part loss, rank AUC, k-fold cross
// validation by student, checkpointing and the ablation matrix.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graph_builder.hpp"
#include "json.hpp"
#include "model.hpp"

namespace dagkt::pipeline {

using ingest::StudentSequence;

enum class Variant { R, D, A, DA, G, Full };

/// Accepts R, D, A, DA, G, full/DAGKT (case-insensitive).
Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
/// Switches the difficulty, attempt and similarity-edge components of `base`.
model::ModelConfig apply_variant(model::ModelConfig base, Variant v);

struct TrainConfig {
  model::ModelConfig model;
  Variant variant = Variant::Full;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  /// Longer sequences are split into windows of this many records.
  std::size_t max_seq_len = 200;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 5.0;
  graph::GraphParams graph;
  /// Subsample this many students before splitting; 0 keeps all.
  std::size_t max_students = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  model::ModelConfig effective_model() const { return apply_variant(model, variant); }
};

/// Summed BCE plus summed squared reconstruction residuals.
ad::Var total_loss(const model::ForwardOutput& out);

/// Rank-based ROC AUC with average ranks for ties. Needs both classes.
double roc_auc(std::span<const double> scores, std::span<const double> labels);

/// Splits sequences into consecutive windows of at most `max_len` records;
/// windows shorter than two records are dropped.
std::vector<StudentSequence> split_windows(const std::vector<StudentSequence>& sequences,
                                           std::size_t max_len);

struct Predictions {
  std::vector<double> probabilities;
  std::vector<double> labels;
  /// (sequence index, record position) of each prediction.
  std::vector<std::pair<std::size_t, std::size_t>> positions;
};

/// Eval-mode predictions for every record after the first of each window.
Predictions predict(model::DagktModel& model, const model::FeatureStats& features,
                    const std::vector<StudentSequence>& sequences, std::size_t batch_size,
                    std::size_t max_seq_len);

struct EpochRecord {
  std::size_t fold = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per prediction
  double test_auc = 0.0;
  nlohmann::json to_json() const;
};

struct FoldResult {
  std::size_t fold = 0;
  double best_auc = 0.0;
  std::size_t best_epoch = 0;
  std::size_t train_students = 0;
  std::size_t test_students = 0;
  std::size_t similarity_edges = 0;
  std::string graph_hash;
  std::vector<EpochRecord> epochs;
  nlohmann::json to_json() const;
};

struct CvReport {
  std::string variant;
  std::vector<FoldResult> folds;
  double mean_best_auc = 0.0;
  /// Difficulty/attempt table lookups made while training and evaluating.
  std::uint64_t feature_lookups = 0;
  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct FoldArtifacts {
  model::FeatureStats features;
  graph::QKGraph graph;
  std::unique_ptr<model::DagktModel> model;  // restored to the best epoch
};

/// Trains on `train`, scoring `test` after every epoch. The graph and the
/// feature tables come from `train` only. `vocabulary` supplies every id that
/// needs an embedding row.
FoldResult train_fold(const std::vector<StudentSequence>& train, const std::vector<StudentSequence>& test,
                      const std::vector<StudentSequence>& vocabulary, const TrainConfig& config,
                      std::size_t fold, const EpochCallback& on_epoch = {},
                      FoldArtifacts* artifacts = nullptr);

/// k-fold cross validation by student. With `output_dir`, writes
/// metrics.jsonl, report.json and per-fold graph.tsv + checkpoint/.
CvReport run_cv(const std::vector<StudentSequence>& sequences, const TrainConfig& config,
                const std::optional<std::filesystem::path>& output_dir = std::nullopt,
                const EpochCallback& on_epoch = {});

struct AblationTable {
  std::vector<CvReport> rows;
  nlohmann::json to_json() const;
  double auc(Variant v) const;
};

AblationTable run_ablation(const std::vector<StudentSequence>& sequences, const TrainConfig& config,
                           std::span<const Variant> variants, const EpochCallback& on_epoch = {});

struct EvalReport {
  double auc = 0.0;
  std::size_t predictions = 0;
  std::size_t students = 0;
  nlohmann::json to_json() const;
};

/// Scores `sequences` with a checkpoint; the graph must hash to the one the
/// checkpoint was trained on.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint_dir, const graph::QKGraph& graph,
                               const std::vector<StudentSequence>& sequences);

}  // namespace dagkt::pipeline
