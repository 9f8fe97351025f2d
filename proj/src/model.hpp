#pragma once

// The knowledge-tracing network: GCN propagation over the question-KC graph,
// difficulty/attempt autoencoders, exercise fusion, stacked LSTM and the
// attention readout over history-state x question/skill interactions.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graph_builder.hpp"
#include "json.hpp"
#include "tape.hpp"

namespace dagkt::model {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using ingest::StudentSequence;

enum class GcnActivation { Tanh, Identity };

struct ModelConfig {
  std::size_t embed_dim = 100;
  /// 0 is a test-only setting that returns the raw embedding rows.
  std::size_t gcn_layers = 3;
  /// Sampling cap on question neighbours (of a KC, or similar questions of a question).
  std::size_t gcn_question_neighbors = 4;
  /// Sampling cap on the KCs of a question.
  std::size_t gcn_skill_neighbors = 10;
  std::vector<std::size_t> lstm_layer_sizes{200, 100};
  std::size_t recap_count = 3;
  std::size_t related_skill_count = 4;
  std::size_t encoder_hidden = 100;
  double dropout_keep = 0.8;
  bool use_difficulty = true;
  bool use_attempts = true;
  bool use_similarity_edges = true;
  GcnActivation gcn_activation = GcnActivation::Tanh;

  /// Plain fusion of question and answer only.
  bool plain_fusion() const noexcept { return !use_difficulty && !use_attempts; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Difficulty and attempt statistics from training students only.
struct FeatureStats {
  graph::DifficultyTable difficulty;
  std::uint32_t max_attempts = 1;
  /// Counts every difficulty/attempt lookup; ablations that disable both must leave it at 0.
  mutable std::uint64_t lookups = 0;

  static FeatureStats from_training(const std::vector<StudentSequence>& train);
  /// Falls back to the mean training difficulty for questions unseen in training.
  double difficulty_of(const std::string& question) const;
  /// log(1+m)/log(1+max_attempts), capped at 1.
  double attempt_feature(std::uint32_t attempts) const;

  nlohmann::json to_json() const;
  static FeatureStats from_json(const nlohmann::json& j);
};

/// A dense layer `x W + b`.
struct Dense {
  Parameter weight;
  Parameter bias;
  Var apply(Tape& tape, Var x);
};

struct LstmLayer {
  Parameter input_weight;   // [in, 4H], gate order i, f, g, o
  Parameter hidden_weight;  // [H, 4H]
  Parameter bias;           // [4H]
};

/// Per-layer (h, c) for a batch.
struct HiddenState {
  std::vector<Var> h;
  std::vector<Var> c;
};

struct Encoded {
  Var embedding;       // [n, embed_dim]
  Var reconstruction;  // [n, 1]
};

struct RefinedEmbeddings {
  Var questions;  // [Q, E]
  Var kcs;        // [K, E]
};

enum class Mode { Train, Eval };

/// One batch forward pass. Predictions cover record positions 1..T-1 of
/// every sequence, in batch order then time order.
struct ForwardOutput {
  Var probabilities;
  std::vector<double> labels;
  /// (batch index, record position) of each prediction.
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  std::optional<Var> difficulty_residual;  // d - d~ over valid positions
  std::optional<Var> attempt_residual;     // m - m~ over valid positions
};

class DagktModel {
 public:
  DagktModel(ModelConfig config, graph::Vocabulary questions, graph::Vocabulary kcs,
             const graph::QKGraph& graph, std::uint64_t seed);

  DagktModel(const DagktModel&) = delete;
  DagktModel& operator=(const DagktModel&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  const graph::Vocabulary& questions() const noexcept { return questions_; }
  const graph::Vocabulary& kcs() const noexcept { return kcs_; }
  const std::string& graph_hash() const noexcept { return graph_hash_; }

  /// All trainable parameters in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);
  /// Lookup by name; throws LookupError.
  Parameter& parameter(const std::string& name);

  RefinedEmbeddings gcn_propagate(Tape& tape, Mode mode, std::uint64_t seed, std::uint64_t epoch);
  Encoded encode_difficulty(Tape& tape, Var difficulty);
  Encoded encode_attempts(Tape& tape, Var attempts);
  /// x = ReLU(W3 [W1 [q, d] + b1, W2 [a, m] + b2] + b3); also returns the question branch.
  std::pair<Var, Var> fuse(Tape& tape, Var q, Var d, Var a, Var m);
  /// x = ReLU(W [q, a] + b).
  Var fuse_plain(Tape& tape, Var q, Var a);
  HiddenState initial_state(Tape& tape, std::size_t batch) const;
  /// Returns the new state; its top-layer h is the step output.
  HiddenState lstm_step(Tape& tape, Var x, const HiddenState& state);
  /// Runs the stack from a zero state over `steps` time-major blocks of
  /// `batch` rows; returns the top-layer outputs, row t*batch+b.
  Var run_lstm(Tape& tape, Var inputs, std::size_t steps, std::size_t batch);

  ForwardOutput forward(Tape& tape, const FeatureStats& features,
                        std::span<const StudentSequence* const> batch, Mode mode,
                        std::uint64_t seed, std::uint64_t epoch);

  /// Neighbourhood (self first) of every node, as sampled for (seed, epoch).
  std::vector<std::vector<std::size_t>> sampled_neighborhoods(std::uint64_t seed, std::uint64_t epoch) const;

  void save(const std::filesystem::path& dir, const FeatureStats& features,
            const nlohmann::json& extra = nlohmann::json::object()) const;
  struct Loaded;
  static Loaded load(const std::filesystem::path& dir, const graph::QKGraph& graph);

 private:
  void init_parameters(std::uint64_t seed);
  Encoded encode(Tape& tape, Var x, std::vector<Dense>& encoder, std::vector<Dense>& decoder,
                 const char* what);

  ModelConfig config_;
  graph::Vocabulary questions_;
  graph::Vocabulary kcs_;
  std::string graph_hash_;
  // Node ids: questions [0, Q), KCs [Q, Q + K).
  std::vector<std::vector<std::size_t>> kc_neighbors_;
  std::vector<std::vector<std::size_t>> question_neighbors_;

  Parameter question_embedding_;
  Parameter kc_embedding_;
  Parameter answer_embedding_;
  std::vector<Dense> gcn_;
  std::vector<Dense> difficulty_encoder_, difficulty_decoder_;
  std::vector<Dense> attempt_encoder_, attempt_decoder_;
  std::optional<Dense> fuse_question_, fuse_answer_, fuse_output_, fuse_plain_;
  std::vector<LstmLayer> lstm_;
  Parameter attention_;
  std::uint64_t sample_seed_ = 0;
};

struct DagktModel::Loaded {
  std::unique_ptr<DagktModel> model;
  FeatureStats features;
  nlohmann::json extra;
};

/// p = sigmoid(sum_i softmax(scores)_i * values_i) within each segment.
Var attention_readout(Var values, Var scores, std::vector<std::size_t> offsets);

}  // namespace dagkt::model
