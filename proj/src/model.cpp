#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

#include "errors.hpp"
#include "json_util.hpp"
#include "param_io.hpp"
#include "random.hpp"

namespace dagkt::model {
namespace {

using nlohmann::json;

constexpr std::uint64_t kEvalEpoch = ~std::uint64_t{0};

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values) v = rng.uniform(-limit, limit);
  return t;
}

Tensor normal_table(Rng& rng, std::size_t rows, std::size_t cols, double sd) {
  Tensor t({rows, cols});
  for (auto& v : t.values) v = sd * rng.normal();
  return t;
}

Dense make_dense(Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  return Dense{Parameter(name + ".weight", xavier(rng, in, out)), Parameter(name + ".bias", Tensor({out}))};
}

std::vector<Dense> make_stack(Rng& rng, const std::string& name, std::initializer_list<std::size_t> dims) {
  std::vector<std::size_t> d(dims);
  std::vector<Dense> layers;
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    layers.push_back(make_dense(rng, name + "." + std::to_string(i), d[i], d[i + 1]));
  }
  return layers;
}

bool share_kc(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i; else ++j;
  }
  return false;
}

std::vector<std::size_t> sample(const std::vector<std::size_t>& pool, std::size_t cap, Rng& rng) {
  if (pool.size() <= cap) return pool;
  std::vector<std::size_t> v = pool;
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t j = i + rng.index(v.size() - i);
    std::swap(v[i], v[j]);
  }
  v.resize(cap);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0) throw ValidationError("model config: embed_dim must be positive");
  if (gcn_question_neighbors == 0 || gcn_skill_neighbors == 0) {
    throw ValidationError("model config: neighbour caps must be at least 1");
  }
  if (recap_count == 0 || related_skill_count == 0) {
    throw ValidationError("model config: recap_count and related_skill_count must be at least 1");
  }
  if (lstm_layer_sizes.empty() ||
      std::find(lstm_layer_sizes.begin(), lstm_layer_sizes.end(), 0u) != lstm_layer_sizes.end()) {
    throw ValidationError("model config: lstm_layer_sizes must be nonempty and positive");
  }
  if (lstm_layer_sizes.back() != embed_dim) {
    throw ValidationError("model config: the top LSTM layer must have embed_dim units");
  }
  if (encoder_hidden == 0) throw ValidationError("model config: encoder_hidden must be positive");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) {
    throw ValidationError("model config: dropout_keep must lie in (0, 1]");
  }
}

json ModelConfig::to_json() const {
  return json{{"embed_dim", embed_dim},
              {"gcn_layers", gcn_layers},
              {"gcn_question_neighbors", gcn_question_neighbors},
              {"gcn_skill_neighbors", gcn_skill_neighbors},
              {"lstm_layer_sizes", lstm_layer_sizes},
              {"recap_count", recap_count},
              {"related_skill_count", related_skill_count},
              {"encoder_hidden", encoder_hidden},
              {"dropout_keep", dropout_keep},
              {"use_difficulty", use_difficulty},
              {"use_attempts", use_attempts},
              {"use_similarity_edges", use_similarity_edges},
              {"gcn_activation", gcn_activation == GcnActivation::Tanh ? "tanh" : "identity"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  reject_unknown_keys(j, ModelConfig{}.to_json(), "model config");
  ModelConfig c;
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.gcn_layers = j.value("gcn_layers", c.gcn_layers);
    c.gcn_question_neighbors = j.value("gcn_question_neighbors", c.gcn_question_neighbors);
    c.gcn_skill_neighbors = j.value("gcn_skill_neighbors", c.gcn_skill_neighbors);
    c.lstm_layer_sizes = j.value("lstm_layer_sizes", c.lstm_layer_sizes);
    c.recap_count = j.value("recap_count", c.recap_count);
    c.related_skill_count = j.value("related_skill_count", c.related_skill_count);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.dropout_keep = j.value("dropout_keep", c.dropout_keep);
    c.use_difficulty = j.value("use_difficulty", c.use_difficulty);
    c.use_attempts = j.value("use_attempts", c.use_attempts);
    c.use_similarity_edges = j.value("use_similarity_edges", c.use_similarity_edges);
    const auto act = j.value("gcn_activation", std::string("tanh"));
    if (act == "tanh") {
      c.gcn_activation = GcnActivation::Tanh;
    } else if (act == "identity") {
      c.gcn_activation = GcnActivation::Identity;
    } else {
      throw ValidationError("model config: gcn_activation must be 'tanh' or 'identity'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

FeatureStats FeatureStats::from_training(const std::vector<StudentSequence>& train) {
  FeatureStats f;
  f.difficulty = graph::compute_difficulty(train);
  for (const auto& s : train)
    for (const auto& r : s.records) f.max_attempts = std::max(f.max_attempts, r.attempts);
  return f;
}

double FeatureStats::difficulty_of(const std::string& question) const {
  ++lookups;
  if (difficulty.contains(question)) return difficulty.difficulty(question);
  return difficulty.mean_difficulty();
}

double FeatureStats::attempt_feature(std::uint32_t attempts) const {
  if (attempts < 1) throw ValidationError("attempt count must be at least 1");
  ++lookups;
  const double v = std::log1p(static_cast<double>(attempts)) /
                   std::log1p(static_cast<double>(std::max<std::uint32_t>(max_attempts, 1)));
  return std::min(v, 1.0);
}

json FeatureStats::to_json() const {
  json rows = json::array();
  for (const auto& [q, d] : difficulty.rows()) rows.push_back({q, d.n_correct, d.n_total});
  return json{{"max_attempts", max_attempts}, {"difficulty", std::move(rows)}};
}

FeatureStats FeatureStats::from_json(const json& j) {
  std::map<std::string, graph::QuestionDifficulty> rows;
  for (const auto& row : j.at("difficulty")) {
    graph::QuestionDifficulty d;
    d.n_correct = row.at(1).get<std::uint64_t>();
    d.n_total = row.at(2).get<std::uint64_t>();
    d.accuracy = static_cast<double>(d.n_correct) / static_cast<double>(d.n_total);
    d.difficulty = 1.0 - d.accuracy;
    rows.emplace(row.at(0).get<std::string>(), d);
  }
  FeatureStats f;
  f.difficulty = graph::DifficultyTable(std::move(rows));
  f.max_attempts = j.at("max_attempts").get<std::uint32_t>();
  return f;
}

Var Dense::apply(Tape& tape, Var x) {
  return ad::add(ad::matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

DagktModel::DagktModel(ModelConfig config, graph::Vocabulary questions, graph::Vocabulary kcs,
                       const graph::QKGraph& graph, std::uint64_t seed)
    : config_(std::move(config)),
      questions_(std::move(questions)),
      kcs_(std::move(kcs)),
      graph_hash_(graph.content_hash()),
      kc_neighbors_(questions_.size() + kcs_.size()),
      question_neighbors_(questions_.size() + kcs_.size()) {
  config_.validate();
  if (questions_.size() == 0 || kcs_.size() == 0) {
    throw ValidationError("model needs at least one question and one KC");
  }
  const std::size_t q_count = questions_.size();
  for (const auto& [q, k] : graph.question_kc_edges()) {
    const std::size_t qi = questions_.at(q);
    const std::size_t ki = q_count + kcs_.at(k);
    kc_neighbors_[qi].push_back(ki);
    question_neighbors_[ki].push_back(qi);
  }
  for (const auto& e : graph.similarity_edges()) {
    const std::size_t a = questions_.at(e.a);
    const std::size_t b = questions_.at(e.b);
    question_neighbors_[a].push_back(b);
    question_neighbors_[b].push_back(a);
  }
  for (auto* lists : {&kc_neighbors_, &question_neighbors_}) {
    for (auto& l : *lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  }
  init_parameters(seed);
}

void DagktModel::init_parameters(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1A17));
  const std::size_t e = config_.embed_dim;
  const std::size_t h = config_.encoder_hidden;
  question_embedding_ = Parameter("question_embedding", normal_table(rng, questions_.size(), e, 0.1));
  kc_embedding_ = Parameter("kc_embedding", normal_table(rng, kcs_.size(), e, 0.1));
  answer_embedding_ = Parameter("answer_embedding", normal_table(rng, 2, e, 0.1));
  gcn_.clear();
  for (std::size_t l = 0; l < config_.gcn_layers; ++l) {
    gcn_.push_back(make_dense(rng, "gcn." + std::to_string(l), e, e));
  }
  if (config_.use_difficulty) {
    difficulty_encoder_ = make_stack(rng, "difficulty.encoder", {1, h, h, e});
    difficulty_decoder_ = make_stack(rng, "difficulty.decoder", {e, h, h, 1});
  }
  if (config_.use_attempts) {
    attempt_encoder_ = make_stack(rng, "attempts.encoder", {1, h, h, e});
    attempt_decoder_ = make_stack(rng, "attempts.decoder", {e, h, h, 1});
  }
  if (config_.plain_fusion()) {
    fuse_plain_ = make_dense(rng, "fusion.plain", 2 * e, e);
  } else {
    fuse_question_ = make_dense(rng, "fusion.question_difficulty", 2 * e, e);
    fuse_answer_ = make_dense(rng, "fusion.answer_attempts", 2 * e, e);
    fuse_output_ = make_dense(rng, "fusion.output", 2 * e, e);
  }
  lstm_.clear();
  std::size_t in = e;
  for (std::size_t l = 0; l < config_.lstm_layer_sizes.size(); ++l) {
    const std::size_t units = config_.lstm_layer_sizes[l];
    const std::string name = "lstm." + std::to_string(l);
    Tensor bias({4 * units});
    for (std::size_t i = units; i < 2 * units; ++i) bias.values[i] = 1.0;  // forget gate
    lstm_.push_back(LstmLayer{Parameter(name + ".input_weight", xavier(rng, in, 4 * units)),
                              Parameter(name + ".hidden_weight", xavier(rng, units, 4 * units)),
                              Parameter(name + ".bias", std::move(bias))});
    in = units;
  }
  attention_ = Parameter("predict.attention", xavier(rng, e, e));
  sample_seed_ = mix_seed(seed, 0x5A4D);
}

std::vector<Parameter*> DagktModel::parameters() {
  std::vector<Parameter*> out{&question_embedding_, &kc_embedding_, &answer_embedding_};
  auto add_stack = [&](std::vector<Dense>& stack) {
    for (auto& d : stack) {
      out.push_back(&d.weight);
      out.push_back(&d.bias);
    }
  };
  add_stack(gcn_);
  add_stack(difficulty_encoder_);
  add_stack(difficulty_decoder_);
  add_stack(attempt_encoder_);
  add_stack(attempt_decoder_);
  for (auto* d : {&fuse_question_, &fuse_answer_, &fuse_output_, &fuse_plain_}) {
    if (*d) {
      out.push_back(&(*d)->weight);
      out.push_back(&(*d)->bias);
    }
  }
  for (auto& l : lstm_) {
    out.push_back(&l.input_weight);
    out.push_back(&l.hidden_weight);
    out.push_back(&l.bias);
  }
  out.push_back(&attention_);
  return out;
}

std::vector<Tensor> DagktModel::snapshot() const {
  std::vector<Tensor> out;
  for (auto* p : const_cast<DagktModel*>(this)->parameters()) out.push_back(p->value);
  return out;
}

void DagktModel::restore(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape != params[i]->value.shape) {
      throw ShapeError("restore: shape mismatch for '" + params[i]->name + "'");
    }
    params[i]->value = values[i];
  }
}

Parameter& DagktModel::parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw LookupError("model has no parameter '" + name + "'");
}

std::vector<std::vector<std::size_t>> DagktModel::sampled_neighborhoods(std::uint64_t seed,
                                                                       std::uint64_t epoch) const {
  const std::size_t q_count = questions_.size();
  std::vector<std::vector<std::size_t>> out(kc_neighbors_.size());
  for (std::size_t v = 0; v < out.size(); ++v) {
    Rng rng(mix_seed(mix_seed(seed, epoch), v));
    auto& n = out[v];
    n.push_back(v);
    if (v < q_count) {
      auto ks = sample(kc_neighbors_[v], config_.gcn_skill_neighbors, rng);
      n.insert(n.end(), ks.begin(), ks.end());
      if (config_.use_similarity_edges) {
        auto qs = sample(question_neighbors_[v], config_.gcn_question_neighbors, rng);
        n.insert(n.end(), qs.begin(), qs.end());
      }
    } else {
      auto qs = sample(question_neighbors_[v], config_.gcn_question_neighbors, rng);
      n.insert(n.end(), qs.begin(), qs.end());
    }
  }
  return out;
}

RefinedEmbeddings DagktModel::gcn_propagate(Tape& tape, Mode mode, std::uint64_t seed,
                                            std::uint64_t epoch) {
  Var q = tape.parameter(question_embedding_);
  Var k = tape.parameter(kc_embedding_);
  if (config_.gcn_layers == 0) return {q, k};

  const auto hoods = sampled_neighborhoods(sample_seed_, mode == Mode::Eval ? kEvalEpoch : epoch);
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> columns;
  for (const auto& n : hoods) {
    columns.insert(columns.end(), n.begin(), n.end());
    offsets.push_back(columns.size());
  }
  const Var parts[] = {q, k};
  Var h = ad::concat_rows(parts);
  for (std::size_t l = 0; l < gcn_.size(); ++l) {
    Var x = ad::dropout(h, config_.dropout_keep, mode == Mode::Train, mix_seed(seed, 0xD0 + l));
    Var z = gcn_[l].apply(tape, ad::neighbor_mean(x, offsets, columns));
    h = config_.gcn_activation == GcnActivation::Tanh ? ad::tanh(z) : z;
  }
  return {ad::slice_rows(h, 0, questions_.size()), ad::slice_rows(h, questions_.size(), kcs_.size())};
}

Encoded DagktModel::encode(Tape& tape, Var x, std::vector<Dense>& encoder, std::vector<Dense>& decoder,
                           const char* what) {
  if (encoder.size() != 3 || decoder.size() != 3) {
    throw ValidationError(std::string(what) + " encoder is disabled in this configuration");
  }
  const auto& v = x.value();
  if (v.cols() != 1) throw ShapeError(std::string(what) + " encoder expects a column of scalars");
  for (double s : v.values) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError(std::string(what) + " input " + std::to_string(s) +
                            " lies outside the normalized range [0, 1]");
    }
  }
  Var e = ad::tanh(encoder[0].apply(tape, x));
  e = ad::sigmoid(encoder[1].apply(tape, e));
  e = ad::sigmoid(encoder[2].apply(tape, e));
  Var r = ad::tanh(decoder[0].apply(tape, e));
  r = ad::sigmoid(decoder[1].apply(tape, r));
  r = ad::sigmoid(decoder[2].apply(tape, r));
  return {e, r};
}

Encoded DagktModel::encode_difficulty(Tape& tape, Var difficulty) {
  return encode(tape, difficulty, difficulty_encoder_, difficulty_decoder_, "difficulty");
}

Encoded DagktModel::encode_attempts(Tape& tape, Var attempts) {
  return encode(tape, attempts, attempt_encoder_, attempt_decoder_, "attempts");
}

std::pair<Var, Var> DagktModel::fuse(Tape& tape, Var q, Var d, Var a, Var m) {
  if (!fuse_question_) throw ValidationError("fusion weights are disabled in this configuration");
  const std::size_t e = config_.embed_dim;
  for (Var v : {q, d, a, m}) {
    if (v.value().cols() != e) {
      throw ShapeError("fuse: input of shape " + ad::to_string(v.shape()) + " does not have " +
                       std::to_string(e) + " columns");
    }
  }
  Var question_branch = fuse_question_->apply(tape, ad::concat({q, d}));
  Var answer_branch = fuse_answer_->apply(tape, ad::concat({a, m}));
  Var x = ad::relu(fuse_output_->apply(tape, ad::concat({question_branch, answer_branch})));
  return {x, question_branch};
}

Var DagktModel::fuse_plain(Tape& tape, Var q, Var a) {
  if (!fuse_plain_) throw ValidationError("plain fusion is disabled in this configuration");
  if (q.value().cols() != config_.embed_dim || a.value().cols() != config_.embed_dim) {
    throw ShapeError("fuse_plain: inputs " + ad::to_string(q.shape()) + " and " +
                     ad::to_string(a.shape()) + " do not match embed_dim");
  }
  return ad::relu(fuse_plain_->apply(tape, ad::concat({q, a})));
}

HiddenState DagktModel::initial_state(Tape& tape, std::size_t batch) const {
  HiddenState s;
  for (auto units : config_.lstm_layer_sizes) {
    s.h.push_back(tape.constant(Tensor({batch, units})));
    s.c.push_back(tape.constant(Tensor({batch, units})));
  }
  return s;
}

namespace {

// One LSTM cell update given the input projection `x W_in + b`.
std::pair<Var, Var> lstm_cell(Tape& tape, LstmLayer& layer, std::size_t units, Var projected_input,
                              Var h, Var c) {
  Var gates = ad::add(projected_input, ad::matmul(h, tape.parameter(layer.hidden_weight)));
  Var in_gate = ad::sigmoid(ad::slice_cols(gates, 0, units));
  Var forget_gate = ad::sigmoid(ad::slice_cols(gates, units, units));
  Var candidate = ad::tanh(ad::slice_cols(gates, 2 * units, units));
  Var out_gate = ad::sigmoid(ad::slice_cols(gates, 3 * units, units));
  Var c_next = ad::add(ad::mul(forget_gate, c), ad::mul(in_gate, candidate));
  return {ad::mul(out_gate, ad::tanh(c_next)), c_next};
}

}  // namespace

HiddenState DagktModel::lstm_step(Tape& tape, Var x, const HiddenState& state) {
  if (state.h.size() != lstm_.size() || state.c.size() != lstm_.size()) {
    throw ShapeError("lstm_step: state has " + std::to_string(state.h.size()) + " layers, model has " +
                     std::to_string(lstm_.size()));
  }
  HiddenState next;
  Var input = x;
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    auto& layer = lstm_[l];
    const std::size_t units = config_.lstm_layer_sizes[l];
    if (input.value().cols() != layer.input_weight.value.shape[0] ||
        state.h[l].value().cols() != units || state.c[l].value().cols() != units) {
      throw ShapeError("lstm_step: layer " + std::to_string(l) + " got input " +
                       ad::to_string(input.shape()) + " and state " + ad::to_string(state.h[l].shape()));
    }
    Var projected = ad::add(ad::matmul(input, tape.parameter(layer.input_weight)), tape.parameter(layer.bias));
    auto [h, c] = lstm_cell(tape, layer, units, projected, state.h[l], state.c[l]);
    next.h.push_back(h);
    next.c.push_back(c);
    input = h;
  }
  return next;
}

Var DagktModel::run_lstm(Tape& tape, Var inputs, std::size_t steps, std::size_t batch) {
  if (steps == 0 || inputs.value().rows() < steps * batch) {
    throw ShapeError("run_lstm: input " + ad::to_string(inputs.shape()) + " is shorter than " +
                     std::to_string(steps) + " steps of " + std::to_string(batch) + " rows");
  }
  // Layer by layer, so each layer's input projection is one matmul over all steps.
  Var layer_input = ad::slice_rows(inputs, 0, steps * batch);
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    auto& layer = lstm_[l];
    const std::size_t units = config_.lstm_layer_sizes[l];
    Var projected =
        ad::add(ad::matmul(layer_input, tape.parameter(layer.input_weight)), tape.parameter(layer.bias));
    Var h = tape.constant(Tensor({batch, units}));
    Var c = h;
    std::vector<Var> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      std::tie(h, c) = lstm_cell(tape, layer, units, ad::slice_rows(projected, t * batch, batch), h, c);
      outputs.push_back(h);
    }
    layer_input = ad::concat_rows(outputs);
  }
  return layer_input;
}

Var attention_readout(Var values, Var scores, std::vector<std::size_t> offsets) {
  Var weights = ad::segment_softmax(scores, offsets);
  return ad::sigmoid(ad::segment_sum(ad::mul(weights, values), std::move(offsets)));
}

ForwardOutput DagktModel::forward(Tape& tape, const FeatureStats& features,
                                  std::span<const StudentSequence* const> batch, Mode mode,
                                  std::uint64_t seed, std::uint64_t epoch) {
  if (batch.empty()) throw ValidationError("forward: empty batch");
  const std::size_t b_count = batch.size();
  std::size_t t_count = 0;
  for (const auto* s : batch) t_count = std::max(t_count, s->records.size());
  if (t_count < 2) throw ValidationError("forward: sequences need at least two records");
  const std::size_t n = t_count * b_count;
  const std::size_t e = config_.embed_dim;

  std::vector<std::size_t> q_idx(n, 0), a_idx(n, 0), valid_rows;
  std::vector<double> d_vals(n, 0.0), m_vals(n, 0.0), d_valid, m_valid;
  for (std::size_t b = 0; b < b_count; ++b) {
    const auto& recs = batch[b]->records;
    for (std::size_t t = 0; t < recs.size(); ++t) {
      const std::size_t row = t * b_count + b;
      q_idx[row] = questions_.at(recs[t].question_id);
      a_idx[row] = recs[t].correct;
      valid_rows.push_back(row);
      if (config_.use_difficulty) d_vals[row] = features.difficulty_of(recs[t].question_id);
      if (config_.use_attempts) m_vals[row] = features.attempt_feature(recs[t].attempts);
    }
  }
  std::sort(valid_rows.begin(), valid_rows.end());
  for (auto row : valid_rows) {
    d_valid.push_back(d_vals[row]);
    m_valid.push_back(m_vals[row]);
  }

  ForwardOutput out;
  const auto refined = gcn_propagate(tape, mode, seed, epoch);
  Var q = ad::embedding_lookup(refined.questions, q_idx);
  Var a = ad::embedding_lookup(tape.parameter(answer_embedding_), a_idx);

  Var x, target;
  if (config_.plain_fusion()) {
    x = fuse_plain(tape, q, a);
    target = q;
  } else {
    auto residual = [&](const Encoded& enc, const std::vector<double>& truth) {
      Var truth_col = tape.constant(Tensor({truth.size(), 1}, truth));
      return ad::sub(truth_col, ad::embedding_lookup(enc.reconstruction, valid_rows));
    };
    Var d = tape.constant(Tensor({n, e}));
    Var m = d;
    if (config_.use_difficulty) {
      auto enc = encode_difficulty(tape, tape.constant(Tensor({n, 1}, d_vals)));
      d = enc.embedding;
      out.difficulty_residual = residual(enc, d_valid);
    }
    if (config_.use_attempts) {
      auto enc = encode_attempts(tape, tape.constant(Tensor({n, 1}, m_vals)));
      m = enc.embedding;
      out.attempt_residual = residual(enc, m_valid);
    }
    std::tie(x, target) = fuse(tape, q, d, a, m);
  }

  // Knowledge evolution over t = 0..T-2; state row t*B+b feeds the prediction of record t+1.
  Var states = run_lstm(tape, x, t_count - 1, b_count);
  Var projected = ad::matmul(states, tape.parameter(attention_));
  const Var pool_parts[] = {target, refined.kcs};
  Var pool = ad::concat_rows(pool_parts);

  std::vector<std::size_t> state_rows, target_rows, offsets{0};
  std::vector<std::size_t> history, goals;
  for (std::size_t b = 0; b < b_count; ++b) {
    const auto& recs = batch[b]->records;
    for (std::size_t j = 1; j < recs.size(); ++j) {
      const auto& next = recs[j];
      history.assign(1, (j - 1) * b_count + b);
      for (std::size_t s = j - 1; s-- > 0 && history.size() <= config_.recap_count;) {
        if (share_kc(recs[s].kc_ids, next.kc_ids)) history.push_back(s * b_count + b);
      }
      goals.assign(1, j * b_count + b);
      for (std::size_t k = 0; k < next.kc_ids.size() && k < config_.related_skill_count; ++k) {
        goals.push_back(n + kcs_.at(next.kc_ids[k]));
      }
      for (auto sr : history) {
        for (auto gr : goals) {
          state_rows.push_back(sr);
          target_rows.push_back(gr);
        }
      }
      offsets.push_back(state_rows.size());
      out.labels.push_back(next.correct);
      out.positions.emplace_back(b, j);
    }
  }

  Var gathered_targets = ad::embedding_lookup(pool, target_rows);
  Var values = ad::rows_dot(ad::embedding_lookup(states, state_rows), gathered_targets);
  Var scores = ad::rows_dot(ad::embedding_lookup(projected, std::move(state_rows)), gathered_targets);
  out.probabilities = attention_readout(values, scores, std::move(offsets));
  return out;
}

void DagktModel::save(const std::filesystem::path& dir, const FeatureStats& features,
                      const json& extra) const {
  ad::TensorArchive archive;
  for (auto* p : const_cast<DagktModel*>(this)->parameters()) archive.tensors.push_back({p->name, p->value});
  archive.metadata = json{{"model_config", config_.to_json()},
                          {"graph_hash", graph_hash_},
                          {"questions", questions_.ids()},
                          {"kcs", kcs_.ids()},
                          {"features", features.to_json()},
                          {"sample_seed", sample_seed_},
                          {"extra", extra}};
  ad::save_archive(dir, "params", archive);
}

DagktModel::Loaded DagktModel::load(const std::filesystem::path& dir, const graph::QKGraph& graph) {
  auto archive = ad::load_archive(dir, "params");
  const auto& meta = archive.metadata;
  const auto expected = meta.at("graph_hash").get<std::string>();
  const auto actual = graph.content_hash();
  if (expected != actual) {
    throw RuntimeFailure("checkpoint was trained on graph " + expected + " but graph " + actual +
                          " was supplied");
  }
  auto config = ModelConfig::from_json(meta.at("model_config"));
  Loaded loaded;
  loaded.model = std::make_unique<DagktModel>(
      config, graph::Vocabulary(meta.at("questions").get<std::vector<std::string>>()),
      graph::Vocabulary(meta.at("kcs").get<std::vector<std::string>>()), graph, 0);
  loaded.model->sample_seed_ = meta.at("sample_seed").get<std::uint64_t>();
  for (auto* p : loaded.model->parameters()) {
    const auto& t = archive.at(p->name);
    if (t.shape != p->value.shape) {
      throw ValidationError("checkpoint tensor '" + p->name + "' has shape " + ad::to_string(t.shape) +
                            ", expected " + ad::to_string(p->value.shape));
    }
    p->value = t;
    p->zero_grad();
  }
  loaded.features = FeatureStats::from_json(meta.at("features"));
  loaded.extra = meta.value("extra", json::object());
  return loaded;
}

}  // namespace dagkt::model
