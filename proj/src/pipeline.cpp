#include "pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "adam.hpp"
#include "errors.hpp"
#include "json_util.hpp"
#include "random.hpp"

namespace dagkt::pipeline {
namespace {

using nlohmann::json;

std::vector<const StudentSequence*> pointers(const std::vector<StudentSequence>& seqs) {
  std::vector<const StudentSequence*> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(&s);
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

Variant parse_variant(const std::string& name) {
  std::string n;
  for (char c : name) n += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (n == "R") return Variant::R;
  if (n == "D") return Variant::D;
  if (n == "A") return Variant::A;
  if (n == "DA") return Variant::DA;
  if (n == "G") return Variant::G;
  if (n == "FULL" || n == "DAGKT") return Variant::Full;
  throw ValidationError("unknown variant '" + name + "' (expected R, D, A, DA, G or full)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::R: return "R";
    case Variant::D: return "D";
    case Variant::A: return "A";
    case Variant::DA: return "DA";
    case Variant::G: return "G";
    case Variant::Full: return "full";
  }
  return "?";
}

model::ModelConfig apply_variant(model::ModelConfig base, Variant v) {
  base.use_difficulty = v == Variant::D || v == Variant::DA || v == Variant::Full;
  base.use_attempts = v == Variant::A || v == Variant::DA || v == Variant::Full;
  base.use_similarity_edges = v == Variant::G || v == Variant::Full;
  return base;
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs == 0) throw ValidationError("train config: epochs must be at least 1");
  if (batch_size == 0) throw ValidationError("train config: batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train config: learning_rate must be positive");
  }
  if (folds < 2) throw ValidationError("train config: folds must be at least 2");
  if (max_seq_len < 2) throw ValidationError("train config: max_seq_len must be at least 2");
  if (!(clip_norm >= 0.0)) throw ValidationError("train config: clip_norm must be non-negative");
  if (!(graph.omega >= 0.0 && graph.omega <= 1.0)) {
    throw ValidationError("train config: omega must lie in [0, 1]");
  }
  if (!(graph.lambda > 0.0)) throw ValidationError("train config: lambda must be positive");
  if (graph.min_support < 1) throw ValidationError("train config: min_support must be at least 1");
}

json TrainConfig::to_json() const {
  return json{{"model", model.to_json()},
              {"variant", variant_name(variant)},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"seed", seed},
              {"folds", folds},
              {"max_seq_len", max_seq_len},
              {"clip_norm", clip_norm},
              {"omega", graph.omega},
              {"lambda", graph.lambda},
              {"min_support", graph.min_support},
              {"max_students", max_students}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  reject_unknown_keys(j, TrainConfig{}.to_json(), "train config");
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.graph.omega = j.value("omega", c.graph.omega);
    c.graph.lambda = j.value("lambda", c.graph.lambda);
    c.graph.min_support = j.value("min_support", c.graph.min_support);
    c.max_students = j.value("max_students", c.max_students);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

ad::Var total_loss(const model::ForwardOutput& out) {
  if (out.labels.empty()) throw ValidationError("loss of an empty batch");
  ad::Var loss = ad::binary_cross_entropy(out.probabilities, out.labels);
  if (out.difficulty_residual) loss = ad::add(loss, ad::sum(ad::square(*out.difficulty_residual)));
  if (out.attempt_residual) loss = ad::add(loss, ad::sum(ad::square(*out.attempt_residual)));
  return loss;
}

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("roc_auc: " + std::to_string(scores.size()) + " scores but " +
                          std::to_string(labels.size()) + " labels");
  }
  std::size_t positives = 0;
  for (double l : labels) {
    if (l != 0.0 && l != 1.0) throw ValidationError("roc_auc: labels must be 0 or 1");
    positives += l == 1.0;
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw ValidationError("roc_auc is undefined when only one class is present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) positive_rank_sum += rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<StudentSequence> split_windows(const std::vector<StudentSequence>& sequences,
                                           std::size_t max_len) {
  if (max_len < 2) throw ValidationError("split_windows: max_len must be at least 2");
  std::vector<StudentSequence> out;
  for (const auto& s : sequences) {
    for (std::size_t begin = 0; begin < s.records.size(); begin += max_len) {
      const std::size_t end = std::min(begin + max_len, s.records.size());
      if (end - begin < 2) continue;
      StudentSequence w;
      w.student_id = s.student_id;
      w.records.assign(s.records.begin() + static_cast<std::ptrdiff_t>(begin),
                       s.records.begin() + static_cast<std::ptrdiff_t>(end));
      out.push_back(std::move(w));
    }
  }
  return out;
}

Predictions predict(model::DagktModel& model, const model::FeatureStats& features,
                    const std::vector<StudentSequence>& sequences, std::size_t batch_size,
                    std::size_t max_seq_len) {
  Predictions out;
  std::vector<const StudentSequence*> windows;
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (sequence, offset)
  std::vector<StudentSequence> storage;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    for (std::size_t begin = 0; begin < s.records.size(); begin += max_seq_len) {
      const std::size_t end = std::min(begin + max_seq_len, s.records.size());
      if (end - begin < 2) continue;
      StudentSequence w{s.student_id, {s.records.begin() + static_cast<std::ptrdiff_t>(begin),
                                       s.records.begin() + static_cast<std::ptrdiff_t>(end)}};
      storage.push_back(std::move(w));
      origin.emplace_back(i, begin);
    }
  }
  windows = pointers(storage);
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - b);
    ad::Tape tape;
    auto fwd = model.forward(tape, features, std::span(windows).subspan(b, n), model::Mode::Eval, 0, 0);
    const auto& probs = fwd.probabilities.value().values;
    out.probabilities.insert(out.probabilities.end(), probs.begin(), probs.end());
    out.labels.insert(out.labels.end(), fwd.labels.begin(), fwd.labels.end());
    for (auto [wb, pos] : fwd.positions) {
      const auto [seq, offset] = origin[b + wb];
      out.positions.emplace_back(seq, offset + pos);
    }
  }
  return out;
}

json EpochRecord::to_json() const {
  return json{{"fold", fold}, {"epoch", epoch}, {"train_loss", train_loss}, {"test_auc", test_auc}};
}

json FoldResult::to_json() const {
  return json{{"fold", fold},
              {"best_auc", best_auc},
              {"best_epoch", best_epoch},
              {"train_students", train_students},
              {"test_students", test_students},
              {"similarity_edges", similarity_edges},
              {"graph_hash", graph_hash}};
}

json CvReport::to_json() const {
  json folds_json = json::array();
  for (const auto& f : folds) folds_json.push_back(f.to_json());
  return json{{"variant", variant}, {"folds", folds_json}, {"mean_best_auc", mean_best_auc}};
}

FoldResult train_fold(const std::vector<StudentSequence>& train, const std::vector<StudentSequence>& test,
                      const std::vector<StudentSequence>& vocabulary, const TrainConfig& config,
                      std::size_t fold, const EpochCallback& on_epoch, FoldArtifacts* artifacts) {
  config.validate();
  if (train.empty() || test.empty()) throw ValidationError("train_fold: empty train or test split");
  const auto model_config = config.effective_model();
  auto graph = graph::build_graph(train, config.graph);
  auto features = model::FeatureStats::from_training(train);
  auto model = std::make_unique<model::DagktModel>(model_config, graph::question_vocabulary(vocabulary),
                                                   graph::kc_vocabulary(vocabulary), graph,
                                                   mix_seed(config.seed, fold));
  auto params = model->parameters();
  ad::AdamState adam(params, ad::AdamConfig{.lr = config.learning_rate});

  const auto windows = split_windows(train, config.max_seq_len);
  if (windows.empty()) throw ValidationError("train_fold: no training window has two records");
  auto order = pointers(windows);

  FoldResult result;
  result.fold = fold;
  result.train_students = train.size();
  result.test_students = test.size();
  result.similarity_edges = model_config.use_similarity_edges ? graph.similarity_edges().size() : 0;
  result.graph_hash = graph.content_hash();
  std::vector<ad::Tensor> best;
  result.best_auc = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(mix_seed(mix_seed(config.seed, fold), epoch));
    order = pointers(windows);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t predictions = 0;
    for (std::size_t b = 0, batch = 0; b < order.size(); b += config.batch_size, ++batch) {
      const std::size_t n = std::min(config.batch_size, order.size() - b);
      ad::Tape tape;
      auto fwd = model->forward(tape, features, std::span(order).subspan(b, n), model::Mode::Train,
                                mix_seed(mix_seed(config.seed, fold), epoch * 100003 + batch), epoch);
      ad::Var loss = total_loss(fwd);
      const double value = loss.value().values[0];
      if (!std::isfinite(value)) {
        throw RuntimeFailure("non-finite loss in fold " + std::to_string(fold) + ", epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
      }
      tape.backward(loss);
      if (config.clip_norm > 0.0) ad::clip_grad_norm(params, config.clip_norm);
      ad::adam_step(params, adam);
      loss_sum += value;
      predictions += fwd.labels.size();
    }
    auto preds = predict(*model, features, test, config.batch_size, config.max_seq_len);
    EpochRecord rec{fold, epoch, loss_sum / static_cast<double>(std::max<std::size_t>(predictions, 1)), 0.0};
    try {
      rec.test_auc = roc_auc(preds.probabilities, preds.labels);
    } catch (const ValidationError& e) {
      throw ValidationError("fold " + std::to_string(fold) + ": " + e.what());
    }
    if (!std::isfinite(rec.test_auc)) throw RuntimeFailure("non-finite test AUC");
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.test_auc > result.best_auc) {
      result.best_auc = rec.test_auc;
      result.best_epoch = epoch;
      best = model->snapshot();
    }
  }
  model->restore(best);
  if (artifacts) {
    artifacts->features = std::move(features);
    artifacts->graph = std::move(graph);
    artifacts->model = std::move(model);
  }
  return result;
}

CvReport run_cv(const std::vector<StudentSequence>& sequences, const TrainConfig& config,
                const std::optional<std::filesystem::path>& output_dir, const EpochCallback& on_epoch) {
  config.validate();
  auto data = config.max_students > 0 && config.max_students < sequences.size()
                  ? ingest::sample_students(sequences, config.max_students, config.seed)
                  : sequences;
  const auto splits = ingest::make_folds(data, config.folds, config.seed);
  std::map<std::string, const StudentSequence*> by_id;
  for (const auto& s : data) by_id.emplace(s.student_id, &s);
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<StudentSequence> out;
    for (const auto& id : ids) out.push_back(*by_id.at(id));
    return out;
  };

  std::ofstream metrics;
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    metrics = open_out(*output_dir / "metrics.jsonl");
  }
  CvReport report;
  report.variant = variant_name(config.variant);
  std::uint64_t lookups = 0;
  for (const auto& split : splits) {
    const auto train = pick(split.train_ids);
    const auto test = pick(split.test_ids);
    FoldArtifacts art;
    auto on = [&](const EpochRecord& r) {
      if (metrics.is_open()) metrics << r.to_json().dump() << '\n' << std::flush;
      if (on_epoch) on_epoch(r);
    };
    report.folds.push_back(train_fold(train, test, data, config, split.fold_index, on, &art));
    lookups += art.features.lookups;
    if (output_dir) {
      const auto fold_dir = *output_dir / ("fold_" + std::to_string(split.fold_index));
      std::filesystem::create_directories(fold_dir);
      auto g = open_out(fold_dir / "graph.tsv");
      art.graph.write_tsv(g, {"built from the training students of fold " + std::to_string(split.fold_index)});
      auto d = open_out(fold_dir / "difficulty.tsv");
      art.features.difficulty.write_tsv(d);
      art.model->save(fold_dir / "checkpoint", art.features,
                      json{{"max_seq_len", config.max_seq_len},
                           {"batch_size", config.batch_size},
                           {"variant", variant_name(config.variant)},
                           {"fold", split.fold_index},
                           {"best_epoch", report.folds.back().best_epoch}});
    }
  }
  double total = 0.0;
  for (const auto& f : report.folds) total += f.best_auc;
  report.mean_best_auc = total / static_cast<double>(report.folds.size());
  report.feature_lookups = lookups;
  if (output_dir) {
    auto r = open_out(*output_dir / "report.json");
    json j = report.to_json();
    j["config"] = config.to_json();
    r << j.dump(2) << '\n';
  }
  return report;
}

json AblationTable::to_json() const {
  json out = json::array();
  for (const auto& r : rows) {
    json aucs = json::array();
    for (const auto& f : r.folds) aucs.push_back(f.best_auc);
    out.push_back({{"variant", r.variant}, {"mean_best_auc", r.mean_best_auc}, {"fold_best_auc", aucs}});
  }
  return out;
}

double AblationTable::auc(Variant v) const {
  for (const auto& r : rows) {
    if (r.variant == variant_name(v)) return r.mean_best_auc;
  }
  throw LookupError("ablation table has no row for variant " + variant_name(v));
}

AblationTable run_ablation(const std::vector<StudentSequence>& sequences, const TrainConfig& config,
                           std::span<const Variant> variants, const EpochCallback& on_epoch) {
  AblationTable table;
  for (auto v : variants) {
    auto c = config;
    c.variant = v;
    table.rows.push_back(run_cv(sequences, c, std::nullopt, on_epoch));
  }
  return table;
}

json EvalReport::to_json() const {
  return json{{"auc", auc}, {"predictions", predictions}, {"students", students}};
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint_dir, const graph::QKGraph& graph,
                               const std::vector<StudentSequence>& sequences) {
  auto loaded = model::DagktModel::load(checkpoint_dir, graph);
  const auto batch = loaded.extra.value("batch_size", std::size_t{32});
  const auto max_len = loaded.extra.value("max_seq_len", std::size_t{200});
  auto preds = predict(*loaded.model, loaded.features, sequences, batch, max_len);
  return EvalReport{roc_auc(preds.probabilities, preds.labels), preds.labels.size(), sequences.size()};
}

}  // namespace dagkt::pipeline
