#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "errors.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "test_support.hpp"

using namespace dagkt;
using namespace dagkt::model;
using ad::Tensor;

namespace {

struct Fixture {
  std::vector<StudentSequence> seqs = testkit::toy_corpus();
  graph::QKGraph graph = testkit::dense_graph(seqs);
  FeatureStats features = FeatureStats::from_training(seqs);

  std::unique_ptr<DagktModel> make(ModelConfig c = testkit::tiny_model_config(), std::uint64_t seed = 1) {
    return std::make_unique<DagktModel>(c, graph::question_vocabulary(seqs), graph::kc_vocabulary(seqs), graph,
                                        seed);
  }

  std::vector<const StudentSequence*> batch() const {
    std::vector<const StudentSequence*> b;
    for (const auto& s : seqs) b.push_back(&s);
    return b;
  }
};

std::vector<double> eval_probabilities(DagktModel& m, const FeatureStats& f,
                                       const std::vector<const StudentSequence*>& batch) {
  ad::Tape tape;
  return m.forward(tape, f, batch, Mode::Eval, 0, 0).probabilities.value().values;
}

}  // namespace

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = testkit::tiny_model_config();
  c.gcn_activation = GcnActivation::Identity;
  c.use_attempts = false;
  auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.embed_dim = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = testkit::tiny_model_config();
  c.lstm_layer_sizes = {5, 3};
  EXPECT_THROW(c.validate(), ValidationError);
  c = testkit::tiny_model_config();
  c.dropout_keep = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(ModelConfig::from_json({{"gcn_activation", "sigmoid"}}), ValidationError);
}

TEST(FeatureStats, DifficultyFallbackAndAttemptScaling) {
  Fixture fx;
  const auto& f = fx.features;
  EXPECT_EQ(f.max_attempts, 4u);
  EXPECT_DOUBLE_EQ(f.difficulty_of("q1"), 1.0 - 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(f.difficulty_of("unseen"), f.difficulty.mean_difficulty());
  EXPECT_NEAR(f.attempt_feature(1), std::log(2.0) / std::log(5.0), 1e-15);
  EXPECT_DOUBLE_EQ(f.attempt_feature(4), 1.0);
  EXPECT_DOUBLE_EQ(f.attempt_feature(40), 1.0);
  EXPECT_THROW(f.attempt_feature(0), ValidationError);
  EXPECT_EQ(f.lookups, 5u);
  auto back = FeatureStats::from_json(f.to_json());
  EXPECT_EQ(back.max_attempts, f.max_attempts);
  EXPECT_EQ(back.difficulty.rows().size(), f.difficulty.rows().size());
  EXPECT_DOUBLE_EQ(back.difficulty_of("q4"), f.difficulty_of("q4"));
}

TEST(Model, ParameterSetFollowsVariant) {
  Fixture fx;
  auto names = [](DagktModel& m) {
    std::set<std::string> out;
    for (auto* p : m.parameters()) out.insert(p->name);
    return out;
  };
  auto full = fx.make();
  auto full_names = names(*full);
  EXPECT_TRUE(full_names.count("fusion.output.weight"));
  EXPECT_TRUE(full_names.count("difficulty.encoder.0.weight"));
  EXPECT_TRUE(full_names.count("attempts.decoder.2.bias"));
  EXPECT_FALSE(full_names.count("fusion.plain.weight"));

  auto plain_cfg = pipeline::apply_variant(testkit::tiny_model_config(), pipeline::Variant::R);
  auto plain = fx.make(plain_cfg);
  auto plain_names = names(*plain);
  EXPECT_TRUE(plain_names.count("fusion.plain.weight"));
  for (const auto& n : plain_names) {
    EXPECT_EQ(n.find("difficulty"), std::string::npos) << n;
    EXPECT_EQ(n.find("attempts"), std::string::npos) << n;
  }
  EXPECT_THROW(plain->parameter("fusion.output.weight"), LookupError);
}

TEST(Model, InitialisationIsSeeded) {
  Fixture fx;
  auto a = fx.make({}, 5);
  auto b = fx.make({}, 5);
  auto c = fx.make({}, 6);
  EXPECT_EQ(a->snapshot(), b->snapshot());
  EXPECT_NE(a->snapshot(), c->snapshot());
}

TEST(Model, UnknownGraphNodeIsLookupError) {
  Fixture fx;
  graph::QKGraph g({{"q9", "k1"}}, {}, {});
  EXPECT_THROW(DagktModel(testkit::tiny_model_config(), graph::question_vocabulary(fx.seqs),
                          graph::kc_vocabulary(fx.seqs), g, 0),
               LookupError);
}

TEST(Gcn, SampledNeighbourhoods) {
  Fixture fx;
  auto m = fx.make();
  const auto cfg = m->config();
  const std::size_t q_count = m->questions().size();
  auto hoods = m->sampled_neighborhoods(3, 0);
  ASSERT_EQ(hoods.size(), q_count + m->kcs().size());
  for (std::size_t node = 0; node < hoods.size(); ++node) {
    ASSERT_FALSE(hoods[node].empty());
    EXPECT_EQ(hoods[node][0], node);
    std::size_t kc_count = 0, q_neighbors = 0;
    for (std::size_t k = 1; k < hoods[node].size(); ++k) {
      (hoods[node][k] >= q_count ? kc_count : q_neighbors) += 1;
    }
    if (node < q_count) {
      EXPECT_LE(kc_count, cfg.gcn_skill_neighbors);
      EXPECT_LE(q_neighbors, cfg.gcn_question_neighbors);
      EXPECT_GE(kc_count, 1u);
    } else {
      EXPECT_EQ(kc_count, 0u);
      EXPECT_LE(q_neighbors, cfg.gcn_question_neighbors);
    }
  }
  EXPECT_EQ(hoods, m->sampled_neighborhoods(3, 0));
}

TEST(Gcn, SimilarityEdgesOnlyWhenEnabled) {
  Fixture fx;
  auto cfg = testkit::tiny_model_config();
  cfg.use_similarity_edges = false;
  cfg.gcn_question_neighbors = 10;
  auto m = fx.make(cfg);
  const std::size_t q_count = m->questions().size();
  auto hoods = m->sampled_neighborhoods(0, 0);
  for (std::size_t q = 0; q < q_count; ++q)
    for (std::size_t k = 1; k < hoods[q].size(); ++k) EXPECT_GE(hoods[q][k], q_count);
}

TEST(Gcn, ZeroLayersReturnsRawEmbeddings) {
  Fixture fx;
  auto cfg = testkit::tiny_model_config();
  cfg.gcn_layers = 0;
  auto m = fx.make(cfg);
  ad::Tape tape;
  auto refined = m->gcn_propagate(tape, Mode::Eval, 0, 0);
  EXPECT_EQ(refined.questions.value(), m->parameter("question_embedding").value);
  EXPECT_EQ(refined.kcs.value(), m->parameter("kc_embedding").value);
}

TEST(Gcn, OutputsStayInTanhRange) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  auto refined = m->gcn_propagate(tape, Mode::Train, 1, 2);
  EXPECT_EQ(refined.questions.shape(), (ad::Shape{5, 4}));
  EXPECT_EQ(refined.kcs.shape(), (ad::Shape{2, 4}));
  for (double v : refined.questions.value().values) EXPECT_LT(std::abs(v), 1.0);
}

TEST(Encoders, RejectOutOfRangeInputs) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  EXPECT_THROW(m->encode_difficulty(tape, tape.constant(Tensor({2, 1}, std::vector<double>{0.5, 1.5}))),
               ValidationError);
  EXPECT_THROW(m->encode_attempts(tape, tape.constant(Tensor({1, 1}, std::vector<double>{-0.1}))),
               ValidationError);
  auto enc = m->encode_difficulty(tape, tape.constant(Tensor({2, 1}, std::vector<double>{0.0, 1.0})));
  EXPECT_EQ(enc.embedding.shape(), (ad::Shape{2, 4}));
  for (double v : enc.reconstruction.value().values) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Fusion, MatchesHandComputation) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  auto row = [&](double base) {
    Tensor t({1, 4});
    for (std::size_t i = 0; i < 4; ++i) t.values[i] = base + 0.1 * static_cast<double>(i);
    return t;
  };
  Tensor q = row(0.2), d = row(-0.3), a = row(0.5), mm = row(-0.1);
  auto [x, branch] =
      m->fuse(tape, tape.constant(q), tape.constant(d), tape.constant(a), tape.constant(mm));

  auto dense = [&](const std::string& name, const std::vector<double>& in) {
    const auto& w = m->parameter(name + ".weight").value;
    const auto& b = m->parameter(name + ".bias").value;
    std::vector<double> out(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      out[j] = b.values[j];
      for (std::size_t i = 0; i < in.size(); ++i) out[j] += in[i] * w(i, j);
    }
    return out;
  };
  auto cat = [](std::vector<double> l, const std::vector<double>& r) {
    l.insert(l.end(), r.begin(), r.end());
    return l;
  };
  auto qb = dense("fusion.question_difficulty", cat(q.values, d.values));
  auto ab = dense("fusion.answer_attempts", cat(a.values, mm.values));
  auto out = dense("fusion.output", cat(qb, ab));
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(branch.value().values[j], qb[j], 1e-14);
    EXPECT_NEAR(x.value().values[j], std::max(0.0, out[j]), 1e-14);
  }
  EXPECT_THROW(m->fuse_plain(tape, tape.constant(q), tape.constant(a)), ValidationError);
}

TEST(Lstm, StepwiseMatchesSequenceRun) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  const std::size_t steps = 3, batch = 2;
  Tensor inputs({steps * batch, 4});
  for (std::size_t i = 0; i < inputs.size(); ++i) inputs.values[i] = std::sin(0.7 * static_cast<double>(i));
  Var all = tape.constant(inputs);
  Var run = m->run_lstm(tape, all, steps, batch);
  auto state = m->initial_state(tape, batch);
  for (std::size_t t = 0; t < steps; ++t) {
    state = m->lstm_step(tape, ad::slice_rows(all, t * batch, batch), state);
    const auto& h = state.h.back().value();
    for (std::size_t i = 0; i < h.size(); ++i) {
      EXPECT_NEAR(h.values[i], run.value().values[t * batch * 4 + i], 1e-14);
    }
  }
}

TEST(AttentionReadout, HandCase) {
  ad::Tape tape;
  Var values = tape.constant(Tensor({3, 1}, std::vector<double>{1.0, 2.0, -4.0}));
  Var scores = tape.constant(Tensor({3, 1}, std::vector<double>{0.0, std::log(3.0), 7.0}));
  auto p = attention_readout(values, scores, {0, 2, 3}).value().values;
  ASSERT_EQ(p.size(), 2u);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.75)), 1e-14);
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(4.0)), 1e-14);
}

TEST(Forward, PredictionsCoverEveryLaterRecord) {
  Fixture fx;
  auto m = fx.make();
  auto b = fx.batch();
  ad::Tape tape;
  auto out = m->forward(tape, fx.features, b, Mode::Train, 0, 0);
  ASSERT_EQ(out.positions.size(), 5u + 4u);
  ASSERT_EQ(out.labels.size(), 9u);
  for (std::size_t i = 0; i < out.positions.size(); ++i) {
    const auto [bi, pos] = out.positions[i];
    EXPECT_GE(pos, 1u);
    EXPECT_EQ(out.labels[i], fx.seqs[bi].records[pos].correct);
  }
  for (double p : out.probabilities.value().values) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  ASSERT_TRUE(out.difficulty_residual && out.attempt_residual);
  EXPECT_EQ(out.difficulty_residual->value().size(), 11u);
}

TEST(Forward, EvalIsDeterministicAndIgnoresSeed) {
  Fixture fx;
  auto m = fx.make();
  auto b = fx.batch();
  ad::Tape t1, t2;
  auto p1 = m->forward(t1, fx.features, b, Mode::Eval, 1, 1).probabilities.value();
  auto p2 = m->forward(t2, fx.features, b, Mode::Eval, 9, 4).probabilities.value();
  EXPECT_EQ(p1, p2);
}

TEST(Forward, PlainVariantMakesNoFeatureLookups) {
  Fixture fx;
  auto m = fx.make(pipeline::apply_variant(testkit::tiny_model_config(), pipeline::Variant::R));
  FeatureStats f = FeatureStats::from_training(fx.seqs);
  auto b = fx.batch();
  ad::Tape tape;
  auto out = m->forward(tape, f, b, Mode::Train, 0, 0);
  EXPECT_EQ(f.lookups, 0u);
  EXPECT_FALSE(out.difficulty_residual);
  EXPECT_FALSE(out.attempt_residual);
}

TEST(Forward, RejectsEmptyOrTooShortBatches) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  EXPECT_THROW(m->forward(tape, fx.features, {}, Mode::Eval, 0, 0), ValidationError);
  auto one = testkit::make_sequence("s", {{"q1", 1, {"k1"}}});
  const StudentSequence* b[] = {&one};
  EXPECT_THROW(m->forward(tape, fx.features, b, Mode::Eval, 0, 0), ValidationError);
}

TEST(Gradcheck, FullModelOnToyCorpus) {
  Fixture fx;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto m = fx.make(testkit::tiny_model_config(), seed);
    EXPECT_LT(testkit::model_gradcheck(*m, fx.features, fx.seqs, seed), 1e-4) << "seed " << seed;
  }
}

TEST(Gradcheck, PlainVariantOnToyCorpus) {
  Fixture fx;
  auto m = fx.make(pipeline::apply_variant(testkit::tiny_model_config(), pipeline::Variant::R), 4);
  EXPECT_LT(testkit::model_gradcheck(*m, fx.features, fx.seqs, 4), 1e-4);
}

TEST(Checkpoint, RoundTripAndGraphMismatch) {
  Fixture fx;
  auto m = fx.make();
  const auto dir = std::filesystem::temp_directory_path() / "dagkt_model_ckpt";
  std::filesystem::remove_all(dir);
  m->save(dir, fx.features, {{"note", 1}});
  auto loaded = DagktModel::load(dir, fx.graph);
  EXPECT_EQ(loaded.model->snapshot(), m->snapshot());
  EXPECT_EQ(loaded.extra.at("note"), 1);
  auto b = fx.batch();
  EXPECT_EQ(eval_probabilities(*loaded.model, loaded.features, b), eval_probabilities(*m, fx.features, b));

  auto other = graph::build_graph(fx.seqs, graph::GraphParams{0.99, 0.01, 1});
  ASSERT_NE(other.content_hash(), fx.graph.content_hash());
  try {
    DagktModel::load(dir, other);
    FAIL() << "expected a graph mismatch";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find(fx.graph.content_hash()), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

namespace {

// One-unit stack over embed_dim 1 so LSTM weights can be set by hand.
struct ScalarLstm {
  Fixture fx;
  std::unique_ptr<DagktModel> m;

  ScalarLstm(std::vector<double> wx, std::vector<double> wh, std::vector<double> b) {
    auto c = testkit::tiny_model_config();
    c.embed_dim = 1;
    c.lstm_layer_sizes = {1};
    c.encoder_hidden = 1;
    m = fx.make(c);
    m->parameter("lstm.0.input_weight").value = Tensor({1, 4}, std::move(wx));
    m->parameter("lstm.0.hidden_weight").value = Tensor({1, 4}, std::move(wh));
    m->parameter("lstm.0.bias").value = Tensor({4}, std::move(b));
  }

  HiddenState step(ad::Tape& tape, double x, double h, double c) {
    HiddenState s{{tape.constant(Tensor({1, 1}, std::vector<double>{h}))},
                  {tape.constant(Tensor({1, 1}, std::vector<double>{c}))}};
    return m->lstm_step(tape, tape.constant(Tensor({1, 1}, std::vector<double>{x})), s);
  }
};

double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(Lstm, ZeroWeightsGiveZeroState) {
  ScalarLstm l({0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0});
  ad::Tape tape;
  auto s = l.step(tape, 0.7, 0.0, 0.0);
  EXPECT_EQ(s.h[0].value().values[0], 0.0);
  EXPECT_EQ(s.c[0].value().values[0], 0.0);
}

TEST(Lstm, SaturatedForgetGateCarriesCell) {
  ScalarLstm l({0, 0, 0, 0}, {0, 0, 0, 0}, {0, 50, 0, 0});
  ad::Tape tape;
  auto s = l.step(tape, 0.9, 0.3, 0.6);
  EXPECT_NEAR(s.c[0].value().values[0], 0.6, 1e-6);
}

TEST(Lstm, TwoStepHandTrace) {
  const double wx[] = {0.5, -0.3, 0.8, 0.1}, wh[] = {0.2, 0.4, -0.6, 0.3}, b[] = {0.1, 0.2, -0.1, 0.05};
  ScalarLstm l({wx[0], wx[1], wx[2], wx[3]}, {wh[0], wh[1], wh[2], wh[3]}, {b[0], b[1], b[2], b[3]});
  double h = 0.0, c = 0.0;
  ad::Tape tape;
  HiddenState s = l.m->initial_state(tape, 1);
  for (double x : {1.0, -0.5}) {
    const double i = sigm(wx[0] * x + wh[0] * h + b[0]);
    const double f = sigm(wx[1] * x + wh[1] * h + b[1]);
    const double g = std::tanh(wx[2] * x + wh[2] * h + b[2]);
    const double o = sigm(wx[3] * x + wh[3] * h + b[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
    s = l.m->lstm_step(tape, tape.constant(Tensor({1, 1}, std::vector<double>{x})), s);
    EXPECT_NEAR(s.h[0].value().values[0], h, 1e-14);
    EXPECT_NEAR(s.c[0].value().values[0], c, 1e-14);
  }
}

TEST(Lstm, StateLayerMismatchIsShapeError) {
  Fixture fx;
  auto m = fx.make();
  ad::Tape tape;
  HiddenState s = m->initial_state(tape, 1);
  s.h.pop_back();
  EXPECT_THROW(m->lstm_step(tape, tape.constant(Tensor({1, 4})), s), ShapeError);
}

TEST(AttentionReadout, SingletonTermHasWeightOne) {
  ad::Tape tape;
  auto p = attention_readout(tape.constant(Tensor({1, 1}, std::vector<double>{0.4})),
                             tape.constant(Tensor({1, 1}, std::vector<double>{-9.0})), {0, 1});
  EXPECT_NEAR(p.value().values[0], 1.0 / (1.0 + std::exp(-0.4)), 1e-15);
}

TEST(AttentionReadout, InvariantToTermOrder) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.index(6);
    std::vector<double> v(k), s(k);
    for (std::size_t i = 0; i < k; ++i) {
      v[i] = rng.uniform(-3, 3);
      s[i] = rng.uniform(-3, 3);
    }
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> pv(k), ps(k);
    for (std::size_t i = 0; i < k; ++i) {
      pv[i] = v[perm[i]];
      ps[i] = s[perm[i]];
    }
    ad::Tape tape;
    auto a = attention_readout(tape.constant(Tensor({k, 1}, v)), tape.constant(Tensor({k, 1}, s)), {0, k});
    auto b = attention_readout(tape.constant(Tensor({k, 1}, pv)), tape.constant(Tensor({k, 1}, ps)), {0, k});
    EXPECT_NEAR(a.value().values[0], b.value().values[0], 1e-14);
  }
}
