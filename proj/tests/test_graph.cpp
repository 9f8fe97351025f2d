#include <gtest/gtest.h>

#include <sstream>

#include "errors.hpp"
#include "graph_builder.hpp"
#include "random.hpp"
#include "test_support.hpp"

using namespace dagkt;
using namespace dagkt::graph;
using testkit::make_sequence;

TEST(PairCounts, SinglePair) {
  auto t = accumulate_pair_counts({make_sequence("s", {{"q1", 1}, {"q2", 1}, {"x", 0}, {"y", 0}})});
  const auto c = t.get("q1", "q2");
  EXPECT_EQ(c.count_11, 1u);
  EXPECT_EQ(c.count_10 + c.count_01 + c.count_00, 0u);
  EXPECT_EQ(t.get("q2", "q1").total(), 0u);
}

TEST(PairCounts, TwoStudentsHandEnumeration) {
  auto t = accumulate_pair_counts({make_sequence("s1", {{"q1", 1}, {"q2", 0}, {"a", 1}, {"b", 1}}),
                                   make_sequence("s2", {{"q2", 1}, {"q1", 1}, {"c", 1}, {"d", 1}})});
  EXPECT_EQ(t.get("q1", "q2"), (PairCounts{0, 1, 0, 0}));
  EXPECT_EQ(t.get("q2", "q1"), (PairCounts{1, 0, 0, 0}));
}

TEST(PairCounts, OnlyFirstOccurrenceCounts) {
  auto t = accumulate_pair_counts({make_sequence("s", {{"q1", 0}, {"q1", 1}, {"q1", 1}, {"q2", 1}})});
  EXPECT_EQ(t.get("q1", "q2"), (PairCounts{0, 0, 1, 0}));
  EXPECT_EQ(t.get("q2", "q1").total(), 0u);
}

TEST(PairCounts, MergeIsCellwiseSum) {
  auto a = make_sequence("a", {{"q1", 1}, {"q2", 0}, {"q3", 1}, {"q4", 1}});
  auto b = make_sequence("b", {{"q2", 1}, {"q1", 1}, {"q3", 0}, {"q4", 1}});
  auto vocab = question_vocabulary({a, b});
  auto whole = accumulate_pair_counts({a, b}, vocab);
  auto part = accumulate_pair_counts({a}, vocab);
  part.merge(accumulate_pair_counts({b}, vocab));
  for (const auto& [i, j] : whole.pairs()) EXPECT_EQ(whole.get(i, j), part.get(i, j));
  EXPECT_EQ(whole.size(), part.size());
}

TEST(F1, PerfectAgreement) { EXPECT_DOUBLE_EQ(f1_directed(PairCounts{5, 0, 0, 0}), 1.0); }

TEST(F1, HandWorkedCase) {
  const PairCounts c{3, 2, 1, 0};
  const double p = 3.01 / 4.01;
  const double r = 3.01 / 5.01;
  EXPECT_NEAR(f1_directed(c, 0.01), 2 * p * r / (p + r), 1e-15);
  EXPECT_NEAR(f1_directed(c, 0.01), 0.6674, 1e-4);
}

TEST(F1, EmptyCountsGiveOne) { EXPECT_DOUBLE_EQ(f1_directed(PairCounts{}), 1.0); }

TEST(F1, RejectsNonPositiveLambda) { EXPECT_THROW(f1_directed(PairCounts{}, 0.0), ValidationError); }

TEST(Similarity, HandWorkedMean) {
  const double s = similarity(PairCounts{3, 2, 1, 0}, PairCounts{2, 0, 0, 0}, 0.01);
  EXPECT_NEAR(s, 0.8337, 1e-4);
}

TEST(Similarity, SymmetryRangeAndMonotonicity) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    PairCounts a{rng.index(6), rng.index(6), rng.index(6), rng.index(6)};
    PairCounts b{rng.index(6), rng.index(6), rng.index(6), rng.index(6)};
    const double s = similarity(a, b);
    EXPECT_EQ(s, similarity(b, a));
    EXPECT_GT(s, 0.0);
    EXPECT_LE(s, 1.0);
    if (a.count_10 > 0) {
      PairCounts moved = a;
      --moved.count_10;
      ++moved.count_11;
      EXPECT_GE(f1_directed(moved), f1_directed(a));
    }
  }
}

namespace {

// Two planted identical-answer pairs (q1,q2), (q3,q4) and an independent q5.
std::vector<ingest::StudentSequence> planted_corpus() {
  Rng rng(17);
  std::vector<ingest::StudentSequence> seqs;
  for (int s = 0; s < 60; ++s) {
    const int x = rng.bernoulli(0.5), y = rng.bernoulli(0.5), z = rng.bernoulli(0.5);
    std::vector<testkit::Step> steps{{"q1", x}, {"q3", y}, {"q5", z}, {"q2", x}, {"q4", y}};
    if (s % 2) std::swap(steps[0], steps[3]);
    seqs.push_back(make_sequence("s" + std::to_string(s), steps));
  }
  return seqs;
}

}  // namespace

TEST(BuildGraph, PlantedPairsAreExactlyTheEdges) {
  const auto seqs = planted_corpus();
  auto g = build_graph(seqs, GraphParams{0.9, 0.01, 3});
  ASSERT_EQ(g.similarity_edges().size(), 2u);
  EXPECT_TRUE(g.has_similarity_edge("q1", "q2"));
  EXPECT_TRUE(g.has_similarity_edge("q4", "q3"));
  const std::vector<std::string> qs{"q1", "q2", "q3", "q4", "q5"};
  for (const auto& a : qs) {
    for (const auto& b : qs) {
      if (a >= b) continue;
      const double sim =
          (testkit::reference_f1(testkit::brute_counts(seqs, a, b), 0.01) +
           testkit::reference_f1(testkit::brute_counts(seqs, b, a), 0.01)) / 2.0;
      EXPECT_EQ(g.has_similarity_edge(a, b), sim > 0.9) << a << "," << b;
      if (g.has_similarity_edge(a, b)) EXPECT_NEAR(*g.similarity_score(b, a), sim, 1e-12);
    }
  }
}

TEST(BuildGraph, OmegaOneGivesNoEdges) {
  EXPECT_TRUE(build_graph(planted_corpus(), GraphParams{1.0, 0.01, 3}).similarity_edges().empty());
}

TEST(BuildGraph, ThresholdMonotonicity) {
  const auto seqs = planted_corpus();
  auto loose = build_graph(seqs, GraphParams{0.3, 0.01, 1});
  for (double omega : {0.4, 0.6, 0.8, 0.95}) {
    auto tight = build_graph(seqs, GraphParams{omega, 0.01, 1});
    EXPECT_LE(tight.similarity_edges().size(), loose.similarity_edges().size());
    for (const auto& e : tight.similarity_edges()) {
      EXPECT_TRUE(loose.has_similarity_edge(e.a, e.b));
      EXPECT_GT(e.sim, omega);
    }
  }
}

TEST(BuildGraph, SupportRuleExcludesRarePairs) {
  std::vector<ingest::StudentSequence> seqs{
      make_sequence("a", {{"q1", 1}, {"q2", 1}, {"x", 0}, {"y", 1}}),
      make_sequence("b", {{"q1", 1}, {"q2", 1}, {"z", 0}, {"w", 1}})};
  EXPECT_FALSE(build_graph(seqs, GraphParams{0.7, 0.01, 3}).has_similarity_edge("q1", "q2"));
  EXPECT_TRUE(build_graph(seqs, GraphParams{0.7, 0.01, 2}).has_similarity_edge("q1", "q2"));
}

TEST(BuildGraph, QuestionKcEdgesAreTheObservedUnion) {
  std::vector<ingest::StudentSequence> seqs{
      make_sequence("a", {{"q1", 1, {"k1"}}, {"q2", 1, {"k1", "k2"}}, {"q1", 0, {"k3"}}, {"q3", 1, {"k2"}}})};
  auto g = build_graph(seqs, GraphParams{});
  using E = std::pair<std::string, std::string>;
  std::vector<E> edges(g.question_kc_edges().begin(), g.question_kc_edges().end());
  std::sort(edges.begin(), edges.end());
  EXPECT_EQ(edges, (std::vector<E>{{"q1", "k1"}, {"q1", "k3"}, {"q2", "k1"}, {"q2", "k2"}, {"q3", "k2"}}));
}

TEST(BuildGraph, RejectsBadParameters) {
  const auto seqs = planted_corpus();
  EXPECT_THROW(build_graph(seqs, GraphParams{1.5, 0.01, 3}), ValidationError);
  EXPECT_THROW(build_graph(seqs, GraphParams{0.5, 0.01, 0}), ValidationError);
  EXPECT_THROW(build_graph(seqs, GraphParams{0.5, -1.0, 3}), ValidationError);
}

TEST(GraphTsv, RoundTripPreservesContentAndHash) {
  auto g = build_graph(planted_corpus(), GraphParams{0.9, 0.01, 3});
  std::stringstream buf;
  g.write_tsv(buf, {"written by a test"});
  const std::string text = buf.str();
  EXPECT_NE(text.find("# lambda="), std::string::npos);
  EXPECT_NE(text.find("# omega="), std::string::npos);
  EXPECT_NE(text.find("# min_support=3"), std::string::npos);
  auto back = QKGraph::read_tsv(buf);
  EXPECT_EQ(back.content_hash(), g.content_hash());
  EXPECT_EQ(back.params().omega, 0.9);
  ASSERT_EQ(back.similarity_edges().size(), g.similarity_edges().size());
  for (std::size_t i = 0; i < g.similarity_edges().size(); ++i) {
    EXPECT_EQ(back.similarity_edges()[i].sim, g.similarity_edges()[i].sim);
  }
  std::stringstream again;
  back.write_tsv(again, {"written by a test"});
  EXPECT_EQ(again.str(), text);
}

TEST(GraphTsv, NotesDoNotChangeHash) {
  auto g = build_graph(planted_corpus(), GraphParams{});
  std::stringstream a, b;
  g.write_tsv(a, {"one"});
  g.write_tsv(b, {"two", "three"});
  EXPECT_EQ(QKGraph::read_tsv(a).content_hash(), QKGraph::read_tsv(b).content_hash());
  EXPECT_NE(g.content_hash(), g.without_similarity().content_hash());
}

TEST(GraphTsv, MalformedInputIsParseError) {
  std::istringstream in("# dagkt question-kc graph\n[question_kc]\nquestion\tkc\nq1\n");
  EXPECT_THROW(QKGraph::read_tsv(in), ParseError);
}

TEST(Difficulty, HandCases) {
  std::vector<testkit::Step> steps;
  for (int i = 0; i < 10; ++i) steps.push_back({"seven", i < 7});
  steps.push_back({"easy", 1});
  steps.push_back({"hard", 0});
  auto t = compute_difficulty({make_sequence("s", steps)});
  EXPECT_DOUBLE_EQ(t.at("seven").accuracy, 0.7);
  EXPECT_NEAR(t.difficulty("seven"), 0.3, 1e-15);
  EXPECT_EQ(t.difficulty("easy"), 0.0);
  EXPECT_EQ(t.difficulty("hard"), 1.0);
  EXPECT_THROW(t.difficulty("unseen"), LookupError);
  EXPECT_NEAR(t.mean_difficulty(), (0.3 + 0.0 + 1.0) / 3.0, 1e-15);
}

TEST(Attempts, PerOccurrenceValues) {
  auto t = compute_attempts({make_sequence(
      "s", {{"q", 0, {"k"}, 1}, {"p", 1, {"k"}, 1}, {"q", 0, {"k"}, 2}, {"q", 1, {"k"}, 3}})});
  EXPECT_EQ(t.occurrences("s", "q"), (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(t.attempts("s", "p", 0), 1u);
  EXPECT_EQ(t.max_attempts(), 3u);
  EXPECT_THROW(t.attempts("s", "p", 1), LookupError);
  EXPECT_THROW(t.occurrences("nobody", "q"), LookupError);
}

TEST(Attempts, DerivedCorpusMatchesOccurrenceIndex) {
  std::istringstream in("order_id,user_id,problem_id,skill_id,correct\n"
                        "1,u,q,k,0\n2,u,p,k,1\n3,u,q,k,0\n4,u,q,k,1\n5,u,p,k,1\n");
  auto seqs = ingest::parse_log(in, {});
  auto t = compute_attempts(seqs);
  EXPECT_EQ(t.occurrences("u", "q"), (std::vector<std::uint32_t>{1, 2, 3}));
  EXPECT_EQ(t.occurrences("u", "p"), (std::vector<std::uint32_t>{1, 2}));
}
