#pragma once

// Question-KC graph with F1-similarity question edges, per-question difficulty
// and per-occurrence attempt counts.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "log_ingest.hpp"

namespace dagkt::graph {

using ingest::StudentSequence;

inline constexpr double kDefaultLambda = 0.01;
inline constexpr double kDefaultOmega = 0.7;
inline constexpr std::uint32_t kDefaultMinSupport = 3;

/// Dense id <-> index map over sorted string ids.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> ids);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::string& id(std::size_t index) const { return ids_.at(index); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::optional<std::uint32_t> find(const std::string& id) const;
  /// Throws LookupError for unknown ids.
  std::uint32_t at(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

Vocabulary question_vocabulary(const std::vector<StudentSequence>& sequences);
Vocabulary kc_vocabulary(const std::vector<StudentSequence>& sequences);

/// Outcome counts for an ordered question pair (first answered, second answered).
struct PairCounts {
  std::uint64_t count_11 = 0;
  std::uint64_t count_10 = 0;
  std::uint64_t count_01 = 0;
  std::uint64_t count_00 = 0;

  std::uint64_t total() const noexcept { return count_11 + count_10 + count_01 + count_00; }
  void add(int first_correct, int second_correct);
  PairCounts& operator+=(const PairCounts& o);
  bool operator==(const PairCounts&) const = default;
};

/// Ordered-pair counts keyed by question indices of a shared vocabulary.
class PairCountTable {
 public:
  explicit PairCountTable(Vocabulary questions) : questions_(std::move(questions)) {}

  const Vocabulary& questions() const noexcept { return questions_; }
  /// All-zero counts for pairs never observed.
  PairCounts get(std::uint32_t first, std::uint32_t second) const;
  PairCounts get(const std::string& first, const std::string& second) const;
  PairCounts& at(std::uint32_t first, std::uint32_t second) { return counts_[key(first, second)]; }
  /// Cell-wise addition; both tables must share a vocabulary.
  void merge(const PairCountTable& other);

  std::size_t size() const noexcept { return counts_.size(); }
  /// Ordered pairs with nonzero counts, sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs() const;

 private:
  static std::uint64_t key(std::uint32_t a, std::uint32_t b) {
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }
  Vocabulary questions_;
  std::unordered_map<std::uint64_t, PairCounts> counts_;
};

/// Counts, per student, every ordered pair of first occurrences of two distinct questions.
PairCountTable accumulate_pair_counts(const std::vector<StudentSequence>& sequences);
PairCountTable accumulate_pair_counts(const std::vector<StudentSequence>& sequences,
                                      const Vocabulary& questions);

/// Smoothed F1 of predicting the second answer from the first.
double f1_directed(const PairCounts& counts, double lambda = kDefaultLambda);

/// Symmetric mean of the two directed F1 scores.
double similarity(const PairCounts& forward, const PairCounts& backward,
                  double lambda = kDefaultLambda);
double similarity(const std::string& q1, const std::string& q2, const PairCountTable& counts,
                  double lambda = kDefaultLambda);

struct SimilarityEdge {
  std::string a;  // a < b
  std::string b;
  double sim = 0.0;
  std::uint64_t support = 0;
};

struct GraphParams {
  double omega = kDefaultOmega;
  double lambda = kDefaultLambda;
  std::uint32_t min_support = kDefaultMinSupport;
};

class QKGraph {
 public:
  QKGraph() = default;
  QKGraph(std::vector<std::pair<std::string, std::string>> question_kc,
          std::vector<SimilarityEdge> similar, GraphParams params);

  const GraphParams& params() const noexcept { return params_; }
  /// Sorted unique (question, kc) pairs.
  const std::vector<std::pair<std::string, std::string>>& question_kc_edges() const noexcept {
    return question_kc_;
  }
  /// Sorted by (a, b) with a < b.
  const std::vector<SimilarityEdge>& similarity_edges() const noexcept { return similar_; }

  std::vector<std::string> questions() const;
  std::vector<std::string> kcs() const;
  bool has_similarity_edge(const std::string& q1, const std::string& q2) const;
  std::optional<double> similarity_score(const std::string& q1, const std::string& q2) const;

  /// Same graph without question-question edges.
  QKGraph without_similarity() const;

  void write_tsv(std::ostream& out, const std::vector<std::string>& header_notes = {}) const;
  static QKGraph read_tsv(std::istream& in);
  /// SHA-256 of the TSV body (notes excluded); identifies a graph for checkpoints.
  std::string content_hash() const;

 private:
  std::vector<std::pair<std::string, std::string>> question_kc_;
  std::vector<SimilarityEdge> similar_;
  std::map<std::pair<std::string, std::string>, std::size_t> similar_index_;
  GraphParams params_;
};

QKGraph build_graph(const std::vector<StudentSequence>& sequences, const GraphParams& params);
QKGraph build_graph(const PairCountTable& counts, const std::vector<StudentSequence>& sequences,
                    const GraphParams& params);

struct QuestionDifficulty {
  std::uint64_t n_correct = 0;
  std::uint64_t n_total = 0;
  double accuracy = 0.0;
  double difficulty = 0.0;  // 1 - accuracy
};

class DifficultyTable {
 public:
  DifficultyTable() = default;
  explicit DifficultyTable(std::map<std::string, QuestionDifficulty> rows);

  /// Throws LookupError for questions absent from the corpus.
  const QuestionDifficulty& at(const std::string& question) const;
  double difficulty(const std::string& question) const { return at(question).difficulty; }
  bool contains(const std::string& question) const { return rows_.count(question) != 0; }
  /// Unweighted mean over questions; the cold-start fallback.
  double mean_difficulty() const noexcept { return mean_; }
  const std::map<std::string, QuestionDifficulty>& rows() const noexcept { return rows_; }

  void write_tsv(std::ostream& out) const;

 private:
  std::map<std::string, QuestionDifficulty> rows_;
  double mean_ = 0.0;
};

DifficultyTable compute_difficulty(const std::vector<StudentSequence>& sequences);

/// Attempts per (student, question), one entry per occurrence in order.
class AttemptTable {
 public:
  using Key = std::pair<std::string, std::string>;

  const std::vector<std::uint32_t>& occurrences(const std::string& student,
                                                const std::string& question) const;
  std::uint32_t attempts(const std::string& student, const std::string& question,
                         std::size_t occurrence) const;
  std::uint32_t max_attempts() const noexcept { return max_; }
  const std::map<Key, std::vector<std::uint32_t>>& rows() const noexcept { return rows_; }

  void write_tsv(std::ostream& out) const;

 private:
  friend AttemptTable compute_attempts(const std::vector<StudentSequence>&);
  std::map<Key, std::vector<std::uint32_t>> rows_;
  std::uint32_t max_ = 0;
};

AttemptTable compute_attempts(const std::vector<StudentSequence>& sequences);

}  // namespace dagkt::graph
