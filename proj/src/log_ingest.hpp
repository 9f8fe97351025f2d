#pragma once

// Student interaction log ingestion: delimiter-separated input, the canonical
// JSON-lines sequence format, dataset statistics and cross-validation folds.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace dagkt::ingest {

struct InteractionRecord {
  std::string student_id;
  std::string question_id;
  std::vector<std::string> kc_ids;  // sorted, unique, nonempty
  std::uint8_t correct = 0;
  std::uint32_t attempts = 1;
  std::uint64_t order_index = 0;

  bool operator==(const InteractionRecord&) const = default;
};

struct StudentSequence {
  std::string student_id;
  std::vector<InteractionRecord> records;  // strictly increasing order_index

  bool operator==(const StudentSequence&) const = default;
};

/// Minimum number of records a sequence needs to be kept.
inline constexpr std::size_t kMinSequenceLength = 4;

/// Names the input columns. An empty `attempts` means attempts are derived
/// from prior occurrences of the same question.
struct ColumnMapping {
  std::string student = "user_id";
  std::string question = "problem_id";
  std::string kcs = "skill_id";
  std::string correct = "correct";
  std::string order = "order_id";
  std::string attempts;
  /// Optional boolean column; rows with a true value are dropped.
  std::string scaffolding;
  char delimiter = ',';
  char kc_separator = ';';
  /// Drop repeated (student, order) rows instead of rejecting them.
  bool deduplicate = false;

  static ColumnMapping from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

std::vector<StudentSequence> parse_log(std::istream& source, const ColumnMapping& mapping);
std::vector<StudentSequence> parse_log_file(const std::string& path, const ColumnMapping& mapping);

// Canonical format: one JSON object per line, {"student_id", "records": [...]}.
void write_canonical(std::ostream& out, const std::vector<StudentSequence>& sequences);
std::vector<StudentSequence> read_canonical(std::istream& in);
void write_canonical_file(const std::string& path, const std::vector<StudentSequence>& sequences);
std::vector<StudentSequence> read_canonical_file(const std::string& path);

/// Checks every record and sequence invariant; throws ValidationError.
void validate(const std::vector<StudentSequence>& sequences);

struct DatasetStats {
  std::size_t n_students = 0;
  std::size_t n_questions = 0;
  std::size_t n_skills = 0;
  std::size_t n_logs = 0;
  double questions_per_skill = 0.0;
  double skills_per_question = 0.0;

  nlohmann::json to_json() const;
};

DatasetStats compute_stats(const std::vector<StudentSequence>& sequences);

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Student-level k-fold partition; deterministic in `seed`.
std::vector<FoldSplit> make_folds(const std::vector<StudentSequence>& sequences, std::size_t k,
                                  std::uint64_t seed);

/// Random subset of `count` students (all of them when count >= size).
std::vector<StudentSequence> sample_students(const std::vector<StudentSequence>& sequences,
                                             std::size_t count, std::uint64_t seed);

std::vector<StudentSequence> select_students(const std::vector<StudentSequence>& sequences,
                                             const std::vector<std::string>& ids);

}  // namespace dagkt::ingest
