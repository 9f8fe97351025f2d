#pragma once

// Seeded generator of student logs with known structure: item-response
// correctness with a mastery gain, planted pairs of questions whose first
// answers coincide, and geometric retry counts.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "log_ingest.hpp"

namespace dagkt::synth {

using ingest::StudentSequence;

struct SynthSpec {
  std::size_t students = 200;
  std::size_t questions = 30;
  std::size_t kcs = 6;
  std::size_t kcs_per_question = 1;
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  double ability_mean = 0.0;
  double ability_sd = 1.0;
  double difficulty_mean = 0.0;
  double difficulty_sd = 1.0;
  /// Explicit per-question difficulties; overrides the normal draw when nonempty.
  std::vector<double> difficulties;
  /// Explicit per-student abilities; overrides the normal draw when nonempty.
  std::vector<double> abilities;
  /// Logit added per earlier record sharing a KC with the current question.
  double mastery_gain = 0.0;
  std::size_t exposure_cap = 10;
  /// Number of disjoint question pairs whose first answers are shared.
  std::size_t planted_pairs = 0;
  /// Retry success logit is attempt_bias + ability - difficulty.
  double attempt_bias = 0.0;
  std::uint32_t max_attempts = 20;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthTruth {
  std::vector<std::pair<std::string, std::string>> planted;  // sorted, first < second
  std::map<std::string, double> difficulty;
  std::map<std::string, double> ability;
  std::map<std::string, std::vector<std::string>> question_kcs;
  /// Generating probability of each record, aligned with the sequences. A
  /// copied planted answer has probability equal to its partner's outcome.
  std::vector<std::vector<double>> oracle;

  nlohmann::json to_json() const;
};

struct SynthCorpus {
  std::vector<StudentSequence> sequences;
  SynthTruth truth;
};

SynthCorpus generate(const SynthSpec& spec, std::uint64_t seed);

/// Question ids are "q000".., KC ids "k00".., student ids "s0000"..
std::string question_id(std::size_t i);
std::string kc_id(std::size_t i);
std::string student_id(std::size_t i);

}  // namespace dagkt::synth
