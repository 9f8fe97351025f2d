#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "errors.hpp"
#include "json_util.hpp"
#include "random.hpp"

namespace dagkt::synth {
namespace {

using nlohmann::json;

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::string padded(char prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

std::string question_id(std::size_t i) { return padded('q', i, 3); }
std::string kc_id(std::size_t i) { return padded('k', i, 2); }
std::string student_id(std::size_t i) { return padded('s', i, 4); }

void SynthSpec::validate() const {
  if (students == 0) throw ValidationError("synthetic spec: students must be at least 1");
  if (questions == 0 || kcs == 0) throw ValidationError("synthetic spec: needs questions and KCs");
  if (kcs_per_question == 0 || kcs_per_question > kcs) {
    throw ValidationError("synthetic spec: kcs_per_question must lie in [1, kcs]");
  }
  if (min_length < ingest::kMinSequenceLength || max_length < min_length) {
    throw ValidationError("synthetic spec: need 4 <= min_length <= max_length");
  }
  if (!(ability_sd >= 0.0) || !(difficulty_sd >= 0.0)) {
    throw ValidationError("synthetic spec: standard deviations must be non-negative");
  }
  if (!difficulties.empty() && difficulties.size() != questions) {
    throw ValidationError("synthetic spec: " + std::to_string(difficulties.size()) +
                          " difficulties for " + std::to_string(questions) + " questions");
  }
  if (!abilities.empty() && abilities.size() != students) {
    throw ValidationError("synthetic spec: " + std::to_string(abilities.size()) + " abilities for " +
                          std::to_string(students) + " students");
  }
  if (2 * planted_pairs > questions) {
    throw ValidationError("synthetic spec: " + std::to_string(planted_pairs) +
                          " planted pairs need more than " + std::to_string(questions) + " questions");
  }
  if (max_attempts < 1) throw ValidationError("synthetic spec: max_attempts must be at least 1");
  for (double v : {ability_mean, difficulty_mean, mastery_gain, attempt_bias}) {
    if (!std::isfinite(v)) throw ValidationError("synthetic spec: non-finite parameter");
  }
}

json SynthSpec::to_json() const {
  return json{{"students", students},
              {"questions", questions},
              {"kcs", kcs},
              {"kcs_per_question", kcs_per_question},
              {"min_length", min_length},
              {"max_length", max_length},
              {"ability_mean", ability_mean},
              {"ability_sd", ability_sd},
              {"difficulty_mean", difficulty_mean},
              {"difficulty_sd", difficulty_sd},
              {"difficulties", difficulties},
              {"abilities", abilities},
              {"mastery_gain", mastery_gain},
              {"exposure_cap", exposure_cap},
              {"planted_pairs", planted_pairs},
              {"attempt_bias", attempt_bias},
              {"max_attempts", max_attempts}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("synthetic spec must be a JSON object");
  reject_unknown_keys(j, SynthSpec{}.to_json(), "synthetic spec");
  SynthSpec s;
  try {
    s.students = j.value("students", s.students);
    s.questions = j.value("questions", s.questions);
    s.kcs = j.value("kcs", s.kcs);
    s.kcs_per_question = j.value("kcs_per_question", s.kcs_per_question);
    s.min_length = j.value("min_length", s.min_length);
    s.max_length = j.value("max_length", s.max_length);
    s.ability_mean = j.value("ability_mean", s.ability_mean);
    s.ability_sd = j.value("ability_sd", s.ability_sd);
    s.difficulty_mean = j.value("difficulty_mean", s.difficulty_mean);
    s.difficulty_sd = j.value("difficulty_sd", s.difficulty_sd);
    s.difficulties = j.value("difficulties", s.difficulties);
    s.abilities = j.value("abilities", s.abilities);
    s.mastery_gain = j.value("mastery_gain", s.mastery_gain);
    s.exposure_cap = j.value("exposure_cap", s.exposure_cap);
    s.planted_pairs = j.value("planted_pairs", s.planted_pairs);
    s.attempt_bias = j.value("attempt_bias", s.attempt_bias);
    s.max_attempts = j.value("max_attempts", s.max_attempts);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

json SynthTruth::to_json() const {
  json pairs = json::array();
  for (const auto& [a, b] : planted) pairs.push_back({a, b});
  return json{{"planted_pairs", pairs},
              {"difficulty", difficulty},
              {"ability", ability},
              {"question_kcs", question_kcs},
              {"oracle", oracle}};
}

SynthCorpus generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng structure(mix_seed(seed, 0x57A7));
  SynthCorpus out;
  auto& truth = out.truth;

  std::vector<std::string> qids(spec.questions);
  std::vector<std::vector<std::string>> q_kcs(spec.questions);
  std::vector<double> b(spec.questions);
  std::vector<std::size_t> kc_order(spec.kcs);
  for (std::size_t q = 0; q < spec.questions; ++q) {
    qids[q] = question_id(q);
    std::iota(kc_order.begin(), kc_order.end(), 0);
    structure.shuffle(kc_order);
    for (std::size_t k = 0; k < spec.kcs_per_question; ++k) q_kcs[q].push_back(kc_id(kc_order[k]));
    std::sort(q_kcs[q].begin(), q_kcs[q].end());
    b[q] = spec.difficulties.empty() ? spec.difficulty_mean + spec.difficulty_sd * structure.normal()
                                     : spec.difficulties[q];
    truth.difficulty[qids[q]] = b[q];
    truth.question_kcs[qids[q]] = q_kcs[q];
  }

  std::vector<std::size_t> partner(spec.questions, spec.questions);
  std::vector<std::size_t> perm(spec.questions);
  std::iota(perm.begin(), perm.end(), 0);
  structure.shuffle(perm);
  for (std::size_t p = 0; p < spec.planted_pairs; ++p) {
    const std::size_t x = std::min(perm[2 * p], perm[2 * p + 1]);
    const std::size_t y = std::max(perm[2 * p], perm[2 * p + 1]);
    partner[x] = y;
    partner[y] = x;
    truth.planted.emplace_back(qids[x], qids[y]);
  }
  std::sort(truth.planted.begin(), truth.planted.end());

  for (std::size_t s = 0; s < spec.students; ++s) {
    Rng rng(mix_seed(seed, s + 1));
    const double theta = spec.abilities.empty() ? spec.ability_mean + spec.ability_sd * rng.normal()
                                                : spec.abilities[s];
    StudentSequence seq;
    seq.student_id = student_id(s);
    truth.ability[seq.student_id] = theta;
    const std::size_t length = spec.min_length + rng.index(spec.max_length - spec.min_length + 1);
    std::vector<int> first_answer(spec.questions, -1);
    std::vector<double> oracle;
    for (std::size_t t = 0; t < length; ++t) {
      const std::size_t q = rng.index(spec.questions);
      std::size_t exposures = 0;
      for (const auto& prev : seq.records) {
        if (std::find_first_of(prev.kc_ids.begin(), prev.kc_ids.end(), q_kcs[q].begin(), q_kcs[q].end()) !=
            prev.kc_ids.end()) {
          ++exposures;
        }
      }
      const double logit =
          theta - b[q] + spec.mastery_gain * static_cast<double>(std::min(exposures, spec.exposure_cap));
      double p = sigmoid(logit);
      const bool draw = rng.bernoulli(p);
      int correct = draw ? 1 : 0;
      if (first_answer[q] < 0 && partner[q] < spec.questions && first_answer[partner[q]] >= 0) {
        correct = first_answer[partner[q]];
        p = correct;
      }
      if (first_answer[q] < 0) first_answer[q] = correct;
      std::uint32_t attempts = 1;
      if (!correct) {
        const double retry = sigmoid(spec.attempt_bias + theta - b[q]);
        while (attempts < spec.max_attempts) {
          ++attempts;
          if (rng.bernoulli(retry)) break;
        }
      }
      ingest::InteractionRecord r;
      r.student_id = seq.student_id;
      r.question_id = qids[q];
      r.kc_ids = q_kcs[q];
      r.correct = static_cast<std::uint8_t>(correct);
      r.attempts = attempts;
      r.order_index = t;
      seq.records.push_back(std::move(r));
      oracle.push_back(p);
    }
    out.sequences.push_back(std::move(seq));
    truth.oracle.push_back(std::move(oracle));
  }
  return out;
}

}  // namespace dagkt::synth
