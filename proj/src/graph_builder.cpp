#include "graph_builder.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "errors.hpp"
#include "hashing.hpp"

namespace dagkt::graph {

Vocabulary::Vocabulary(std::vector<std::string> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], static_cast<std::uint32_t>(i));
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Vocabulary::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown id '" + id + "'");
  return it->second;
}

Vocabulary question_vocabulary(const std::vector<StudentSequence>& sequences) {
  std::vector<std::string> ids;
  for (const auto& s : sequences)
    for (const auto& r : s.records) ids.push_back(r.question_id);
  return Vocabulary(std::move(ids));
}

Vocabulary kc_vocabulary(const std::vector<StudentSequence>& sequences) {
  std::vector<std::string> ids;
  for (const auto& s : sequences)
    for (const auto& r : s.records) ids.insert(ids.end(), r.kc_ids.begin(), r.kc_ids.end());
  return Vocabulary(std::move(ids));
}

void PairCounts::add(int first_correct, int second_correct) {
  if (first_correct) {
    ++(second_correct ? count_11 : count_10);
  } else {
    ++(second_correct ? count_01 : count_00);
  }
}

PairCounts& PairCounts::operator+=(const PairCounts& o) {
  count_11 += o.count_11;
  count_10 += o.count_10;
  count_01 += o.count_01;
  count_00 += o.count_00;
  return *this;
}

PairCounts PairCountTable::get(std::uint32_t first, std::uint32_t second) const {
  auto it = counts_.find(key(first, second));
  return it == counts_.end() ? PairCounts{} : it->second;
}

PairCounts PairCountTable::get(const std::string& first, const std::string& second) const {
  auto a = questions_.find(first);
  auto b = questions_.find(second);
  if (!a || !b) return {};
  return get(*a, *b);
}

void PairCountTable::merge(const PairCountTable& other) {
  if (other.questions_.ids() != questions_.ids()) {
    throw ValidationError("cannot merge pair counts over different question vocabularies");
  }
  for (const auto& [k, c] : other.counts_) counts_[k] += c;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> PairCountTable::pairs() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(counts_.size());
  for (const auto& [k, c] : counts_) {
    out.emplace_back(static_cast<std::uint32_t>(k >> 32), static_cast<std::uint32_t>(k & 0xFFFFFFFFu));
  }
  std::sort(out.begin(), out.end());
  return out;
}

PairCountTable accumulate_pair_counts(const std::vector<StudentSequence>& sequences) {
  return accumulate_pair_counts(sequences, question_vocabulary(sequences));
}

PairCountTable accumulate_pair_counts(const std::vector<StudentSequence>& sequences,
                                      const Vocabulary& questions) {
  PairCountTable table(questions);
  std::vector<std::pair<std::uint32_t, int>> firsts;
  std::unordered_set<std::uint32_t> seen;
  for (const auto& s : sequences) {
    firsts.clear();
    seen.clear();
    for (const auto& r : s.records) {
      const auto q = questions.at(r.question_id);
      if (seen.insert(q).second) firsts.emplace_back(q, r.correct);
    }
    for (std::size_t i = 0; i < firsts.size(); ++i) {
      for (std::size_t j = i + 1; j < firsts.size(); ++j) {
        table.at(firsts[i].first, firsts[j].first).add(firsts[i].second, firsts[j].second);
      }
    }
  }
  return table;
}

double f1_directed(const PairCounts& c, double lambda) {
  if (!(lambda > 0.0)) throw ValidationError("smoothing lambda must be positive");
  const double hit = static_cast<double>(c.count_11) + lambda;
  const double precision = hit / (static_cast<double>(c.count_01 + c.count_11) + lambda);
  const double recall = hit / (static_cast<double>(c.count_10 + c.count_11) + lambda);
  return 2.0 * precision * recall / (precision + recall);
}

double similarity(const PairCounts& forward, const PairCounts& backward, double lambda) {
  return (f1_directed(forward, lambda) + f1_directed(backward, lambda)) / 2.0;
}

double similarity(const std::string& q1, const std::string& q2, const PairCountTable& counts,
                  double lambda) {
  return similarity(counts.get(q1, q2), counts.get(q2, q1), lambda);
}

QKGraph::QKGraph(std::vector<std::pair<std::string, std::string>> question_kc,
                 std::vector<SimilarityEdge> similar, GraphParams params)
    : question_kc_(std::move(question_kc)), similar_(std::move(similar)), params_(params) {
  std::sort(question_kc_.begin(), question_kc_.end());
  question_kc_.erase(std::unique(question_kc_.begin(), question_kc_.end()), question_kc_.end());
  for (auto& e : similar_) {
    if (e.b < e.a) std::swap(e.a, e.b);
    if (e.a == e.b) throw ValidationError("similarity edge from '" + e.a + "' to itself");
  }
  std::sort(similar_.begin(), similar_.end(),
            [](const auto& x, const auto& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  for (std::size_t i = 0; i < similar_.size(); ++i) {
    if (!similar_index_.emplace(std::make_pair(similar_[i].a, similar_[i].b), i).second) {
      throw ValidationError("duplicate similarity edge " + similar_[i].a + "-" + similar_[i].b);
    }
  }
}

std::vector<std::string> QKGraph::questions() const {
  std::set<std::string> ids;
  for (const auto& [q, k] : question_kc_) ids.insert(q);
  for (const auto& e : similar_) {
    ids.insert(e.a);
    ids.insert(e.b);
  }
  return {ids.begin(), ids.end()};
}

std::vector<std::string> QKGraph::kcs() const {
  std::set<std::string> ids;
  for (const auto& [q, k] : question_kc_) ids.insert(k);
  return {ids.begin(), ids.end()};
}

bool QKGraph::has_similarity_edge(const std::string& q1, const std::string& q2) const {
  return similarity_score(q1, q2).has_value();
}

std::optional<double> QKGraph::similarity_score(const std::string& q1, const std::string& q2) const {
  auto key = q1 < q2 ? std::make_pair(q1, q2) : std::make_pair(q2, q1);
  auto it = similar_index_.find(key);
  if (it == similar_index_.end()) return std::nullopt;
  return similar_[it->second].sim;
}

QKGraph QKGraph::without_similarity() const { return QKGraph(question_kc_, {}, params_); }

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_graph_body(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& qk,
                      const std::vector<SimilarityEdge>& sim, const GraphParams& p) {
  out << "# lambda=" << format_double(p.lambda) << '\n';
  out << "# omega=" << format_double(p.omega) << '\n';
  out << "# min_support=" << p.min_support << '\n';
  out << "[question_kc]\n";
  out << "question\tkc\n";
  for (const auto& [q, k] : qk) out << q << '\t' << k << '\n';
  out << "[question_question]\n";
  out << "q1\tq2\tsim\tsupport\n";
  for (const auto& e : sim) {
    out << e.a << '\t' << e.b << '\t' << format_double(e.sim) << '\t' << e.support << '\n';
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  return out;
}

}  // namespace

void QKGraph::write_tsv(std::ostream& out, const std::vector<std::string>& header_notes) const {
  out << "# dagkt question-kc graph\n";
  for (const auto& note : header_notes) out << "# " << note << '\n';
  write_graph_body(out, question_kc_, similar_, params_);
}

QKGraph QKGraph::read_tsv(std::istream& in) {
  enum class Section { None, QuestionKc, QuestionQuestion } section = Section::None;
  bool expect_header = false;
  GraphParams params;
  std::vector<std::pair<std::string, std::string>> qk;
  std::vector<SimilarityEdge> sim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(2, eq - 2);
      auto value = line.substr(eq + 1);
      try {
        if (key == "lambda") params.lambda = std::stod(value);
        if (key == "omega") params.omega = std::stod(value);
        if (key == "min_support") params.min_support = static_cast<std::uint32_t>(std::stoul(value));
      } catch (const std::exception&) {
        throw ParseError("bad value for '" + key + "'", line_no);
      }
      continue;
    }
    if (line == "[question_kc]") {
      section = Section::QuestionKc;
      expect_header = true;
      continue;
    }
    if (line == "[question_question]") {
      section = Section::QuestionQuestion;
      expect_header = true;
      continue;
    }
    if (expect_header) {
      expect_header = false;
      continue;
    }
    auto cells = split_tabs(line);
    if (section == Section::QuestionKc) {
      if (cells.size() != 2) throw ParseError("question_kc row needs 2 fields", line_no);
      qk.emplace_back(cells[0], cells[1]);
    } else if (section == Section::QuestionQuestion) {
      if (cells.size() != 4) throw ParseError("question_question row needs 4 fields", line_no);
      try {
        sim.push_back({cells[0], cells[1], std::stod(cells[2]), std::stoull(cells[3])});
      } catch (const std::exception&) {
        throw ParseError("bad numeric field in question_question row", line_no);
      }
    } else {
      throw ParseError("row outside of any section", line_no);
    }
  }
  return QKGraph(std::move(qk), std::move(sim), params);
}

std::string QKGraph::content_hash() const {
  std::ostringstream body;
  write_graph_body(body, question_kc_, similar_, params_);
  return sha256_hex(body.str());
}

QKGraph build_graph(const std::vector<StudentSequence>& sequences, const GraphParams& params) {
  return build_graph(accumulate_pair_counts(sequences), sequences, params);
}

QKGraph build_graph(const PairCountTable& counts, const std::vector<StudentSequence>& sequences,
                    const GraphParams& params) {
  if (!(params.omega >= 0.0 && params.omega <= 1.0)) {
    throw ValidationError("omega must lie in [0, 1]");
  }
  if (params.min_support < 1) throw ValidationError("min_support must be at least 1");
  if (!(params.lambda > 0.0)) throw ValidationError("lambda must be positive");

  std::vector<std::pair<std::string, std::string>> qk;
  for (const auto& s : sequences)
    for (const auto& r : s.records)
      for (const auto& k : r.kc_ids) qk.emplace_back(r.question_id, k);

  std::vector<SimilarityEdge> edges;
  const auto& vocab = counts.questions();
  std::set<std::pair<std::uint32_t, std::uint32_t>> visited;
  for (auto [i, j] : counts.pairs()) {
    auto key = std::minmax(i, j);
    if (!visited.insert(key).second) continue;
    const auto fwd = counts.get(key.first, key.second);
    const auto bwd = counts.get(key.second, key.first);
    const auto support = fwd.total() + bwd.total();
    if (support < params.min_support) continue;
    const double sim = similarity(fwd, bwd, params.lambda);
    if (sim > params.omega) {
      edges.push_back({vocab.id(key.first), vocab.id(key.second), sim, support});
    }
  }
  return QKGraph(std::move(qk), std::move(edges), params);
}

DifficultyTable::DifficultyTable(std::map<std::string, QuestionDifficulty> rows)
    : rows_(std::move(rows)) {
  double total = 0.0;
  for (const auto& [q, d] : rows_) total += d.difficulty;
  mean_ = rows_.empty() ? 0.5 : total / static_cast<double>(rows_.size());
}

const QuestionDifficulty& DifficultyTable::at(const std::string& question) const {
  auto it = rows_.find(question);
  if (it == rows_.end()) throw LookupError("no difficulty for question '" + question + "'");
  return it->second;
}

void DifficultyTable::write_tsv(std::ostream& out) const {
  out << "question\tn_correct\tn_total\taccuracy\tdifficulty\n";
  for (const auto& [q, d] : rows_) {
    out << q << '\t' << d.n_correct << '\t' << d.n_total << '\t' << format_double(d.accuracy)
        << '\t' << format_double(d.difficulty) << '\n';
  }
}

DifficultyTable compute_difficulty(const std::vector<StudentSequence>& sequences) {
  std::map<std::string, QuestionDifficulty> rows;
  for (const auto& s : sequences) {
    for (const auto& r : s.records) {
      auto& d = rows[r.question_id];
      d.n_correct += r.correct;
      ++d.n_total;
    }
  }
  for (auto& [q, d] : rows) {
    d.accuracy = static_cast<double>(d.n_correct) / static_cast<double>(d.n_total);
    d.difficulty = 1.0 - d.accuracy;
  }
  return DifficultyTable(std::move(rows));
}

const std::vector<std::uint32_t>& AttemptTable::occurrences(const std::string& student,
                                                            const std::string& question) const {
  auto it = rows_.find({student, question});
  if (it == rows_.end()) {
    throw LookupError("no attempts for student '" + student + "' on question '" + question + "'");
  }
  return it->second;
}

std::uint32_t AttemptTable::attempts(const std::string& student, const std::string& question,
                                     std::size_t occurrence) const {
  const auto& occ = occurrences(student, question);
  if (occurrence >= occ.size()) {
    throw LookupError("occurrence " + std::to_string(occurrence) + " out of range");
  }
  return occ[occurrence];
}

void AttemptTable::write_tsv(std::ostream& out) const {
  out << "student\tquestion\toccurrence\tattempts\n";
  for (const auto& [key, occ] : rows_) {
    for (std::size_t i = 0; i < occ.size(); ++i) {
      out << key.first << '\t' << key.second << '\t' << i + 1 << '\t' << occ[i] << '\n';
    }
  }
}

AttemptTable compute_attempts(const std::vector<StudentSequence>& sequences) {
  AttemptTable table;
  for (const auto& s : sequences) {
    for (const auto& r : s.records) {
      table.rows_[{s.student_id, r.question_id}].push_back(r.attempts);
      table.max_ = std::max(table.max_, r.attempts);
    }
  }
  return table;
}

}  // namespace dagkt::graph
