#include "log_ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "errors.hpp"
#include "json_util.hpp"
#include "random.hpp"

namespace dagkt::ingest {
namespace {

using nlohmann::json;

// Splits one delimited line, honouring double-quoted fields ("" escapes a quote).
std::vector<std::string> split_row(std::string_view line, char delim, std::size_t line_no) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == delim) {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  cells.push_back(std::move(cell));
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_flag(std::string_view s) {
  s = trim(s);
  return s == "1" || s == "true" || s == "TRUE" || s == "True";
}

std::vector<std::string> split_kcs(std::string_view cell, char sep) {
  std::set<std::string> unique;
  std::size_t start = 0;
  while (start <= cell.size()) {
    std::size_t end = cell.find(sep, start);
    if (end == std::string_view::npos) end = cell.size();
    auto token = trim(cell.substr(start, end - start));
    if (!token.empty()) unique.emplace(token);
    start = end + 1;
  }
  return {unique.begin(), unique.end()};
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                         bool required) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    if (required) throw ParseError("missing column '" + name + "' in header", 1);
    return SIZE_MAX;
  }
  return static_cast<std::size_t>(it - header.begin());
}

// Sorts, checks duplicates, derives attempts when needed and drops short sequences.
std::vector<StudentSequence> assemble(std::map<std::string, std::vector<InteractionRecord>> by_student,
                                      bool derive_attempts, bool deduplicate) {
  std::vector<StudentSequence> out;
  for (auto& [student, records] : by_student) {
    std::stable_sort(records.begin(), records.end(),
                     [](const auto& a, const auto& b) { return a.order_index < b.order_index; });
    std::vector<InteractionRecord> kept;
    kept.reserve(records.size());
    for (auto& r : records) {
      if (!kept.empty() && kept.back().order_index == r.order_index) {
        if (deduplicate) continue;
        throw ValidationError("student '" + student + "' has duplicate order_index " +
                              std::to_string(r.order_index));
      }
      kept.push_back(std::move(r));
    }
    if (derive_attempts) {
      std::unordered_map<std::string, std::uint32_t> seen;
      for (auto& r : kept) r.attempts = ++seen[r.question_id];
    }
    if (kept.size() < kMinSequenceLength) continue;
    out.push_back({student, std::move(kept)});
  }
  return out;
}

json record_to_json(const InteractionRecord& r) {
  return json{{"question_id", r.question_id},
              {"kc_ids", r.kc_ids},
              {"correct", r.correct},
              {"attempts", r.attempts},
              {"order_index", r.order_index}};
}

}  // namespace

ColumnMapping ColumnMapping::from_json(const json& j) {
  reject_unknown_keys(j, ColumnMapping{}.to_json(), "column mapping");
  ColumnMapping m;
  auto str = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  auto chr = [&](const char* key, char& field) {
    if (!j.contains(key)) return;
    auto s = j.at(key).get<std::string>();
    if (s == "\\t" || s == "tab") s = "\t";
    if (s.size() != 1) throw ValidationError(std::string("column mapping field '") + key +
                                             "' must be a single character");
    field = s[0];
  };
  str("student", m.student);
  str("question", m.question);
  str("kcs", m.kcs);
  str("correct", m.correct);
  str("order", m.order);
  str("attempts", m.attempts);
  str("scaffolding", m.scaffolding);
  chr("delimiter", m.delimiter);
  chr("kc_separator", m.kc_separator);
  if (j.contains("deduplicate")) m.deduplicate = j.at("deduplicate").get<bool>();
  return m;
}

json ColumnMapping::to_json() const {
  return json{{"student", student},         {"question", question},
              {"kcs", kcs},                 {"correct", correct},
              {"order", order},             {"attempts", attempts},
              {"scaffolding", scaffolding}, {"delimiter", std::string(1, delimiter)},
              {"kc_separator", std::string(1, kc_separator)},
              {"deduplicate", deduplicate}};
}

std::vector<StudentSequence> parse_log(std::istream& source, const ColumnMapping& mapping) {
  std::string line;
  if (!std::getline(source, line)) throw ParseError("empty input: header row required", 1);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_row(line, mapping.delimiter, 1);
  for (auto& h : header) h = std::string(trim(h));

  const auto c_student = column_index(header, mapping.student, true);
  const auto c_question = column_index(header, mapping.question, true);
  const auto c_kcs = column_index(header, mapping.kcs, true);
  const auto c_correct = column_index(header, mapping.correct, true);
  const auto c_order = column_index(header, mapping.order, true);
  const bool has_attempts = !mapping.attempts.empty();
  const auto c_attempts = has_attempts ? column_index(header, mapping.attempts, true) : SIZE_MAX;
  const auto c_scaffold =
      mapping.scaffolding.empty() ? SIZE_MAX : column_index(header, mapping.scaffolding, true);

  std::map<std::string, std::vector<InteractionRecord>> by_student;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line, mapping.delimiter, line_no);
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    if (c_scaffold != SIZE_MAX && parse_flag(cells[c_scaffold])) continue;

    InteractionRecord r;
    r.student_id = std::string(trim(cells[c_student]));
    r.question_id = std::string(trim(cells[c_question]));
    if (r.student_id.empty()) throw ParseError("empty student id", line_no);
    if (r.question_id.empty()) throw ParseError("empty question id", line_no);

    int correct = 0;
    if (!parse_int(cells[c_correct], correct) || (correct != 0 && correct != 1)) {
      throw ValidationError("line " + std::to_string(line_no) + ": correctness '" +
                            cells[c_correct] + "' is not 0 or 1");
    }
    r.correct = static_cast<std::uint8_t>(correct);

    if (!parse_int(cells[c_order], r.order_index)) {
      throw ParseError("order index '" + cells[c_order] + "' is not a nonnegative integer",
                       line_no);
    }
    r.kc_ids = split_kcs(cells[c_kcs], mapping.kc_separator);
    if (r.kc_ids.empty()) {
      throw ValidationError("line " + std::to_string(line_no) + ": empty KC list");
    }
    if (has_attempts) {
      long long attempts = 0;
      if (!parse_int(cells[c_attempts], attempts)) {
        throw ParseError("attempts '" + cells[c_attempts] + "' is not an integer", line_no);
      }
      if (attempts < 1) {
        throw ValidationError("line " + std::to_string(line_no) + ": attempts must be >= 1");
      }
      r.attempts = static_cast<std::uint32_t>(attempts);
    }
    by_student[r.student_id].push_back(std::move(r));
  }
  return assemble(std::move(by_student), !has_attempts, mapping.deduplicate);
}

std::vector<StudentSequence> parse_log_file(const std::string& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_log(in, mapping);
}

void write_canonical(std::ostream& out, const std::vector<StudentSequence>& sequences) {
  for (const auto& s : sequences) {
    json records = json::array();
    for (const auto& r : s.records) records.push_back(record_to_json(r));
    out << json{{"student_id", s.student_id}, {"records", std::move(records)}}.dump() << '\n';
  }
}

std::vector<StudentSequence> read_canonical(std::istream& in) {
  std::vector<StudentSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      StudentSequence s;
      s.student_id = j.at("student_id").get<std::string>();
      for (const auto& jr : j.at("records")) {
        InteractionRecord r;
        r.student_id = s.student_id;
        r.question_id = jr.at("question_id").get<std::string>();
        r.kc_ids = jr.at("kc_ids").get<std::vector<std::string>>();
        std::sort(r.kc_ids.begin(), r.kc_ids.end());
        r.kc_ids.erase(std::unique(r.kc_ids.begin(), r.kc_ids.end()), r.kc_ids.end());
        const int correct = jr.at("correct").get<int>();
        if (correct != 0 && correct != 1) {
          throw ValidationError("line " + std::to_string(line_no) + ": correctness not in {0,1}");
        }
        r.correct = static_cast<std::uint8_t>(correct);
        const auto attempts = jr.at("attempts").get<std::int64_t>();
        if (attempts < 1) {
          throw ValidationError("line " + std::to_string(line_no) + ": attempts must be >= 1");
        }
        r.attempts = static_cast<std::uint32_t>(attempts);
        r.order_index = jr.at("order_index").get<std::uint64_t>();
        s.records.push_back(std::move(r));
      }
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  validate(out);
  return out;
}

void write_canonical_file(const std::string& path, const std::vector<StudentSequence>& sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_canonical(out, sequences);
}

std::vector<StudentSequence> read_canonical_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_canonical(in);
}

void validate(const std::vector<StudentSequence>& sequences) {
  std::unordered_set<std::string> students;
  for (const auto& s : sequences) {
    if (!students.insert(s.student_id).second) {
      throw ValidationError("student '" + s.student_id + "' appears in more than one sequence");
    }
    if (s.records.size() < kMinSequenceLength) {
      throw ValidationError("student '" + s.student_id + "' has fewer than " +
                            std::to_string(kMinSequenceLength) + " records");
    }
    for (std::size_t i = 0; i < s.records.size(); ++i) {
      const auto& r = s.records[i];
      if (r.student_id != s.student_id) throw ValidationError("record student id mismatch");
      if (r.kc_ids.empty()) throw ValidationError("record with empty KC list");
      if (r.correct > 1) throw ValidationError("correctness not in {0,1}");
      if (r.attempts < 1) throw ValidationError("attempts must be >= 1");
      if (i > 0 && s.records[i - 1].order_index >= r.order_index) {
        throw ValidationError("records of '" + s.student_id + "' not strictly ordered");
      }
    }
  }
}

json DatasetStats::to_json() const {
  return json{{"students", n_students},
              {"questions", n_questions},
              {"skills", n_skills},
              {"logs", n_logs},
              {"questions_per_skill", questions_per_skill},
              {"skills_per_question", skills_per_question}};
}

DatasetStats compute_stats(const std::vector<StudentSequence>& sequences) {
  if (sequences.empty()) throw ValidationError("cannot compute statistics of an empty dataset");
  std::map<std::string, std::set<std::string>> question_kcs;
  std::set<std::string> skills;
  DatasetStats st;
  st.n_students = sequences.size();
  for (const auto& s : sequences) {
    st.n_logs += s.records.size();
    for (const auto& r : s.records) {
      auto& kcs = question_kcs[r.question_id];
      kcs.insert(r.kc_ids.begin(), r.kc_ids.end());
      skills.insert(r.kc_ids.begin(), r.kc_ids.end());
    }
  }
  st.n_questions = question_kcs.size();
  st.n_skills = skills.size();
  std::size_t tag_total = 0;
  for (const auto& [q, kcs] : question_kcs) tag_total += kcs.size();
  st.questions_per_skill = static_cast<double>(st.n_questions) / static_cast<double>(st.n_skills);
  st.skills_per_question = static_cast<double>(tag_total) / static_cast<double>(st.n_questions);
  return st;
}

std::vector<FoldSplit> make_folds(const std::vector<StudentSequence>& sequences, std::size_t k,
                                  std::uint64_t seed) {
  if (k < 2) throw ValidationError("fold count must be at least 2");
  if (k > sequences.size()) {
    throw ValidationError("fold count " + std::to_string(k) + " exceeds student count " +
                          std::to_string(sequences.size()));
  }
  std::vector<std::string> ids;
  ids.reserve(sequences.size());
  for (const auto& s : sequences) ids.push_back(s.student_id);
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, 0xF01D));
  rng.shuffle(ids);

  std::vector<FoldSplit> folds(k);
  for (std::size_t f = 0; f < k; ++f) folds[f].fold_index = f;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      (i % k == f ? folds[f].test_ids : folds[f].train_ids).push_back(ids[i]);
    }
  }
  for (auto& f : folds) {
    std::sort(f.train_ids.begin(), f.train_ids.end());
    std::sort(f.test_ids.begin(), f.test_ids.end());
  }
  return folds;
}

std::vector<StudentSequence> sample_students(const std::vector<StudentSequence>& sequences,
                                             std::size_t count, std::uint64_t seed) {
  if (count >= sequences.size()) return sequences;
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5A3B1E));
  rng.shuffle(order);
  order.resize(count);
  std::sort(order.begin(), order.end());
  std::vector<StudentSequence> out;
  out.reserve(count);
  for (auto i : order) out.push_back(sequences[i]);
  return out;
}

std::vector<StudentSequence> select_students(const std::vector<StudentSequence>& sequences,
                                             const std::vector<std::string>& ids) {
  std::unordered_set<std::string> wanted(ids.begin(), ids.end());
  std::vector<StudentSequence> out;
  for (const auto& s : sequences) {
    if (wanted.count(s.student_id)) out.push_back(s);
  }
  return out;
}

}  // namespace dagkt::ingest
