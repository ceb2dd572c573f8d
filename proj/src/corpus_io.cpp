#include "seqsrl/corpus_io.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"

namespace seqsrl {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (in >> field) out.push_back(field);
  return out;
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

struct Row {
  std::size_t line;
  std::vector<std::string> fields;
};

/// One span column being scanned top to bottom.
struct ColumnState {
  std::optional<LabeledSpan> open;
  std::vector<LabeledSpan> spans;
};

void parse_cell(const std::string& cell, std::size_t token, std::size_t line, ColumnState& col) {
  std::size_t pos = 0;
  if (!cell.empty() && cell[0] == '(') {
    const std::size_t star = cell.find('*');
    if (star == std::string::npos) throw ParseError(line, "span cell '" + cell + "' has no '*'");
    std::string role = cell.substr(1, star - 1);
    if (!valid_role(role)) throw ParseError(line, "invalid role '" + role + "' in cell '" + cell + "'");
    if (col.open) {
      throw ParseError(line, "span '" + role + "' opens inside open span '" + col.open->role +
                                 "' (nested or overlapping)");
    }
    col.open = LabeledSpan{token, token, std::move(role)};
    pos = star;
  }
  if (pos >= cell.size() || cell[pos] != '*') throw ParseError(line, "malformed span cell '" + cell + "'");
  ++pos;
  if (pos == cell.size()) return;
  if (cell.substr(pos) != ")") throw ParseError(line, "malformed span cell '" + cell + "'");
  if (!col.open) throw ParseError(line, "closing ')' without an open span");
  col.open->end = token;
  col.spans.push_back(std::move(*col.open));
  col.open.reset();
}

AnnotatedSentence parse_sentence(const std::vector<Row>& rows, Strictness strictness) {
  AnnotatedSentence s;
  const std::size_t width = rows.front().fields.size();
  if (width < 2) throw ParseError(rows.front().line, "expected at least 2 columns, found " + std::to_string(width));
  for (const Row& r : rows) {
    if (r.fields.size() != width) {
      throw ParseError(r.line, "column count " + std::to_string(r.fields.size()) +
                                   " differs from the sentence's first row (" + std::to_string(width) + ")");
    }
  }
  const std::size_t n_cols = width - 2;
  std::vector<ColumnState> cols(n_cols);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const Row& r = rows[t];
    s.tokens.push_back(r.fields[0]);
    if (r.fields[1] != "-") s.predicates.push_back(PredicateStructure{t, r.fields[1], {}});
    for (std::size_t c = 0; c < n_cols; ++c) parse_cell(r.fields[2 + c], t, r.line, cols[c]);
  }
  for (const ColumnState& col : cols) {
    if (col.open) {
      throw ParseError(rows.back().line, "span '" + col.open->role + "' opened but never closed");
    }
  }
  if (s.predicates.size() != n_cols) {
    throw ParseError(rows.front().line, std::to_string(s.predicates.size()) + " predicates but " +
                                            std::to_string(n_cols) + " span columns");
  }
  for (std::size_t c = 0; c < n_cols; ++c) s.predicates[c].spans = cols[c].spans;
  try {
    validate(s, strictness);
  } catch (const ContractError& e) {
    throw ParseError(rows.front().line, e.what());
  }
  return s;
}

}  // namespace

bool valid_role(const std::string& role) {
  if (role.empty()) return false;
  return std::none_of(role.begin(), role.end(), [](unsigned char c) {
    return std::isspace(c) || c == '(' || c == ')' || c == '*';
  });
}

void validate(const AnnotatedSentence& sentence, Strictness strictness) {
  const std::size_t n = sentence.tokens.size();
  if (n == 0) throw ContractError("sentence has no tokens");
  for (const std::string& tok : sentence.tokens) {
    if (tok.empty() || std::any_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); })) {
      throw ContractError("token '" + tok + "' is empty or contains whitespace");
    }
  }
  std::size_t last_pred = 0;
  for (std::size_t p = 0; p < sentence.predicates.size(); ++p) {
    const PredicateStructure& pred = sentence.predicates[p];
    if (pred.predicate_index >= n) throw ContractError("predicate index outside the sentence");
    if (p > 0 && pred.predicate_index <= last_pred) {
      throw ContractError("predicates must be listed in increasing token order, one per token");
    }
    last_pred = pred.predicate_index;
    if (pred.lemma.empty() || pred.lemma == "-" ||
        std::any_of(pred.lemma.begin(), pred.lemma.end(), [](unsigned char c) { return std::isspace(c); })) {
      throw ContractError("predicate at token " + std::to_string(pred.predicate_index) + " has an invalid lemma");
    }
    std::vector<LabeledSpan> sorted = pred.spans;
    std::sort(sorted.begin(), sorted.end());
    std::size_t v_count = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const LabeledSpan& sp = sorted[i];
      if (!valid_role(sp.role)) throw ContractError("invalid role '" + sp.role + "'");
      if (sp.start > sp.end || sp.end >= n) {
        throw ContractError("span " + sp.role + "[" + std::to_string(sp.start) + "," + std::to_string(sp.end) +
                            "] outside sentence of length " + std::to_string(n));
      }
      if (i > 0 && sorted[i - 1].end >= sp.start) {
        throw ContractError("spans " + sorted[i - 1].role + " and " + sp.role + " overlap");
      }
      if (sp.role == kPredicateRole) {
        ++v_count;
        if (strictness == Strictness::Gold && !sp.contains(pred.predicate_index)) {
          throw ContractError("V span does not contain predicate token " + std::to_string(pred.predicate_index));
        }
      }
    }
    if (strictness == Strictness::Gold && v_count != 1) {
      throw ContractError("predicate at token " + std::to_string(pred.predicate_index) + " has " +
                          std::to_string(v_count) + " V spans, expected exactly one");
    }
  }
}

std::vector<AnnotatedSentence> read_props(std::istream& in, Strictness strictness) {
  std::vector<AnnotatedSentence> out;
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) {
      if (!rows.empty()) out.push_back(parse_sentence(rows, strictness));
      rows.clear();
      continue;
    }
    rows.push_back(Row{line_no, split_ws(line)});
  }
  if (!rows.empty()) out.push_back(parse_sentence(rows, strictness));
  return out;
}

std::vector<AnnotatedSentence> read_props(const std::string& text, Strictness strictness) {
  std::istringstream in(text);
  return read_props(in, strictness);
}

std::vector<AnnotatedSentence> read_props_file(const std::filesystem::path& path, Strictness strictness) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open props file " + path.string());
  try {
    return read_props(in, strictness);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

std::string write_props(std::span<const AnnotatedSentence> sentences, Strictness strictness) {
  for (const AnnotatedSentence& s : sentences) validate(s, strictness);
  std::string out;
  for (const AnnotatedSentence& s : sentences) {
    const std::size_t n = s.tokens.size();
    std::vector<std::string> lemmas(n, "-");
    for (const PredicateStructure& p : s.predicates) lemmas[p.predicate_index] = p.lemma;
    std::vector<std::vector<std::string>> cells(s.predicates.size(), std::vector<std::string>(n, "*"));
    for (std::size_t c = 0; c < s.predicates.size(); ++c) {
      for (const LabeledSpan& sp : s.predicates[c].spans) {
        cells[c][sp.start] = "(" + sp.role + "*";
        cells[c][sp.end] += ")";
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      out += s.tokens[t];
      out += ' ';
      out += lemmas[t];
      for (const auto& col : cells) {
        out += ' ';
        out += col[t];
      }
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

void write_props_file(const std::filesystem::path& path, std::span<const AnnotatedSentence> sentences,
                      Strictness strictness) {
  write_file_atomic(path, write_props(sentences, strictness));
}

}  // namespace seqsrl
