#include "seqsrl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"
#include "seqsrl/linearizer.hpp"

namespace seqsrl {

namespace {

std::vector<LabeledSpan> arguments_of(std::span<const LabeledSpan> spans) {
  std::vector<LabeledSpan> out;
  for (const auto& s : spans) {
    if (s.role != kPredicateRole) out.push_back(s);
  }
  return out;
}

bool same_bounds(const LabeledSpan& a, const LabeledSpan& b) { return a.start == b.start && a.end == b.end; }

bool intersects(const LabeledSpan& a, const LabeledSpan& b) { return a.start <= b.end && b.start <= a.end; }

bool is_core_role(const std::string& role) {
  return role.size() == 2 && role[0] == 'A' && role[1] >= '0' && role[1] <= '5';
}

const char* kLengthLabels[] = {"<=20", "21-30", "31-40", "41-50", "51-60", ">60"};
const char* kFifthLabels[] = {"0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"};

std::vector<CurveBin> make_bins(std::span<const char* const> labels) {
  std::vector<CurveBin> bins;
  for (const char* l : labels) bins.push_back(CurveBin{l, {}, 0, 0});
  return bins;
}

}  // namespace

std::vector<Overlap> span_overlap(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold) {
  const auto g = arguments_of(gold);
  std::vector<Overlap> out;
  for (const auto& p : arguments_of(predicted)) {
    if (std::any_of(g.begin(), g.end(), [&](const auto& x) { return same_bounds(p, x); })) {
      out.push_back(Overlap::Exact);
    } else if (std::any_of(g.begin(), g.end(), [&](const auto& x) { return intersects(p, x); })) {
      out.push_back(Overlap::Partial);
    } else {
      out.push_back(Overlap::None);
    }
  }
  return out;
}

std::size_t ConfusionMatrix::index(const std::string& label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw IndexError("confusion matrix has no label " + label);
  return static_cast<std::size_t>(it - labels.begin());
}

std::size_t ConfusionMatrix::row_total(std::size_t row) const {
  std::size_t total = 0;
  for (std::size_t c : counts.at(row)) total += c;
  return total;
}

double ConfusionMatrix::percent(std::size_t row, std::size_t col) const {
  const std::size_t total = row_total(row);
  return total ? 100.0 * static_cast<double>(counts[row].at(col)) / static_cast<double>(total) : 0.0;
}

double ArgCountDiffs::duplicate_rate() const {
  return structures ? static_cast<double>(duplicates) / static_cast<double>(structures) : 0.0;
}

std::optional<double> CurveBin::f1() const {
  if (empty()) return std::nullopt;
  return counts.f1();
}

std::optional<double> CurveBin::error_ratio() const {
  if (spans == 0) return std::nullopt;
  return static_cast<double>(wrong) / static_cast<double>(spans);
}

std::size_t length_bin(std::size_t n) {
  if (n <= 20) return 0;
  return std::min<std::size_t>(5, (n - 11) / 10);
}

std::size_t fifth(double x) {
  if (!(x > 0.0)) return 0;
  return std::min<std::size_t>(4, static_cast<std::size_t>(std::floor(x * 5.0)));
}

AnalysisReport analyze(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                       const ComparabilityFlags& comparable) {
  // score() performs the alignment checks.
  (void)score(predicted, gold, comparable);
  AnalysisReport r;
  r.f1_by_length = make_bins(kLengthLabels);
  r.f1_by_distance = make_bins(kFifthLabels);
  r.error_by_position = make_bins(kFifthLabels);

  std::set<std::string> roles;
  for (std::span<const AnnotatedSentence> side : {predicted, gold}) {
    for (const auto& s : side) {
      for (const auto& p : s.predicates) {
        for (const auto& span : p.spans) {
          if (span.role != kPredicateRole) roles.insert(span.role);
        }
      }
    }
  }
  r.confusion.labels.assign(roles.begin(), roles.end());
  r.confusion.labels.push_back(kNoneLabel);
  const std::size_t none = r.confusion.labels.size() - 1;
  r.confusion.counts.assign(r.confusion.labels.size(), std::vector<std::size_t>(r.confusion.labels.size(), 0));

  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto n = static_cast<double>(gold[s].tokens.size());
    for (std::size_t k = 0; k < gold[s].predicates.size(); ++k) {
      if (!comparable.empty() && !comparable[s][k]) {
        ++r.skipped;
        continue;
      }
      ++r.structures;
      const auto ps = arguments_of(predicted[s].predicates[k].spans);
      const auto gs = arguments_of(gold[s].predicates[k].spans);
      const Counts c = match_spans(ps, gs);

      for (Overlap o : span_overlap(ps, gs)) {
        if (o == Overlap::Exact) ++r.overlap.exact;
        if (o == Overlap::Partial) ++r.overlap.partial;
        if (o == Overlap::None) ++r.overlap.none;
      }

      for (const auto& g : gs) {
        auto hit = std::find_if(ps.begin(), ps.end(), [&](const auto& p) { return same_bounds(p, g); });
        const std::size_t col = hit == ps.end() ? none : r.confusion.index(hit->role);
        ++r.confusion.counts[r.confusion.index(g.role)][col];
      }
      for (const auto& p : ps) {
        if (std::none_of(gs.begin(), gs.end(), [&](const auto& g) { return same_bounds(p, g); })) {
          ++r.confusion.counts[none][r.confusion.index(p.role)];
        }
      }

      ++r.counts.structures;
      r.counts.missing[std::min<std::size_t>(2, c.gold - c.correct)]++;
      r.counts.excess[std::min<std::size_t>(2, c.predicted - c.correct)]++;
      std::map<std::string, std::size_t> core;
      for (const auto& p : ps) {
        if (is_core_role(p.role)) ++core[p.role];
      }
      if (std::any_of(core.begin(), core.end(), [](const auto& kv) { return kv.second > 1; })) ++r.counts.duplicates;

      const std::size_t target_len = linearize(gold[s], k).target.size();
      CurveBin& by_length = r.f1_by_length[length_bin(target_len)];
      by_length.counts += c;
      by_length.spans += c.predicted;
      by_length.wrong += c.predicted - c.correct;

      const auto pred_index = static_cast<double>(gold[s].predicates[k].predicate_index);
      auto distance_bucket = [&](const LabeledSpan& span) {
        const double mid = (static_cast<double>(span.start) + static_cast<double>(span.end)) / 2.0;
        return fifth(std::abs(mid - pred_index) / n);
      };
      auto add = [](CurveBin& bin, bool correct) {
        ++bin.counts.predicted;
        ++bin.spans;
        if (correct) {
          ++bin.counts.correct;
        } else {
          ++bin.wrong;
        }
      };
      for (const auto& g : gs) {
        ++r.f1_by_distance[distance_bucket(g)].counts.gold;
        ++r.error_by_position[fifth(static_cast<double>(g.start) / n)].counts.gold;
      }
      for (const auto& p : ps) {
        const bool correct = std::find(gs.begin(), gs.end(), p) != gs.end();
        add(r.f1_by_distance[distance_bucket(p)], correct);
        add(r.error_by_position[fifth(static_cast<double>(p.start) / n)], correct);
      }
    }
  }
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json bins_json(const std::vector<CurveBin>& bins) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : bins) {
    out.push_back({{"bin", b.label},
                   {"correct", b.counts.correct},
                   {"predicted", b.counts.predicted},
                   {"gold", b.counts.gold},
                   {"f1", opt(b.f1())},
                   {"error_ratio", opt(b.error_ratio())}});
  }
  return out;
}

}  // namespace

nlohmann::json AnalysisReport::to_json() const {
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t r = 0; r < confusion.labels.size(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < confusion.labels.size(); ++c) row.push_back(confusion.counts[r][c]);
    matrix.push_back(row);
  }
  return {{"structures", structures},
          {"skipped_non_comparable", skipped},
          {"overlap", {{"exact", overlap.exact}, {"partial", overlap.partial}, {"none", overlap.none}}},
          {"confusion", {{"labels", confusion.labels}, {"counts", matrix}}},
          {"missing_histogram", counts.missing},
          {"excess_histogram", counts.excess},
          {"duplicate_rate", counts.duplicate_rate()},
          {"f1_by_length", bins_json(f1_by_length)},
          {"f1_by_distance", bins_json(f1_by_distance)},
          {"error_by_position", bins_json(error_by_position)}};
}

// ---------------------------------------------------------------------------
// CSV and SVG output

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::string csv_header(const std::string& provenance) {
  std::string out;
  std::istringstream lines(provenance);
  std::string line;
  while (std::getline(lines, line)) out += "# " + line + "\n";
  return out;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string comment_safe(std::string s) {
  for (std::size_t pos; (pos = s.find("--")) != std::string::npos;) s.replace(pos, 2, "- -");
  return s;
}

struct Series {
  std::string name;
  std::vector<std::optional<double>> values;
  const char* color;
};

// Grouped bar chart; missing values leave a gap.
std::string bar_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<Series>& series, double y_max, const std::string& y_label,
                      const std::string& provenance) {
  const double w = 640, h = 360, left = 60, right = 20, top = 40, bottom = 60;
  const double plot_w = w - left - right, plot_h = h - top - bottom;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  svg << "<!-- " << comment_safe(provenance) << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << xml_escape(title) << "</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = y_max * tick / 4.0, y = top + plot_h - plot_h * tick / 4.0;
    svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << w - right << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(v) << "</text>\n";
  }
  svg << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 14 " << top + plot_h / 2
      << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(y_label)
      << "</text>\n";
  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = left + group_w * static_cast<double>(c);
    for (std::size_t s = 0; s < series.size(); ++s) {
      const auto& v = series[s].values[c];
      if (!v) continue;
      const double bh = y_max > 0 ? plot_h * std::clamp(*v / y_max, 0.0, 1.0) : 0.0;
      svg << "<rect x=\"" << gx + group_w * 0.1 + bar_w * static_cast<double>(s) << "\" y=\"" << top + plot_h - bh
          << "\" width=\"" << bar_w << "\" height=\"" << bh << "\" fill=\"" << series[s].color << "\"><title>"
          << xml_escape(series[s].name + " " + categories[c] + ": " + fmt(*v)) << "</title></rect>\n";
    }
    svg << "<text x=\"" << gx + group_w / 2 << "\" y=\"" << top + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(categories[c])
        << "</text>\n";
  }
  double lx = left;
  for (const auto& s : series) {
    svg << "<rect x=\"" << lx << "\" y=\"" << h - 22 << "\" width=\"12\" height=\"12\" fill=\"" << s.color
        << "\"/>\n";
    svg << "<text x=\"" << lx + 16 << "\" y=\"" << h - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << xml_escape(s.name) << "</text>\n";
    lx += 110;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string heatmap(const ConfusionMatrix& m, const std::string& provenance) {
  const std::size_t n = m.labels.size();
  const double cell = 44, left = 90, top = 70;
  const double w = left + cell * static_cast<double>(n) + 20, h = top + cell * static_cast<double>(n) + 20;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  svg << "<!-- " << comment_safe(provenance) << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2
      << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">Gold (rows) vs predicted "
         "(columns), row percent</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double x = left + cell * (static_cast<double>(i) + 0.5);
    svg << "<text x=\"" << x << "\" y=\"" << top - 8 << "\" transform=\"rotate(-45 " << x << " " << top - 8
        << ")\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(m.labels[i]) << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << top + cell * (static_cast<double>(i) + 0.6)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(m.labels[i])
        << "</text>\n";
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double p = m.percent(r, c);
      const int shade = static_cast<int>(std::lround(255.0 - 2.0 * p));
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02xff", std::clamp(shade, 0, 255), std::clamp(shade, 0, 255));
      const double x = left + cell * static_cast<double>(c), y = top + cell * static_cast<double>(r);
      svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << color << "\" stroke=\"#eee\"/>\n";
      if (m.counts[r][c] > 0) {
        svg << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" fill=\""
            << (p > 60 ? "white" : "black") << "\">" << fmt(p) << "</text>\n";
      }
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string curve_csv(const std::vector<CurveBin>& bins, bool error, const std::string& provenance) {
  std::string out = csv_header(provenance);
  out += error ? "region,spans,wrong,error_ratio,correct,predicted,gold,f1\n" : "bin,correct,predicted,gold,f1\n";
  for (const auto& b : bins) {
    if (error) {
      out += b.label + "," + std::to_string(b.spans) + "," + std::to_string(b.wrong) + "," + fmt(b.error_ratio()) +
             "," + std::to_string(b.counts.correct) + "," + std::to_string(b.counts.predicted) + "," +
             std::to_string(b.counts.gold) + "," + fmt(b.f1()) + "\n";
    } else {
      out += b.label + "," + std::to_string(b.counts.correct) + "," + std::to_string(b.counts.predicted) + "," +
             std::to_string(b.counts.gold) + "," + fmt(b.f1()) + "\n";
    }
  }
  return out;
}

std::vector<std::string> bin_labels(const std::vector<CurveBin>& bins) {
  std::vector<std::string> out;
  for (const auto& b : bins) out.push_back(b.label);
  return out;
}

}  // namespace

std::vector<std::filesystem::path> write_analysis(const AnalysisReport& report, const std::filesystem::path& dir,
                                                  const std::string& provenance) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(dir / name, text);
    written.push_back(dir / name);
  };

  const ConfusionMatrix& m = report.confusion;
  std::string csv = csv_header(provenance) + "gold\\predicted";
  for (const auto& l : m.labels) csv += "," + l;
  csv += ",total\n";
  for (std::size_t r = 0; r < m.labels.size(); ++r) {
    csv += m.labels[r];
    for (std::size_t c = 0; c < m.labels.size(); ++c) csv += "," + fmt(m.percent(r, c));
    csv += "," + std::to_string(m.row_total(r)) + "\n";
  }
  emit("confusion.csv", csv);
  emit("confusion.svg", heatmap(m, provenance));

  csv = csv_header(provenance) + "bin,missing,excess\n";
  const char* count_bins[] = {"0", "1", "2+"};
  for (std::size_t b = 0; b < 3; ++b) {
    csv += std::string(count_bins[b]) + "," + std::to_string(report.counts.missing[b]) + "," +
           std::to_string(report.counts.excess[b]) + "\n";
  }
  emit("arg_counts.csv", csv);
  {
    const double total = static_cast<double>(std::max<std::size_t>(1, report.counts.structures));
    Series missing{"missing", {}, "#4878cf"}, excess{"excess", {}, "#f28e2b"};
    for (std::size_t b = 0; b < 3; ++b) {
      missing.values.push_back(100.0 * static_cast<double>(report.counts.missing[b]) / total);
      excess.values.push_back(100.0 * static_cast<double>(report.counts.excess[b]) / total);
    }
    emit("arg_counts.svg", bar_chart("Missing and excess arguments per structure", {"0", "1", "2+"},
                                     {missing, excess}, 100.0, "% of structures", provenance));
  }

  auto f1_series = [](const std::vector<CurveBin>& bins) {
    Series s{"F1", {}, "#4878cf"};
    for (const auto& b : bins) s.values.push_back(b.f1());
    return s;
  };
  emit("f1_by_length.csv", curve_csv(report.f1_by_length, false, provenance));
  emit("f1_by_length.svg", bar_chart("F1 by linearized sequence length", bin_labels(report.f1_by_length),
                                     {f1_series(report.f1_by_length)}, 100.0, "F1", provenance));
  emit("f1_by_distance.csv", curve_csv(report.f1_by_distance, false, provenance));
  emit("f1_by_distance.svg", bar_chart("F1 by normalised distance to the predicate", bin_labels(report.f1_by_distance),
                                       {f1_series(report.f1_by_distance)}, 100.0, "F1", provenance));
  emit("error_by_position.csv", curve_csv(report.error_by_position, true, provenance));
  {
    Series s{"error ratio", {}, "#e15759"};
    for (const auto& b : report.error_by_position) s.values.push_back(b.error_ratio());
    emit("error_by_position.svg", bar_chart("Error ratio by position in the sentence",
                                            bin_labels(report.error_by_position), {s}, 1.0, "error ratio",
                                            provenance));
  }
  nlohmann::json j = report.to_json();
  j["provenance"] = provenance;
  emit("analysis.json", j.dump(2) + "\n");
  return written;
}

}  // namespace seqsrl
