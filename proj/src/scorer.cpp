#include "seqsrl/scorer.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "seqsrl/errors.hpp"

namespace seqsrl {

namespace {

double percent(std::size_t num, std::size_t den) {
  return den ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

bool is_predicate(const LabeledSpan& s) { return s.role == kPredicateRole; }

void check_aligned(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                   const ComparabilityFlags& comparable) {
  if (predicted.size() != gold.size()) {
    throw ContractError("score: " + std::to_string(predicted.size()) + " predicted sentences vs " +
                        std::to_string(gold.size()) + " gold");
  }
  if (!comparable.empty() && comparable.size() != gold.size()) {
    throw ContractError("score: comparability flags do not cover every sentence");
  }
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& p = predicted[s];
    const auto& g = gold[s];
    if (p.tokens.size() != g.tokens.size() || p.predicates.size() != g.predicates.size()) {
      throw ContractError("score: sentence " + std::to_string(s) + " differs in length or predicate count");
    }
    for (std::size_t k = 0; k < g.predicates.size(); ++k) {
      if (p.predicates[k].predicate_index != g.predicates[k].predicate_index) {
        throw ContractError("score: sentence " + std::to_string(s) + " predicate " + std::to_string(k) +
                            " sits at a different position");
      }
    }
    if (!comparable.empty() && comparable[s].size() != g.predicates.size()) {
      throw ContractError("score: comparability flags for sentence " + std::to_string(s) + " do not match");
    }
  }
}

bool flag(const ComparabilityFlags& f, std::size_t s, std::size_t k) { return f.empty() || f[s][k]; }

std::size_t count_arguments(std::span<const LabeledSpan> spans) {
  return static_cast<std::size_t>(std::count_if(spans.begin(), spans.end(), [](const auto& s) { return !is_predicate(s); }));
}

}  // namespace

double Counts::precision() const { return percent(correct, predicted); }
double Counts::recall() const { return percent(correct, gold); }

double Counts::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

Counts& Counts::operator+=(const Counts& other) {
  correct += other.correct;
  predicted += other.predicted;
  gold += other.gold;
  return *this;
}

Counts match_spans(std::span<const LabeledSpan> predicted, std::span<const LabeledSpan> gold,
                   bool include_predicate) {
  auto keep = [&](std::span<const LabeledSpan> in) {
    std::vector<LabeledSpan> out;
    for (const auto& s : in) {
      if (include_predicate || !is_predicate(s)) out.push_back(s);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const auto p = keep(predicted), g = keep(gold);
  Counts c;
  c.predicted = p.size();
  c.gold = g.size();
  std::vector<LabeledSpan> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  c.correct = common.size();
  return c;
}

ScoreReport score(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                  const ComparabilityFlags& comparable) {
  check_aligned(predicted, gold, comparable);
  ScoreReport r;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    for (std::size_t k = 0; k < gold[s].predicates.size(); ++k) {
      const auto& ps = predicted[s].predicates[k].spans;
      const auto& gs = gold[s].predicates[k].spans;
      ++r.structures;
      if (flag(comparable, s, k)) ++r.comparable_structures;
      r.arguments += match_spans(ps, gs);
      Counts all = match_spans(ps, gs, true);
      Counts args = match_spans(ps, gs);
      r.predicate.correct += all.correct - args.correct;
      r.predicate.predicted += all.predicted - args.predicted;
      r.predicate.gold += all.gold - args.gold;

      std::map<std::string, std::pair<std::vector<LabeledSpan>, std::vector<LabeledSpan>>> by_role;
      for (const auto& x : ps) by_role[x.role].first.push_back(x);
      for (const auto& x : gs) by_role[x.role].second.push_back(x);
      for (const auto& [role, lists] : by_role) r.labels[role] += match_spans(lists.first, lists.second, true);
    }
  }
  r.oracle = oracle_bounds(predicted, gold, comparable);
  return r;
}

OracleBounds oracle_bounds(std::span<const AnnotatedSentence> predicted, std::span<const AnnotatedSentence> gold,
                           const ComparabilityFlags& comparable) {
  check_aligned(predicted, gold, comparable);
  Counts lo, hi;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    for (std::size_t k = 0; k < gold[s].predicates.size(); ++k) {
      const auto& ps = predicted[s].predicates[k].spans;
      const auto& gs = gold[s].predicates[k].spans;
      if (flag(comparable, s, k)) {
        const Counts c = match_spans(ps, gs);
        lo += c;
        hi += c;
        continue;
      }
      const std::size_t g = count_arguments(gs);
      lo += Counts{0, count_arguments(ps), g};
      hi += Counts{g, g, g};
    }
  }
  return {lo.f1(), hi.f1()};
}

double ReproductionStats::same_length_rate() const { return percent(same_length, instances); }
double ReproductionStats::balanced_bracket_rate() const { return percent(balanced, instances); }

ReproductionStats reproduction_stats(std::span<const Delinearized> results) {
  ReproductionStats s;
  for (const Delinearized& r : results) {
    ++s.instances;
    if (r.comparable) ++s.same_length;
    if (r.repairs() == 0) ++s.balanced;
  }
  return s;
}

namespace {

std::string row(const std::string& name, const Counts& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %7zu %7zu %7zu %8.2f %8.2f %8.2f\n", name.c_str(), c.correct,
                c.predicted - c.correct, c.gold - c.correct, c.precision(), c.recall(), c.f1());
  return buf;
}

nlohmann::json counts_json(const Counts& c) {
  return {{"correct", c.correct},
          {"predicted", c.predicted},
          {"gold", c.gold},
          {"precision", c.precision()},
          {"recall", c.recall()},
          {"f1", c.f1()}};
}

}  // namespace

std::string ScoreReport::table() const {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "Structures: %zu (comparable %zu)\n", structures, comparable_structures);
  out << buf;
  if (same_length_rate) {
    std::snprintf(buf, sizeof buf, "Same length: %.2f%%   Balanced brackets: %.2f%%\n", *same_length_rate,
                  balanced_bracket_rate.value_or(0.0));
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "Oracle-min F1: %.2f   Oracle-max F1: %.2f\n\n", oracle.min_f1, oracle.max_f1);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-12s %7s %7s %7s %8s %8s %8s\n", "", "corr.", "excess", "missed", "prec.",
                "rec.", "F1");
  out << buf;
  out << row("Overall", arguments);
  out << std::string(63, '-') << '\n';
  for (const auto& [role, c] : labels) {
    if (role != kPredicateRole) out << row(role, c);
  }
  out << std::string(63, '-') << '\n';
  out << row("V (excl.)", predicate);
  return out.str();
}

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json per_label = nlohmann::json::object();
  for (const auto& [role, c] : labels) per_label[role] = counts_json(c);
  nlohmann::json j = {{"arguments", counts_json(arguments)},
                      {"predicate", counts_json(predicate)},
                      {"labels", per_label},
                      {"structures", structures},
                      {"comparable_structures", comparable_structures},
                      {"oracle_min_f1", oracle.min_f1},
                      {"oracle_max_f1", oracle.max_f1}};
  if (same_length_rate) j["same_length_rate"] = *same_length_rate;
  if (balanced_bracket_rate) j["balanced_bracket_rate"] = *balanced_bracket_rate;
  return j;
}

}  // namespace seqsrl
