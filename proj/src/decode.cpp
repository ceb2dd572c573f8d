#include "seqsrl/decode.hpp"

#include <algorithm>
#include <map>

#include "seqsrl/errors.hpp"

namespace seqsrl {

std::size_t default_max_decode_len(std::size_t source_length) { return 2 * source_length + 10; }

std::vector<std::string> restore_source(const Instance& instance) {
  std::vector<std::string> source = instance.source;
  for (const UnkEntry& e : instance.unk_map) {
    if (e.position >= source.size()) throw IndexError("unk_map position past the end of the source");
    source[e.position] = e.word;
  }
  return source;
}

std::vector<std::string> recover_rare_words(const DecodeResult& result, std::span<const UnkEntry> unk_map) {
  std::vector<std::string> out = result.tokens;
  if (unk_map.empty()) return out;
  for (std::size_t i = 0; i < out.size() && i < result.trace.size(); ++i) {
    const StepTrace& step = result.trace[i];
    if (out[i] != kUnkToken || step.mode != DecodeMode::Copy || !step.position) continue;
    for (const UnkEntry& e : unk_map) {
      if (e.position == *step.position) {
        out[i] = e.word;
        break;
      }
    }
  }
  return out;
}

namespace {

StepTrace choose(const MixedDistribution& dist) {
  static constexpr std::size_t kMasked[] = {Vocabulary::kPred};
  StepTrace step;
  step.token = argmax_token(dist, kMasked);
  const double gen = step.token < dist.generate.size() ? dist.generate[step.token] : 0.0;
  if (dist.copy_mass(step.token) > gen) {
    step.mode = DecodeMode::Copy;
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < dist.copy.size(); ++j) {
      if (dist.source[j] == step.token && (!best || dist.copy[j] > dist.copy[*best])) best = j;
    }
    step.position = best;
  }
  return step;
}

void finish(DecodeResult& result, const Instance& instance, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < result.tokens.size(); ++i) result.tokens[i] = vocab.token(result.trace[i].token);
  result.target = recover_rare_words(result, instance.unk_map);
  const auto source = restore_source(instance);
  result.structure = delinearize(result.target, source);
}

}  // namespace

std::vector<DecodeResult> greedy_decode(Seq2SeqModel& model, const Vocabulary& vocab,
                                        std::span<const Instance> instances, std::optional<std::size_t> max_len,
                                        std::size_t chunk) {
  if (chunk == 0) throw ContractError("greedy_decode: chunk must be positive");
  if (model.config().word_vocab != vocab.word_count() || model.config().label_vocab != vocab.label_count()) {
    throw ContractError("greedy_decode: model and vocabulary sizes differ");
  }
  std::vector<DecodeResult> results(instances.size());
  const std::size_t width = model.config().output_size();
  for (std::size_t begin = 0; begin < instances.size(); begin += chunk) {
    const std::size_t n = std::min(chunk, instances.size() - begin);
    std::vector<std::vector<std::size_t>> sources(n);
    std::vector<std::size_t> limit(n);
    std::size_t longest = 0;
    for (std::size_t b = 0; b < n; ++b) {
      for (const std::string& tok : instances[begin + b].source) sources[b].push_back(vocab.word_id(tok));
      limit[b] = max_len ? *max_len : default_max_decode_len(sources[b].size());
      longest = std::max(longest, limit[b]);
    }
    Tape tape;
    MemoryBatch memory = model.encode(tape, sources);
    BatchState state = model.initial_state(tape, memory);
    std::vector<bool> done(n, false);
    std::size_t remaining = n;
    for (std::size_t b = 0; b < n; ++b) {
      if (limit[b] == 0) {
        done[b] = true;
        --remaining;
      }
    }
    for (std::size_t t = 0; t < longest && remaining > 0; ++t) {
      BatchStep step = model.decode_step(tape, state, memory);
      state = step.next;
      const auto gen = step.generate_scores.value().data();
      for (std::size_t b = 0; b < n; ++b) {
        if (done[b]) {
          state.previous[b] = Vocabulary::kEos;
          continue;
        }
        std::span<const double> copy;
        if (model.config().copy) {
          copy = step.copy_scores.value().data().subspan(b * memory.source.size() + memory.offsets[b],
                                                         memory.lengths[b]);
        }
        const StepTrace choice = choose(mixed_softmax(gen.subspan(b * width, width), copy, sources[b]));
        DecodeResult& r = results[begin + b];
        r.trace.push_back(choice);
        state.previous[b] = choice.token;
        if (choice.token == Vocabulary::kEos) {
          r.reached_eos = true;
        } else {
          r.tokens.emplace_back();
        }
        if (r.reached_eos || r.tokens.size() >= limit[b]) {
          done[b] = true;
          --remaining;
        }
      }
    }
    for (std::size_t b = 0; b < n; ++b) finish(results[begin + b], instances[begin + b], vocab);
  }
  return results;
}

DecodeResult greedy_decode(Seq2SeqModel& model, const Vocabulary& vocab, const Instance& instance,
                           std::optional<std::size_t> max_len) {
  return std::move(greedy_decode(model, vocab, std::span<const Instance>(&instance, 1), max_len, 1)[0]);
}

ConllOutput to_conll(std::span<const Delinearized> results, std::span<const InstanceOrigin> origins,
                     std::span<const AnnotatedSentence> reference) {
  if (results.size() != origins.size()) {
    throw ContractError("to_conll: " + std::to_string(results.size()) + " results for " +
                        std::to_string(origins.size()) + " origins");
  }
  ConllOutput out;
  std::vector<std::vector<const Delinearized*>> slot(reference.size());
  for (std::size_t s = 0; s < reference.size(); ++s) slot[s].assign(reference[s].predicates.size(), nullptr);
  for (std::size_t i = 0; i < origins.size(); ++i) {
    const InstanceOrigin& o = origins[i];
    if (o.sentence >= reference.size() || o.predicate >= slot[o.sentence].size()) {
      throw ContractError("to_conll: origin (" + std::to_string(o.sentence) + ", " + std::to_string(o.predicate) +
                          ") does not exist in the reference corpus");
    }
    if (slot[o.sentence][o.predicate]) {
      throw ContractError("to_conll: duplicate result for sentence " + std::to_string(o.sentence) + " predicate " +
                          std::to_string(o.predicate));
    }
    slot[o.sentence][o.predicate] = &results[i];
  }
  for (std::size_t s = 0; s < reference.size(); ++s) {
    AnnotatedSentence sentence;
    sentence.tokens = reference[s].tokens;
    std::vector<bool> flags;
    for (std::size_t p = 0; p < reference[s].predicates.size(); ++p) {
      const Delinearized* r = slot[s][p];
      if (!r) {
        throw ContractError("to_conll: no result for sentence " + std::to_string(s) + " predicate " +
                            std::to_string(p));
      }
      PredicateStructure pred;
      pred.predicate_index = reference[s].predicates[p].predicate_index;
      pred.lemma = reference[s].predicates[p].lemma;
      flags.push_back(r->comparable);
      if (r->comparable) {
        std::vector<LabeledSpan> spans = r->spans;
        std::sort(spans.begin(), spans.end());
        for (const LabeledSpan& span : spans) {
          const bool clash = std::any_of(pred.spans.begin(), pred.spans.end(), [&](const LabeledSpan& kept) {
            return span.start <= kept.end && kept.start <= span.end;
          });
          if (clash || span.end >= sentence.tokens.size()) {
            ++out.dropped_overlaps;
            continue;
          }
          pred.spans.push_back(span);
        }
      }
      sentence.predicates.push_back(std::move(pred));
    }
    out.sentences.push_back(std::move(sentence));
    out.comparable.push_back(std::move(flags));
  }
  return out;
}

nlohmann::json trace_json(const DecodeResult& result, const Vocabulary& vocab) {
  nlohmann::json steps = nlohmann::json::array();
  for (const StepTrace& s : result.trace) {
    nlohmann::json j = {{"token", vocab.token(s.token)}, {"mode", s.mode == DecodeMode::Copy ? "copy" : "generate"}};
    if (s.position) j["position"] = *s.position;
    steps.push_back(j);
  }
  return {{"steps", steps},
          {"reached_eos", result.reached_eos},
          {"comparable", result.comparable()},
          {"unmatched_opens", result.structure.unmatched_opens},
          {"unmatched_closes", result.structure.unmatched_closes},
          {"empty_spans", result.structure.empty_spans}};
}

}  // namespace seqsrl
