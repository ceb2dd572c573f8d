#include "seqsrl/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "seqsrl/corpus_io.hpp"
#include "seqsrl/decode.hpp"
#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"

namespace fs = std::filesystem;

namespace seqsrl {

namespace {

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::is_regular_file(path)) throw LoadError(path.string() + " not found (" + hint + ")");
}

// Identifies an input by name and content rather than by location, so
// reruns from different directories report the same thing.
nlohmann::json file_identity(const fs::path& path) {
  return {{"name", path.filename().string()}, {"fnv1a", hex64(fnv1a(read_file(path)))}};
}

std::string lines_text(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) j = RunConfig::load(*file).to_json();
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + o + "' is not of the form section.key=value");
    }
    const std::string section = o.substr(0, dot), key = o.substr(dot + 1, eq - dot - 1), text = o.substr(eq + 1);
    if (section != "model" && section != "train") throw ConfigError("override section must be model or train: " + o);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    j[section][key] = value;
  }
  return RunConfig::from_json(j);
}

void save_instances(const fs::path& dir, std::span<const Instance> instances) {
  std::vector<std::string> source, target, origin, unk;
  for (const Instance& i : instances) {
    source.push_back(join_tokens(i.source));
    target.push_back(join_tokens(i.target));
    origin.push_back(std::to_string(i.origin.sentence) + " " + std::to_string(i.origin.predicate));
    std::string u;
    for (const UnkEntry& e : i.unk_map) u += (u.empty() ? "" : " ") + std::to_string(e.position) + " " + e.word;
    unk.push_back(u);
  }
  write_file_atomic(dir / "source.txt", lines_text(source));
  write_file_atomic(dir / "target.txt", lines_text(target));
  write_file_atomic(dir / "origin.txt", lines_text(origin));
  write_file_atomic(dir / "unk_map.txt", lines_text(unk));
}

std::vector<Instance> load_instances(const fs::path& dir) {
  for (const char* name : {"source.txt", "target.txt", "origin.txt", "unk_map.txt"}) {
    require_file(dir / name, "run preprocess first");
  }
  const auto source = read_lines(dir / "source.txt"), target = read_lines(dir / "target.txt"),
             origin = read_lines(dir / "origin.txt"), unk = read_lines(dir / "unk_map.txt");
  if (target.size() != source.size() || origin.size() != source.size() || unk.size() != source.size()) {
    throw LoadError("instance files in " + dir.string() + " have different line counts");
  }
  std::vector<Instance> out(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    out[i].source = split_tokens(source[i]);
    out[i].target = split_tokens(target[i]);
    const auto o = split_tokens(origin[i]);
    const auto u = split_tokens(unk[i]);
    try {
      if (o.size() != 2 || u.size() % 2) throw std::invalid_argument("shape");
      out[i].origin = {std::stoul(o[0]), std::stoul(o[1])};
      for (std::size_t k = 0; k < u.size(); k += 2) out[i].unk_map.push_back({std::stoul(u[k]), u[k + 1]});
    } catch (const std::exception&) {
      throw ParseError(i + 1, (dir / "origin.txt").string() + " or unk_map.txt: malformed line");
    }
  }
  return out;
}

PreprocessSummary run_preprocess(const PreprocessArgs& args) {
  args.config.train.validate();
  const auto sentences = read_props_file(args.input);
  const auto instances = linearize_corpus(sentences);

  Vocabulary vocab;
  if (args.vocab) {
    vocab = Vocabulary::load(*args.vocab);
  } else {
    std::optional<std::unordered_set<std::string>> covered;
    if (args.glove) covered = embedding_file_words(*args.glove);
    vocab = build_vocab(instances, args.config.train.unk_threshold, covered ? &*covered : nullptr).vocab;
  }

  PreprocessSummary s;
  s.sentences = sentences.size();
  s.instances = instances.size();
  s.words = vocab.word_count();
  s.labels = vocab.label_count();
  std::vector<Instance> unked;
  for (const Instance& i : instances) {
    unked.push_back(apply_unk(i, vocab));
    s.unk_tokens += unked.back().unk_map.size();
  }
  s.over_length = filter_by_length(instances, args.config.train.max_seq_len).dropped;

  fs::create_directories(args.output);
  save_instances(args.output, unked);
  vocab.save(args.output);
  write_file_atomic(args.output / "gold.props", write_props(sentences));
  nlohmann::json report = {{"input", file_identity(args.input)},
                           {"config", args.config.to_json()},
                           {"sentences", s.sentences},
                           {"instances", s.instances},
                           {"over_max_seq_len", s.over_length},
                           {"unk_tokens", s.unk_tokens},
                           {"words", s.words},
                           {"labels", s.labels},
                           {"vocab_hash", hex64(vocab.hash())}};
  if (args.vocab) report["vocab_from"] = file_identity(*args.vocab / "vocab.txt");
  if (args.glove) report["glove"] = file_identity(*args.glove);
  write_file_atomic(args.output / "preprocess.json", dump(report));
  return s;
}

TrainSummary run_train(const TrainArgs& args) {
  const Vocabulary vocab = Vocabulary::load(args.input);
  const auto instances = load_instances(args.input);
  RunConfig config = args.config;
  config.model.word_vocab = vocab.word_count();
  config.model.label_vocab = vocab.label_count();
  config.model.validate();
  config.train.validate();

  TrainSummary s;
  const LengthFilter kept = filter_by_length(instances, config.train.max_seq_len);
  s.dropped = kept.dropped;
  std::vector<EncodedInstance> data;
  for (std::size_t i : kept.kept) data.push_back(encode_instance(instances[i], vocab));
  s.instances = data.size();

  Seq2SeqModel model(config.model, config.train.seed);
  if (args.glove) s.coverage = load_glove(*args.glove, vocab, model.parameter("embedding"));
  if (args.log) {
    *args.log << "training on " << data.size() << " instances (" << s.dropped << " over max_seq_len dropped), "
              << model.parameter_count() << " parameters\n";
    if (s.coverage) *args.log << "embedding coverage " << s.coverage->covered << "/" << s.coverage->total << "\n";
  }

  fs::create_directories(args.output);
  vocab.save(args.output);
  s.checkpoint = args.output / "checkpoint.bin";
  TrainOptions options;
  options.checkpoint = s.checkpoint;
  options.meta.vocab_hash = vocab.hash();
  options.meta.info = {{"seed", config.train.seed}, {"dropped", s.dropped}, {"data", file_identity(args.input / "source.txt")}};
  if (args.glove) options.meta.info["glove"] = file_identity(*args.glove);
  options.on_epoch = [&](const EpochStats& e) {
    if (!args.log) return;
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %zu  loss %.6f  updates %zu  %.1fs\n", e.epoch, e.mean_loss, e.updates,
                  e.seconds);
    *args.log << buf << std::flush;
  };
  s.result = train(model, data, config.train, options);

  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochStats& e : s.result.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"updates", e.updates}});
  }
  nlohmann::json report = {{"config", config.to_json()},
                           {"data", options.meta.info["data"]},
                           {"instances", s.instances},
                           {"dropped", s.dropped},
                           {"parameters", model.parameter_count()},
                           {"epochs", epochs}};
  if (s.coverage) report["embedding_coverage"] = {{"covered", s.coverage->covered}, {"total", s.coverage->total}};
  write_file_atomic(args.output / "train.json", dump(report));
  return s;
}

DecodeSummary run_decode(const DecodeArgs& args) {
  require_file(args.checkpoint, "train a model first");
  const Vocabulary vocab = Vocabulary::load(args.input);
  LoadedCheckpoint ck = load_checkpoint(args.checkpoint, vocab);
  const auto instances = load_instances(args.input);
  require_file(args.input / "gold.props", "run preprocess first");
  const auto reference = read_props_file(args.input / "gold.props");

  const auto results = greedy_decode(ck.model, vocab, instances, args.max_len);
  DecodeSummary s;
  s.instances = results.size();
  std::vector<Delinearized> structures;
  std::vector<InstanceOrigin> origins;
  std::vector<std::string> predictions;
  std::string traces;
  for (std::size_t i = 0; i < results.size(); ++i) {
    structures.push_back(results[i].structure);
    origins.push_back(instances[i].origin);
    predictions.push_back(join_tokens(results[i].target));
    traces += trace_json(results[i], vocab).dump() + "\n";
    s.reached_eos += results[i].reached_eos;
  }
  s.reproduction = reproduction_stats(structures);
  const ConllOutput conll = to_conll(structures, origins, reference);
  s.dropped_overlaps = conll.dropped_overlaps;

  std::vector<std::string> flags;
  for (const auto& row : conll.comparable) {
    std::string line;
    for (bool b : row) line += (line.empty() ? "" : " ") + std::string(b ? "1" : "0");
    flags.push_back(line);
  }
  fs::create_directories(args.output);
  write_file_atomic(args.output / "predictions.txt", lines_text(predictions));
  write_file_atomic(args.output / "trace.jsonl", traces);
  write_file_atomic(args.output / "predicted.props", write_props(conll.sentences, Strictness::Predicted));
  write_file_atomic(args.output / "comparable.txt", lines_text(flags));
  nlohmann::json report = {{"checkpoint", file_identity(args.checkpoint)},
                           {"checkpoint_info", ck.meta.info},
                           {"model", ck.model.config().to_json()},
                           {"data", file_identity(args.input / "source.txt")},
                           {"max_len", args.max_len ? nlohmann::json(*args.max_len) : nlohmann::json("2*T_x+10")},
                           {"instances", s.instances},
                           {"same_length", s.reproduction.same_length},
                           {"balanced", s.reproduction.balanced},
                           {"same_length_rate", s.reproduction.same_length_rate()},
                           {"balanced_bracket_rate", s.reproduction.balanced_bracket_rate()},
                           {"reached_eos", s.reached_eos},
                           {"dropped_overlaps", s.dropped_overlaps}};
  write_file_atomic(args.output / "decode.json", dump(report));
  if (args.log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "decoded %zu instances: same length %.2f%%, balanced brackets %.2f%%\n",
                  s.instances, s.reproduction.same_length_rate(), s.reproduction.balanced_bracket_rate());
    *args.log << buf;
  }
  return s;
}

PredictionSet load_predictions(const fs::path& input) {
  PredictionSet p;
  if (!fs::is_directory(input)) {
    require_file(input, "expected a decode directory or a .props file");
    p.sentences = read_props_file(input, Strictness::Predicted);
    p.provenance = {{"predictions", file_identity(input)}};
    return p;
  }
  for (const char* name : {"predicted.props", "comparable.txt", "decode.json"}) {
    require_file(input / name, "run decode first");
  }
  p.sentences = read_props_file(input / "predicted.props", Strictness::Predicted);
  const auto lines = read_lines(input / "comparable.txt");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<bool> row;
    for (const auto& t : split_tokens(lines[i])) {
      if (t != "0" && t != "1") throw ParseError(i + 1, (input / "comparable.txt").string() + ": expected 0 or 1");
      row.push_back(t == "1");
    }
    p.comparable.push_back(row);
  }
  nlohmann::json report;
  try {
    report = nlohmann::json::parse(read_file(input / "decode.json"));
    ReproductionStats r;
    r.instances = report.at("instances");
    r.same_length = report.at("same_length");
    r.balanced = report.at("balanced");
    p.reproduction = r;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError((input / "decode.json").string() + ": " + e.what());
  }
  p.provenance = {{"predictions", file_identity(input / "predicted.props")},
                  {"checkpoint", report.value("checkpoint", nlohmann::json())},
                  {"checkpoint_info", report.value("checkpoint_info", nlohmann::json())}};
  return p;
}

ScoreReport run_score(const EvalArgs& args) {
  const PredictionSet p = load_predictions(args.input);
  const auto gold = read_props_file(args.gold);
  ScoreReport r = score(p.sentences, gold, p.comparable);
  if (p.reproduction) {
    r.same_length_rate = p.reproduction->same_length_rate();
    r.balanced_bracket_rate = p.reproduction->balanced_bracket_rate();
  }
  if (args.output) {
    fs::create_directories(*args.output);
    nlohmann::json j = r.to_json();
    j["provenance"] = p.provenance;
    j["provenance"]["gold"] = file_identity(args.gold);
    write_file_atomic(*args.output / "score.txt", r.table());
    write_file_atomic(*args.output / "score.json", dump(j));
  }
  return r;
}

AnalysisReport run_analyze(const EvalArgs& args) {
  if (!args.output) throw ConfigError("analyze needs an output directory");
  const PredictionSet p = load_predictions(args.input);
  const auto gold = read_props_file(args.gold);
  AnalysisReport r = analyze(p.sentences, gold, p.comparable);
  nlohmann::json prov = p.provenance;
  prov["gold"] = file_identity(args.gold);
  std::ostringstream text;
  for (const auto& [key, value] : prov.items()) text << key << ": " << value.dump() << "\n";
  write_analysis(r, *args.output, text.str());
  return r;
}

}  // namespace seqsrl
