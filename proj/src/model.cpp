#include "seqsrl/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "seqsrl/errors.hpp"
#include "seqsrl/fileutil.hpp"

namespace seqsrl {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0 || encoder_layers == 0) {
    throw ConfigError("model dimensions and encoder_layers must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (word_vocab < 4) throw ConfigError("word vocabulary must hold at least the 4 special tokens");
  if (label_vocab < 1) throw ConfigError("label vocabulary must hold at least the opening bracket");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},
          {"encoder_layers", encoder_layers},
          {"dropout", dropout},
          {"word_vocab", word_vocab},
          {"label_vocab", label_vocab},
          {"copy", copy},
          {"attention_query", attention_query == AttentionQuery::Previous ? "previous" : "current"}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.dropout = j.value("dropout", c.dropout);
    c.word_vocab = j.value("word_vocab", c.word_vocab);
    c.label_vocab = j.value("label_vocab", c.label_vocab);
    c.copy = j.value("copy", c.copy);
    const std::string query = j.value("attention_query", std::string("previous"));
    if (query == "previous") {
      c.attention_query = AttentionQuery::Previous;
    } else if (query == "current") {
      c.attention_query = AttentionQuery::Current;
    } else {
      throw ConfigError("attention_query must be 'previous' or 'current', got '" + query + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model configuration: ") + e.what());
  }
  return c;
}

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab) {
  EncodedInstance out;
  out.source.reserve(instance.source.size());
  for (const std::string& tok : instance.source) out.source.push_back(vocab.word_id(tok));
  out.target.reserve(instance.target.size() + 1);
  for (const std::string& tok : instance.target) {
    auto id = vocab.id(tok);
    out.target.push_back(id ? *id : Vocabulary::kUnk);
  }
  out.target.push_back(Vocabulary::kEos);
  return out;
}

// ---------------------------------------------------------------------------
// Mixed distribution

double MixedDistribution::copy_mass(std::size_t id) const {
  double mass = 0.0;
  for (std::size_t j = 0; j < copy.size(); ++j) {
    if (source[j] == id) mass += copy[j];
  }
  return mass;
}

double MixedDistribution::token_probability(std::size_t id) const {
  const double gen = id < generate.size() ? generate[id] : 0.0;
  return gen + copy_mass(id);
}

double MixedDistribution::total_mass() const {
  double total = 0.0;
  for (double p : generate) total += p;
  for (double p : copy) total += p;
  return total;
}

MixedDistribution mixed_softmax(std::span<const double> gen_scores, std::span<const double> copy_scores,
                                std::span<const std::size_t> source) {
  if (!copy_scores.empty() && copy_scores.size() != source.size()) {
    throw DimensionError("mixed_softmax: " + std::to_string(copy_scores.size()) + " copy scores for " +
                         std::to_string(source.size()) + " source positions");
  }
  if (gen_scores.empty()) throw DimensionError("mixed_softmax: no generation scores");
  double m = -std::numeric_limits<double>::infinity();
  for (double s : gen_scores) m = std::max(m, s);
  for (double s : copy_scores) m = std::max(m, s);
  double z = 0.0;
  for (double s : gen_scores) z += std::exp(s - m);
  for (double s : copy_scores) z += std::exp(s - m);
  MixedDistribution d;
  d.log_normalizer = m + std::log(z);
  d.generate.reserve(gen_scores.size());
  for (double s : gen_scores) d.generate.push_back(std::exp(s - d.log_normalizer));
  d.copy.reserve(copy_scores.size());
  for (double s : copy_scores) d.copy.push_back(std::exp(s - d.log_normalizer));
  if (!copy_scores.empty()) d.source.assign(source.begin(), source.end());
  return d;
}

std::size_t argmax_token(const MixedDistribution& dist, std::span<const std::size_t> masked) {
  std::vector<double> mass = dist.generate;
  for (std::size_t j = 0; j < dist.copy.size(); ++j) {
    const std::size_t id = dist.source[j];
    if (id >= mass.size()) mass.resize(id + 1, 0.0);
    mass[id] += dist.copy[j];
  }
  for (std::size_t id : masked) {
    if (id < mass.size()) mass[id] = -1.0;
  }
  std::size_t best = 0;
  for (std::size_t id = 1; id < mass.size(); ++id) {
    if (mass[id] > mass[best]) best = id;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Network

Seq2SeqModel::Seq2SeqModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t e = config_.embed_dim, d = config_.hidden_dim, m = config_.memory_dim();
  add_param("embedding", {config_.output_size(), e}, rng);
  for (std::size_t layer = 0; layer < config_.encoder_layers; ++layer) {
    const std::size_t in = layer == 0 ? e : m;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string prefix = "encoder.l" + std::to_string(layer) + "." + dir + ".";
      add_param(prefix + "w_in", {in, 4 * d}, rng);
      add_param(prefix + "w_rec", {d, 4 * d}, rng);
      add_param(prefix + "bias", {1, 4 * d}, rng);
    }
  }
  add_param("bridge.w", {m, d}, rng);
  add_param("bridge.bias", {1, d}, rng);
  add_param("decoder.w_in", {e + m, 4 * d}, rng);
  add_param("decoder.w_rec", {d, 4 * d}, rng);
  add_param("decoder.bias", {1, 4 * d}, rng);
  add_param("attention.w", {d, m}, rng);
  add_param("output.w", {config_.output_size(), d + m}, rng);
  if (config_.copy) add_param("copy.w", {m, d}, rng);

  // Zero biases, forget gates opened.
  for (auto& [name, t] : params_) {
    if (name.ends_with("bias")) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
      if (t.cols() == 4 * d) std::fill(t.data().begin() + d, t.data().begin() + 2 * d, 1.0);
    }
  }
}

Tensor& Seq2SeqModel::add_param(const std::string& name, std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
  t.set_requires_grad(true);
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor& Seq2SeqModel::parameter(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("no parameter named " + name);
  return it->second;
}

const Tensor& Seq2SeqModel::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw IndexError("no parameter named " + name);
  return it->second;
}

std::vector<Tensor*> Seq2SeqModel::trainable() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params_) {
    if (t.requires_grad()) out.push_back(&t);
  }
  return out;
}

std::size_t Seq2SeqModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void Seq2SeqModel::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

MemoryBatch Seq2SeqModel::encode(Tape& tape, std::span<const std::vector<std::size_t>> sources, Rng* dropout_rng) {
  if (sources.empty()) throw ContractError("encode: empty batch");
  MemoryBatch memory;
  for (const auto& src : sources) {
    if (src.empty()) throw ContractError("encode: empty source sequence");
    for (std::size_t id : src) {
      if (id >= config_.word_vocab) throw IndexError("encode: source id " + std::to_string(id) + " is not a word id");
    }
    memory.offsets.push_back(memory.source.size());
    memory.lengths.push_back(src.size());
    memory.source.insert(memory.source.end(), src.begin(), src.end());
  }
  Var x = tape.gather_rows(tape.param(parameter("embedding")), memory.source);
  if (dropout_rng) x = tape.dropout(x, config_.dropout, *dropout_rng);
  for (std::size_t layer = 0; layer < config_.encoder_layers; ++layer) {
    const std::string prefix = "encoder.l" + std::to_string(layer) + ".";
    Var fwd = tape.lstm_sequence(x, tape.param(parameter(prefix + "fwd.w_in")),
                                 tape.param(parameter(prefix + "fwd.w_rec")),
                                 tape.param(parameter(prefix + "fwd.bias")), false, memory.lengths);
    Var bwd = tape.lstm_sequence(x, tape.param(parameter(prefix + "bwd.w_in")),
                                 tape.param(parameter(prefix + "bwd.w_rec")),
                                 tape.param(parameter(prefix + "bwd.bias")), true, memory.lengths);
    Var both[] = {fwd, bwd};
    x = tape.concat_cols(both);
    if (dropout_rng) x = tape.dropout(x, config_.dropout, *dropout_rng);
  }
  memory.states = x;
  if (config_.copy) memory.copy_keys = tape.tanh(tape.matmul(x, tape.param(parameter("copy.w"))));
  if (memory.batch() > 1) {
    Tensor mask({memory.batch(), memory.source.size()}, -std::numeric_limits<double>::infinity());
    for (std::size_t b = 0; b < memory.batch(); ++b) {
      for (std::size_t j = 0; j < memory.lengths[b]; ++j) mask.at(b, memory.offsets[b] + j) = 0.0;
    }
    memory.mask = tape.constant(std::move(mask));
  }
  return memory;
}

BatchState Seq2SeqModel::initial_state(Tape& tape, const MemoryBatch& memory) {
  const std::size_t d = config_.hidden_dim, batch = memory.batch();
  std::vector<std::size_t> last(batch), first(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    first[b] = memory.offsets[b];
    last[b] = memory.offsets[b] + memory.lengths[b] - 1;
  }
  Var ends[] = {tape.slice_cols(tape.gather_rows(memory.states, last), 0, d),
                tape.slice_cols(tape.gather_rows(memory.states, first), d, d)};
  BatchState state;
  state.hidden = tape.tanh(tape.add_row(tape.matmul(tape.concat_cols(ends), tape.param(parameter("bridge.w"))),
                                        tape.param(parameter("bridge.bias"))));
  state.cell = tape.constant(Tensor({batch, d}));
  state.context = tape.constant(Tensor({batch, config_.memory_dim()}));
  state.previous.assign(batch, Vocabulary::kBos);
  return state;
}

AttentionResult Seq2SeqModel::attend(Tape& tape, Var query, const MemoryBatch& memory) {
  AttentionResult r;
  Var projected = tape.matmul(query, tape.param(parameter("attention.w")));
  r.scores = tape.matmul_nt(projected, memory.states);
  r.weights = tape.softmax_rows(memory.mask.valid() ? tape.add(r.scores, memory.mask) : r.scores);
  r.context = tape.matmul(r.weights, memory.states);
  return r;
}

Var Seq2SeqModel::generate_score(Tape& tape, Var state, Var context) {
  Var parts[] = {state, context};
  return tape.matmul_nt(tape.concat_cols(parts), tape.param(parameter("output.w")));
}

Var Seq2SeqModel::copy_score(Tape& tape, const EncoderMemory& memory, Var state) {
  if (!memory.copy_keys.valid()) throw ContractError("copy_score: copying is disabled in this model");
  return tape.matmul_nt(state, memory.copy_keys);
}

Var Seq2SeqModel::copy_segment(Tape& tape, Var copy_scores, const MemoryBatch& memory, std::size_t b) {
  if (memory.batch() == 1) return copy_scores;
  return tape.slice_cols(tape.slice_rows(copy_scores, b, 1), memory.offsets[b], memory.lengths[b]);
}

Var Seq2SeqModel::lstm_cell(Tape& tape, Var input, Var hidden, Var& cell) {
  const std::size_t d = config_.hidden_dim;
  Var gates = tape.add_row(tape.add(tape.matmul(input, tape.param(parameter("decoder.w_in"))),
                                    tape.matmul(hidden, tape.param(parameter("decoder.w_rec")))),
                           tape.param(parameter("decoder.bias")));
  Var in_gate = tape.sigmoid(tape.slice_cols(gates, 0, d));
  Var forget_gate = tape.sigmoid(tape.slice_cols(gates, d, d));
  Var candidate = tape.tanh(tape.slice_cols(gates, 2 * d, d));
  Var out_gate = tape.sigmoid(tape.slice_cols(gates, 3 * d, d));
  cell = tape.add(tape.mul(forget_gate, cell), tape.mul(in_gate, candidate));
  return tape.mul(out_gate, tape.tanh(cell));
}

BatchStep Seq2SeqModel::decode_step(Tape& tape, const BatchState& state, const MemoryBatch& memory,
                                    Rng* dropout_rng) {
  if (state.previous.size() != memory.batch()) throw DimensionError("decode_step: state and memory batch sizes differ");
  for (std::size_t id : state.previous) {
    if (id >= config_.output_size()) throw IndexError("decode_step: previous token out of range");
  }
  Var embedded = tape.gather_rows(tape.param(parameter("embedding")), state.previous);
  if (dropout_rng) embedded = tape.dropout(embedded, config_.dropout, *dropout_rng);

  BatchStep out;
  Var cell = state.cell;
  Var hidden;
  if (config_.attention_query == AttentionQuery::Previous) {
    out.attention = attend(tape, state.hidden, memory);
    Var input[] = {embedded, out.attention.context};
    hidden = lstm_cell(tape, tape.concat_cols(input), state.hidden, cell);
  } else {
    Var input[] = {embedded, state.context};
    hidden = lstm_cell(tape, tape.concat_cols(input), state.hidden, cell);
    out.attention = attend(tape, hidden, memory);
  }
  Var readout = dropout_rng ? tape.dropout(hidden, config_.dropout, *dropout_rng) : hidden;
  out.generate_scores = generate_score(tape, readout, out.attention.context);
  if (config_.copy) out.copy_scores = tape.matmul_nt(readout, memory.copy_keys);
  out.next.hidden = hidden;
  out.next.cell = cell;
  out.next.context = out.attention.context;
  out.next.previous = state.previous;
  return out;
}

namespace {

MemoryBatch as_batch(const EncoderMemory& memory) {
  MemoryBatch b;
  b.states = memory.states;
  b.copy_keys = memory.copy_keys;
  b.source = memory.source;
  b.offsets = {0};
  b.lengths = {memory.length()};
  return b;
}

BatchState as_batch(const DecoderState& state) { return {state.hidden, state.cell, state.context, {state.previous_token}}; }

std::vector<std::size_t> positions_of(std::span<const std::size_t> source, std::size_t id) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < source.size(); ++j) {
    if (source[j] == id) out.push_back(j);
  }
  return out;
}

std::vector<std::vector<std::size_t>> sources_of(std::span<const EncodedInstance* const> batch) {
  std::vector<std::vector<std::size_t>> sources;
  sources.reserve(batch.size());
  for (const EncodedInstance* inst : batch) sources.push_back(inst->source);
  return sources;
}

}  // namespace

EncoderMemory Seq2SeqModel::encode(Tape& tape, std::span<const std::size_t> source, Rng* dropout_rng) {
  const std::vector<std::vector<std::size_t>> one = {{source.begin(), source.end()}};
  MemoryBatch b = encode(tape, std::span<const std::vector<std::size_t>>(one), dropout_rng);
  return {b.states, b.copy_keys, std::move(b.source)};
}

DecoderState Seq2SeqModel::initial_state(Tape& tape, const EncoderMemory& memory) {
  BatchState s = initial_state(tape, as_batch(memory));
  return {s.hidden, s.cell, s.context, s.previous[0]};
}

AttentionResult Seq2SeqModel::attend(Tape& tape, Var query, const EncoderMemory& memory) {
  return attend(tape, query, as_batch(memory));
}

StepOutput Seq2SeqModel::decode_step(Tape& tape, const DecoderState& state, const EncoderMemory& memory,
                                     Rng* dropout_rng) {
  BatchStep step = decode_step(tape, as_batch(state), as_batch(memory), dropout_rng);
  return {step.generate_scores, step.copy_scores, step.attention,
          {step.next.hidden, step.next.cell, step.next.context, state.previous_token}};
}

Var Seq2SeqModel::batch_loss(Tape& tape, std::span<const EncodedInstance* const> batch, Rng* dropout_rng,
                             std::vector<double>* instance_losses) {
  const std::size_t n = batch.size();
  std::size_t longest = 0;
  for (const EncodedInstance* inst : batch) {
    if (inst->target.empty()) throw ContractError("sequence_loss: empty target");
    for (std::size_t id : inst->target) {
      if (id >= config_.output_size()) throw IndexError("sequence_loss: target id out of range");
    }
    longest = std::max(longest, inst->target.size());
  }
  const auto sources = sources_of(batch);
  MemoryBatch memory = encode(tape, sources, dropout_rng);
  BatchState state = initial_state(tape, memory);
  std::vector<std::vector<Var>> nll(n);
  for (std::size_t t = 0; t < longest; ++t) {
    BatchStep step = decode_step(tape, state, memory, dropout_rng);
    state = step.next;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& target = batch[b]->target;
      if (t >= target.size()) {
        state.previous[b] = Vocabulary::kEos;
        continue;
      }
      const std::size_t gold = target[t];
      Var gen = n == 1 ? step.generate_scores : tape.slice_rows(step.generate_scores, b, 1);
      Var copy;
      std::vector<std::size_t> positions;
      if (config_.copy) {
        copy = copy_segment(tape, step.copy_scores, memory, b);
        positions = positions_of(sources[b], gold);
      }
      nll[b].push_back(tape.shared_softmax_nll(gen, copy, gold, positions));
      state.previous[b] = gold;
    }
  }
  std::vector<Var> per_instance;
  per_instance.reserve(n);
  for (auto& steps : nll) per_instance.push_back(tape.mean(steps));
  if (instance_losses) {
    instance_losses->clear();
    for (Var v : per_instance) instance_losses->push_back(v.value().item());
  }
  return n == 1 ? per_instance[0] : tape.mean(per_instance);
}

Var Seq2SeqModel::sequence_loss(Tape& tape, const EncodedInstance& instance, Rng* dropout_rng) {
  const EncodedInstance* one[] = {&instance};
  return batch_loss(tape, one, dropout_rng);
}

std::vector<std::vector<MixedDistribution>> Seq2SeqModel::teacher_forced_distributions(
    std::span<const EncodedInstance* const> batch) {
  Tape tape;
  const std::size_t n = batch.size();
  std::size_t longest = 0;
  for (const EncodedInstance* inst : batch) longest = std::max(longest, inst->target.size());
  const auto sources = sources_of(batch);
  MemoryBatch memory = encode(tape, sources);
  BatchState state = initial_state(tape, memory);
  std::vector<std::vector<MixedDistribution>> out(n);
  const std::size_t width = config_.output_size();
  for (std::size_t t = 0; t < longest; ++t) {
    BatchStep step = decode_step(tape, state, memory);
    state = step.next;
    const auto gen = step.generate_scores.value().data();
    for (std::size_t b = 0; b < n; ++b) {
      const auto& target = batch[b]->target;
      if (t >= target.size()) {
        state.previous[b] = Vocabulary::kEos;
        continue;
      }
      std::span<const double> copy;
      if (config_.copy) {
        copy = step.copy_scores.value().data().subspan(b * memory.source.size() + memory.offsets[b],
                                                       memory.lengths[b]);
      }
      out[b].push_back(mixed_softmax(gen.subspan(b * width, width), copy, sources[b]));
      state.previous[b] = target[t];
    }
  }
  return out;
}

std::vector<MixedDistribution> Seq2SeqModel::teacher_forced_distributions(const EncodedInstance& instance) {
  const EncodedInstance* one[] = {&instance};
  return std::move(teacher_forced_distributions(one)[0]);
}

TokenAccuracy teacher_forced_accuracy(Seq2SeqModel& model, std::span<const EncodedInstance> instances) {
  TokenAccuracy acc;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < instances.size(); begin += kChunk) {
    std::vector<const EncodedInstance*> chunk;
    for (std::size_t i = begin; i < std::min(instances.size(), begin + kChunk); ++i) chunk.push_back(&instances[i]);
    const auto dists = model.teacher_forced_distributions(chunk);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      for (std::size_t t = 0; t < dists[b].size(); ++t) {
        ++acc.total;
        if (argmax_token(dists[b][t]) == chunk[b]->target[t]) ++acc.correct;
      }
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'E', 'Q', 'S', 'R', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return std::string(take(get<std::uint32_t>())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Seq2SeqModel& model, const CheckpointMeta& meta) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta.vocab_hash);
  nlohmann::json header = {{"model", model.config().to_json()}, {"info", meta.info}};
  put_string(out, header.dump());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) put<std::uint64_t>(out, dim);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const CheckpointMeta& meta) {
  write_file_atomic(path, serialize_checkpoint(model, meta));
}

LoadedCheckpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw LoadError("not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.vocab_hash = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
  }
  meta.info = header.value("info", nlohmann::json::object());
  Seq2SeqModel model(ModelConfig::from_json(header.at("model")), 0);
  const auto count = in.get<std::uint32_t>();
  if (count != model.parameters().size()) {
    throw LoadError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(model.parameters().size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.get_string();
    auto it = model.parameters().find(name);
    if (it == model.parameters().end()) throw LoadError("unexpected tensor " + name + " in checkpoint");
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    if (shape != it->second.shape()) {
      throw LoadError("tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                      it->second.shape_string());
    }
    auto raw = in.take(it->second.size() * sizeof(double));
    std::memcpy(it->second.data().data(), raw.data(), raw.size());
  }
  if (!in.done()) throw LoadError("trailing bytes after checkpoint tensors");
  return LoadedCheckpoint{std::move(model), std::move(meta)};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab) {
  if (!std::filesystem::exists(path)) throw LoadError("checkpoint " + path.string() + " does not exist (run train first)");
  LoadedCheckpoint ckpt = parse_checkpoint(read_file(path));
  if (ckpt.meta.vocab_hash != vocab.hash()) {
    throw LoadError("checkpoint " + path.string() + " was trained with vocabulary " + hex64(ckpt.meta.vocab_hash) +
                    " but the supplied vocabulary is " + hex64(vocab.hash()));
  }
  const auto& cfg = ckpt.model.config();
  if (cfg.word_vocab != vocab.word_count() || cfg.label_vocab != vocab.label_count()) {
    throw LoadError("checkpoint vocabulary sizes do not match the supplied vocabulary");
  }
  return ckpt;
}

}  // namespace seqsrl
