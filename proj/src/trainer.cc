#include "qvad/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>

#include "qvad/error.h"
#include "qvad/optim.h"

namespace qvad {

namespace {

std::vector<TypedWord> typed(const std::vector<WordId>& ids, NodeType type) {
  std::vector<TypedWord> out;
  out.reserve(ids.size());
  for (WordId id : ids) out.push_back({id, type});
  return out;
}

std::vector<WordId> candidate_ids(const std::vector<Candidate>& cands) {
  std::vector<WordId> ids;
  ids.reserve(cands.size());
  for (const auto& c : cands) ids.push_back(c.id);
  return ids;
}

std::vector<std::string> words_of(const std::vector<WordId>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (WordId id : ids) out.push_back(vocab.word(id));
  return out;
}

// Distinct seeds per stage so that a resumed stage draws the same numbers as
// it would in an uninterrupted run.
std::uint64_t stage_seed(std::uint64_t seed, int stage) {
  return seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(stage);
}

AdamConfig adam_config(const RunConfig& c, double lr) {
  return {lr, c.adam_beta1, c.adam_beta2, c.adam_epsilon};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order,
                                              std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
  }
  return out;
}

}  // namespace

SubGraph prepare_train_input(const Record& record, const Vocab& vocab, const Akwg& graph) {
  return build_subgraph(typed(encode_words(record.keywords, vocab), NodeType::kKeyword), graph);
}

SubGraph prepare_infer_input(const Record& record, const Vocab& vocab, const Akwg& graph,
                             const StopWords& stopwords) {
  auto words = typed(encode_words(record.keywords, vocab), NodeType::kKeyword);
  for (WordId id : encode_words(remove_stopwords(record.query, stopwords), vocab)) {
    words.push_back({id, NodeType::kQuery});
  }
  if (words.empty()) throw DataError("inference input has no keywords or query words");
  return build_subgraph(words, graph);
}

const char* policy_name(SelectionPolicy policy) {
  switch (policy) {
    case SelectionPolicy::kRandom: return "random";
    case SelectionPolicy::kTopPmi: return "pmi";
    case SelectionPolicy::kNoFilter: return "no-filter";
    case SelectionPolicy::kLearned: return "learned";
  }
  return "?";
}

SelectionPolicy parse_policy(const std::string& name) {
  for (auto p : {SelectionPolicy::kRandom, SelectionPolicy::kTopPmi, SelectionPolicy::kNoFilter,
                 SelectionPolicy::kLearned}) {
    if (name == policy_name(p)) return p;
  }
  throw UsageError("unknown selection policy '" + name +
                   "' (expected random, pmi, no-filter or learned)");
}

std::vector<WordId> choose_candidates(SelectionPolicy policy, const Model& model,
                                      const SubGraph& sub, const Akwg& graph, std::size_t phi,
                                      Rng& rng) {
  const auto cands = one_hop_candidates(sub, graph);
  auto ids = candidate_ids(cands);
  switch (policy) {
    case SelectionPolicy::kNoFilter:
      return ids;
    case SelectionPolicy::kRandom: {
      const std::size_t k = std::min(phi, ids.size());
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick_index(i, ids.size() - 1);
        std::swap(ids[i], ids[pick_index(rng)]);
      }
      ids.resize(k);
      return ids;
    }
    case SelectionPolicy::kTopPmi: {
      std::vector<double> w;
      w.reserve(cands.size());
      for (const auto& c : cands) w.push_back(c.max_weight());
      return select_top_phi(w, ids, phi);
    }
    case SelectionPolicy::kLearned: {
      if (ids.empty() || phi == 0) return {};
      Tape tape(false);
      const auto enc = model.association().encode(tape, sub);
      const Var scores = model.association().score(enc.global, ids);
      return select_top_phi(scores.value().values(), ids, phi);
    }
  }
  return {};
}

std::string epoch_log_header() { return "stage,epoch,loss,mean_reward,seconds"; }

std::string epoch_log_line(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%zu,%.9g,%.9g,%.3f", log.stage, log.epoch, log.loss,
                log.mean_reward, log.seconds);
  return buf;
}

Trainer::Trainer(Model& model, const TrainingData& data, const RunConfig& config)
    : model_(model), data_(data), config_(config) {
  if (data.vocab == nullptr || data.graph == nullptr) {
    throw UsageError("trainer needs a vocabulary and a graph");
  }
  if (data.records.empty()) throw DataError("trainer: no training records");
  if (config.batch_size == 0) throw UsageError("batch_size must be positive");
  for (const Record& r : data.records) {
    targets_.push_back(encode(r, *data.vocab).target);
    train_graphs_.push_back(prepare_train_input(r, *data.vocab, *data.graph));
  }
}

std::vector<std::size_t> Trainer::epoch_order(Rng& rng) const {
  std::vector<std::size_t> order(data_.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void Trainer::notify(int stage, std::size_t record, const SubGraph& base,
                     const SubGraph& ext) const {
  if (observer_) observer_({SubGraphEvent::Phase::kTrain, stage, record, &base, &ext});
}

void Trainer::emit(const EpochLog& log, std::vector<EpochLog>& logs) const {
  logs.push_back(log);
  if (on_epoch_) on_epoch_(log);
}

double Trainer::supervised_example(std::size_t index, const SubGraph& extended, double weight,
                                   int stage, std::size_t epoch) {
  Tape tape;
  const auto& gen = model_.generation();
  const EncodedGraph enc = gen.encode_graph(tape, extended);
  const DecodeOutput out = gen.decode_train(enc, targets_[index]);
  const double loss = out.loss.value()[0];
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss in stage " + std::to_string(stage) + ", epoch " +
                       std::to_string(epoch) + ", record " + std::to_string(index));
  }
  tape.backward(scale(out.loss, weight));
  return loss;
}

std::vector<EpochLog> Trainer::stage1() {
  ParamStore& store = model_.params();
  store.set_trainable("assoc.", false);
  Adam adam(store.with_prefix("gen."), adam_config(config_, config_.learning_rate));
  Rng rng(stage_seed(config_.seed, 1));
  std::vector<EpochLog> logs;
  for (std::size_t epoch = 1; epoch <= config_.stage1_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double total = 0.0;
    for (const auto& batch : batches(epoch_order(rng), config_.batch_size)) {
      for (std::size_t i : batch) {
        const SubGraph& base = train_graphs_[i];
        // Candidates are redrawn every epoch.
        const auto chosen =
            choose_candidates(SelectionPolicy::kRandom, model_, base, *data_.graph, config_.phi, rng);
        const SubGraph ext = extend_subgraph(base, chosen, *data_.graph);
        notify(1, i, base, ext);
        total += supervised_example(i, ext, 1.0 / static_cast<double>(batch.size()), 1, epoch);
      }
      adam.step();
    }
    emit({1, epoch, total / static_cast<double>(data_.records.size()), 0.0, seconds_since(start)},
         logs);
  }
  store.set_trainable("assoc.", true);
  model_.round_to_float();
  return logs;
}

std::vector<EpochLog> Trainer::stage2() {
  ParamStore& store = model_.params();
  model_.copy_embeddings_to_association();
  store.set_trainable("gen.", false);
  Adam adam(store.with_prefix("assoc."), adam_config(config_, config_.rl_learning_rate));
  RewardBaseline baseline(config_.baseline_decay);
  const auto& assoc = model_.association();
  const auto& gen = model_.generation();
  const double temperature = config_.temperature;
  std::vector<EpochLog> logs;

  struct Step {
    double reward = 0.0;
    double loss = 0.0;
    bool skipped = true;
  };
  // One sampled selection for record i. With `learn` set the REINFORCE loss
  // is back-propagated (scaled by weight) and the baseline advanced.
  auto run = [&](std::size_t i, Rng& rng, bool learn, double weight, std::size_t epoch) {
    Step step;
    const SubGraph& base = train_graphs_[i];
    const auto cands = one_hop_candidates(base, *data_.graph);
    if (cands.empty() || config_.phi == 0) {
      notify(2, i, base, base);
      return step;
    }
    const auto ids = candidate_ids(cands);
    Tape tape(learn);
    const auto enc = assoc.encode(tape, base);
    const Var scores = assoc.score(enc.global, ids);
    SelectionTrace trace = sample_phi(scores.value().values(), ids, config_.phi, temperature, rng);
    const SubGraph ext = extend_subgraph(base, trace.chosen, *data_.graph);
    trace.n_words = ext.size();
    notify(2, i, base, ext);
    step.reward = compute_reward(gen.gold_probabilities(ext, targets_[i]));
    step.skipped = false;
    if (learn) {
      const double b = baseline.reference(step.reward);
      const Var loss = reinforce_loss(selection_log_prob(scores, trace, temperature), step.reward,
                                      b, trace.n_words);
      step.loss = loss.value()[0];
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite RL loss in stage 2, epoch " + std::to_string(epoch) +
                           ", record " + std::to_string(i));
      }
      tape.backward(scale(loss, weight));
      baseline.update(step.reward);
    }
    if (dump_ != nullptr) {
      nlohmann::json j;
      j["example"] = i;
      j["epoch"] = epoch;
      j["candidates"] = ids;
      j["scores"] = std::vector<double>(scores.value().values().begin(),
                                        scores.value().values().end());
      j["chosen"] = trace.chosen;
      j["reward"] = step.reward;
      *dump_ << j.dump() << '\n';
    }
    return step;
  };

  // Epoch 0: the initial policy, measured on its own random stream.
  {
    const auto start = std::chrono::steady_clock::now();
    Rng eval_rng(stage_seed(config_.seed, 20));
    double reward = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < data_.records.size(); ++i) {
      const Step s = run(i, eval_rng, false, 0.0, 0);
      if (!s.skipped) {
        reward += s.reward;
        ++n;
      }
    }
    emit({2, 0, 0.0, n ? reward / static_cast<double>(n) : 0.0, seconds_since(start)}, logs);
  }

  Rng rng(stage_seed(config_.seed, 2));
  for (std::size_t epoch = 1; epoch <= config_.stage2_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double reward = 0.0, loss = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches(epoch_order(rng), config_.batch_size)) {
      for (std::size_t i : batch) {
        // Records without candidates contribute no loss.
        const Step s = run(i, rng, true, 1.0 / static_cast<double>(batch.size()), epoch);
        if (s.skipped) continue;
        reward += s.reward;
        loss += s.loss;
        ++n;
      }
      adam.step();
    }
    const double denom = n ? static_cast<double>(n) : 1.0;
    emit({2, epoch, loss / denom, reward / denom, seconds_since(start)}, logs);
  }
  store.set_trainable("gen.", true);
  model_.round_to_float();
  return logs;
}

std::vector<EpochLog> Trainer::stage3() {
  ParamStore& store = model_.params();
  store.set_trainable("assoc.", false);
  Adam adam(store.with_prefix("gen."), adam_config(config_, config_.learning_rate));
  Rng rng(stage_seed(config_.seed, 3));
  // The association module is frozen, so selections are fixed for the stage.
  std::vector<SubGraph> extended;
  extended.reserve(train_graphs_.size());
  for (const SubGraph& base : train_graphs_) {
    const auto chosen =
        choose_candidates(SelectionPolicy::kLearned, model_, base, *data_.graph, config_.phi, rng);
    extended.push_back(extend_subgraph(base, chosen, *data_.graph));
  }
  std::vector<EpochLog> logs;
  for (std::size_t epoch = 1; epoch <= config_.stage3_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double total = 0.0;
    for (const auto& batch : batches(epoch_order(rng), config_.batch_size)) {
      for (std::size_t i : batch) {
        notify(3, i, train_graphs_[i], extended[i]);
        total +=
            supervised_example(i, extended[i], 1.0 / static_cast<double>(batch.size()), 3, epoch);
      }
      adam.step();
    }
    emit({3, epoch, total / static_cast<double>(data_.records.size()), 0.0, seconds_since(start)},
         logs);
  }
  store.set_trainable("assoc.", true);
  model_.round_to_float();
  return logs;
}

double Trainer::dataset_loss(SelectionPolicy policy, std::uint64_t seed) const {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < train_graphs_.size(); ++i) {
    const auto chosen =
        choose_candidates(policy, model_, train_graphs_[i], *data_.graph, config_.phi, rng);
    const SubGraph ext = extend_subgraph(train_graphs_[i], chosen, *data_.graph);
    Tape tape(false);
    const auto enc = model_.generation().encode_graph(tape, ext);
    total += model_.generation().decode_train(enc, targets_[i]).loss.value()[0];
  }
  return total / static_cast<double>(train_graphs_.size());
}

std::vector<Generation> generate_all(const Model& model, const Vocab& vocab, const Akwg& graph,
                                     const std::vector<Record>& records,
                                     const StopWords& stopwords, const GenerateOptions& options,
                                     const SubGraphObserver& observer) {
  const auto items = item_ids(records);
  const auto& gen = model.generation();
  const std::size_t max_len = model.config().max_decode_length;
  Rng rng(options.seed);
  std::vector<Generation> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    Generation g;
    g.item = items[i];
    g.query = r.query;
    g.keywords = r.keywords;

    const SubGraph base_k = prepare_train_input(r, vocab, graph);
    const auto chosen_k = choose_candidates(options.policy, model, base_k, graph, options.phi, rng);
    const SubGraph ext_k = extend_subgraph(base_k, chosen_k, graph);
    const auto ids_k = gen.generate(ext_k, options.mode, options.beam_size, max_len);
    g.text_keywords = words_of(ids_k, vocab);

    if (options.use_query) {
      const SubGraph base = prepare_infer_input(r, vocab, graph, stopwords);
      const auto chosen = choose_candidates(options.policy, model, base, graph, options.phi, rng);
      const SubGraph ext = extend_subgraph(base, chosen, graph);
      if (observer) observer({SubGraphEvent::Phase::kInfer, 0, i, &base, &ext});
      g.associated = words_of(chosen, vocab);
      g.text = words_of(gen.generate(ext, options.mode, options.beam_size, max_len), vocab);
    } else {
      if (observer) observer({SubGraphEvent::Phase::kInfer, 0, i, &base_k, &ext_k});
      g.associated = words_of(chosen_k, vocab);
      g.text = g.text_keywords;
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::string generation_to_json(const Generation& g) {
  nlohmann::ordered_json j;
  j["item"] = g.item;
  j["query"] = g.query;
  j["keywords"] = g.keywords;
  j["associated"] = g.associated;
  j["text"] = g.text;
  j["text_k"] = g.text_keywords;
  return j.dump();
}

Generation generation_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    Generation g;
    g.item = j.at("item").get<std::string>();
    g.query = j.at("query").get<std::vector<std::string>>();
    g.keywords = j.at("keywords").get<std::vector<std::string>>();
    g.associated = j.value("associated", std::vector<std::string>{});
    g.text = j.at("text").get<std::vector<std::string>>();
    g.text_keywords = j.value("text_k", g.text);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed generation line: ") + e.what());
  }
}

}  // namespace qvad
