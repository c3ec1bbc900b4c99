#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "qvad/akwg.h"
#include "qvad/config.h"
#include "qvad/corpus.h"
#include "qvad/model.h"

namespace qvad {

// Training phase: nodes are the keywords only.
SubGraph prepare_train_input(const Record& record, const Vocab& vocab, const Akwg& graph);
// Inference phase: keywords plus the query's non-stop words. Throws DataError
// if the union is empty.
SubGraph prepare_infer_input(const Record& record, const Vocab& vocab, const Akwg& graph,
                             const StopWords& stopwords);

enum class SelectionPolicy { kRandom, kTopPmi, kNoFilter, kLearned };

const char* policy_name(SelectionPolicy policy);
SelectionPolicy parse_policy(const std::string& name);

// Chooses associated words for `sub` among its one-hop candidates.
//   random:    up to phi uniformly without replacement
//   top-pmi:   phi largest anchor weights (ties: smaller id)
//   no-filter: every candidate
//   learned:   phi best association scores
std::vector<WordId> choose_candidates(SelectionPolicy policy, const Model& model,
                                      const SubGraph& sub, const Akwg& graph, std::size_t phi,
                                      Rng& rng);

// Called with every sub-graph the trainer or generator builds.
struct SubGraphEvent {
  enum class Phase { kTrain, kInfer } phase;
  int stage = 0;  // 0 at inference
  std::size_t record = 0;
  const SubGraph* base = nullptr;      // keyword (and query) nodes
  const SubGraph* extended = nullptr;  // with associated words
};
using SubGraphObserver = std::function<void(const SubGraphEvent&)>;

struct EpochLog {
  int stage = 0;
  std::size_t epoch = 0;  // stage 2 epoch 0 is the evaluation pass before training
  double loss = 0.0;
  double mean_reward = 0.0;  // stage 2 only
  double seconds = 0.0;
};

std::string epoch_log_header();
std::string epoch_log_line(const EpochLog& log);

struct TrainingData {
  const Vocab* vocab = nullptr;
  const Akwg* graph = nullptr;
  std::vector<Record> records;
};

// Three-stage schedule:
//   1. generator trained on keyword graphs extended with random candidates;
//   2. generator frozen, association module trained with REINFORCE against
//      the generator's teacher-forced gold-token reward;
//   3. association frozen, generator fine-tuned on top-phi selections.
class Trainer {
 public:
  Trainer(Model& model, const TrainingData& data, const RunConfig& config);

  void set_observer(SubGraphObserver observer) { observer_ = std::move(observer); }
  void set_epoch_callback(std::function<void(const EpochLog&)> cb) { on_epoch_ = std::move(cb); }
  // Stage-2 JSONL: {"example", "candidates", "scores", "chosen", "reward"}.
  void set_selection_dump(std::ostream* out) { dump_ = out; }

  std::vector<EpochLog> stage1();
  std::vector<EpochLog> stage2();
  std::vector<EpochLog> stage3();

  // Mean per-token cross-entropy of the generator over the data set, using
  // the given policy's selections (no parameter updates).
  double dataset_loss(SelectionPolicy policy, std::uint64_t seed) const;

 private:
  double supervised_example(std::size_t index, const SubGraph& extended, double weight,
                            int stage, std::size_t epoch);
  std::vector<std::size_t> epoch_order(Rng& rng) const;
  void notify(int stage, std::size_t record, const SubGraph& base, const SubGraph& ext) const;
  void emit(const EpochLog& log, std::vector<EpochLog>& logs) const;

  Model& model_;
  const TrainingData& data_;
  RunConfig config_;
  std::vector<std::vector<WordId>> targets_;
  std::vector<SubGraph> train_graphs_;
  SubGraphObserver observer_;
  std::function<void(const EpochLog&)> on_epoch_;
  std::ostream* dump_ = nullptr;
};

// Decoded output for one record.
struct Generation {
  std::string item;
  std::vector<std::string> query;
  std::vector<std::string> keywords;
  std::vector<std::string> associated;    // chosen for the query-aware input
  std::vector<std::string> text;          // keywords + query input
  std::vector<std::string> text_keywords;  // keywords-only input
};

struct GenerateOptions {
  SelectionPolicy policy = SelectionPolicy::kLearned;
  bool use_query = true;
  DecodeMode mode = DecodeMode::kGreedy;
  std::size_t beam_size = 4;
  std::size_t phi = 10;
  std::uint64_t seed = 1;
};

std::vector<Generation> generate_all(const Model& model, const Vocab& vocab, const Akwg& graph,
                                     const std::vector<Record>& records,
                                     const StopWords& stopwords, const GenerateOptions& options,
                                     const SubGraphObserver& observer = {});

std::string generation_to_json(const Generation& g);
Generation generation_from_json(const std::string& line);

}  // namespace qvad
