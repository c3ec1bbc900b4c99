#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qvad/corpus.h"
#include "qvad/trainer.h"

namespace qvad {

using Tokens = std::vector<std::string>;

// Corpus BLEU-4 in [0, 100]: clipped n-gram counts summed over the corpus,
// add-one smoothing for n >= 2, uniform weights, brevity penalty. Throws
// UsageError when the lists differ in length.
double bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

// 100 |set(generated) ∩ targets| / |targets|; nullopt for an empty target set.
std::optional<double> recall(const Tokens& generated, const Tokens& targets);

// 100 * distinct n-grams / total n-grams over all texts (0 when there are none).
double dist_n(const std::vector<Tokens>& texts, std::size_t n);

struct RecallSet {
  double k = 0.0;
  double q = 0.0;
  double qk = 0.0;
};

struct ItemReport {
  std::string item;
  std::size_t pairs = 0;
  std::optional<double> recall_k, recall_q, recall_qk;
};

struct EvalReport {
  double bleu = 0.0;
  RecallSet recall;           // generated texts
  RecallSet original_recall;  // human-written texts against the same targets
  RecallSet delta;            // recall - original_recall
  double dist1 = 0.0;
  double dist2 = 0.0;
  std::size_t items = 0;
  std::size_t pairs = 0;
  std::size_t skipped_q = 0;  // pairs whose query had no words left
  bool pairs_weighted = false;
  std::vector<ItemReport> per_item;
};

// Scores generations against the test records. Recalls use the query-aware
// texts and are averaged within each item, then across items (or over all
// pairs when pairs_weighted). BLEU uses the keywords-only texts, one per item.
// Throws DataError naming every (item, query) pair without a generation.
EvalReport evaluate_run(const std::vector<Generation>& generations,
                        const std::vector<Record>& test, const StopWords& stopwords,
                        bool pairs_weighted = false);

std::string report_to_json(const EvalReport& report);
// item,pairs,recall_k,recall_q,recall_qk
std::string report_items_csv(const EvalReport& report);

}  // namespace qvad
