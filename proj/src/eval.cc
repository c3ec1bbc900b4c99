#include "qvad/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "qvad/error.h"

namespace qvad {

namespace {

using NGram = std::vector<std::string>;

std::map<NGram, std::size_t> ngram_counts(const Tokens& text, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= text.size(); ++i) {
    ++counts[NGram(text.begin() + static_cast<std::ptrdiff_t>(i),
                   text.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::string join(const Tokens& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string pair_key(const std::string& item, const Tokens& query) {
  return item + '\t' + join(query);
}

Tokens set_union(const Tokens& a, const Tokens& b) {
  Tokens out = a;
  for (const auto& w : b) {
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  }
  return out;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

double bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) {
    throw UsageError("bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " references");
  }
  std::size_t cand_len = 0, ref_len = 0;
  double matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    cand_len += candidates[s].size();
    ref_len += references[s].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : ngram_counts(candidates[s], n)) {
        const auto it = ref.find(gram);
        if (it != ref.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  if (cand_len == 0 || matches[0] == 0.0) return 0.0;
  double log_sum = std::log(matches[0] / totals[0]);
  for (std::size_t n = 1; n < 4; ++n) log_sum += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  const double bp =
      cand_len >= ref_len ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::optional<double> recall(const Tokens& generated, const Tokens& targets) {
  const std::set<std::string> target_set(targets.begin(), targets.end());
  if (target_set.empty()) return std::nullopt;
  const std::set<std::string> gen_set(generated.begin(), generated.end());
  std::size_t hit = 0;
  for (const auto& w : target_set) hit += gen_set.count(w);
  return 100.0 * static_cast<double>(hit) / static_cast<double>(target_set.size());
}

double dist_n(const std::vector<Tokens>& texts, std::size_t n) {
  if (n == 0) throw UsageError("dist_n: n must be positive");
  std::set<NGram> distinct;
  std::size_t total = 0;
  for (const auto& text : texts) {
    for (const auto& [gram, count] : ngram_counts(text, n)) {
      distinct.insert(gram);
      total += count;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(total);
}

EvalReport evaluate_run(const std::vector<Generation>& generations,
                        const std::vector<Record>& test, const StopWords& stopwords,
                        bool pairs_weighted) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  std::map<std::string, const Generation*> by_pair;
  for (const auto& g : generations) by_pair.emplace(pair_key(g.item, g.query), &g);

  const auto items = item_ids(test);
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (!by_pair.count(pair_key(items[i], test[i].query))) {
      missing.push_back("(" + items[i] + ", \"" + join(test[i].query) + "\")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing generations for " + std::to_string(missing.size()) + " pair(s):";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }

  struct PairScores {
    std::optional<double> k, q, qk, ok, oq, oqk;
  };
  // Items in first-appearance order.
  std::vector<std::string> item_order;
  std::map<std::string, std::vector<PairScores>> per_item;
  std::map<std::string, std::pair<Tokens, Tokens>> bleu_pairs;  // item -> (text_k, reference)
  std::vector<Tokens> texts;
  EvalReport report;
  report.pairs_weighted = pairs_weighted;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Record& r = test[i];
    const Generation& g = *by_pair.at(pair_key(items[i], r.query));
    const Tokens q = remove_stopwords(r.query, stopwords);
    const Tokens qk = set_union(r.keywords, q);
    PairScores s{recall(g.text, r.keywords), recall(g.text, q),       recall(g.text, qk),
                 recall(r.ad_text, r.keywords), recall(r.ad_text, q), recall(r.ad_text, qk)};
    if (!s.q) ++report.skipped_q;
    if (!per_item.count(items[i])) item_order.push_back(items[i]);
    per_item[items[i]].push_back(s);
    bleu_pairs.emplace(items[i], std::make_pair(g.text_keywords, r.ad_text));
    texts.push_back(g.text);
  }

  // Collects one metric either per pair or as item means.
  auto average = [&](std::optional<double> PairScores::*field, std::vector<ItemReport>* fill,
                     std::optional<double> ItemReport::*slot) {
    std::vector<double> values;
    for (std::size_t n = 0; n < item_order.size(); ++n) {
      std::vector<double> within;
      for (const auto& s : per_item[item_order[n]]) {
        if (s.*field) within.push_back(*(s.*field));
      }
      if (fill != nullptr && !within.empty()) (*fill)[n].*slot = mean(within);
      if (pairs_weighted) {
        values.insert(values.end(), within.begin(), within.end());
      } else if (!within.empty()) {
        values.push_back(mean(within));
      }
    }
    return mean(values);
  };

  report.per_item.resize(item_order.size());
  for (std::size_t n = 0; n < item_order.size(); ++n) {
    report.per_item[n].item = item_order[n];
    report.per_item[n].pairs = per_item[item_order[n]].size();
  }
  report.recall = {average(&PairScores::k, &report.per_item, &ItemReport::recall_k),
                   average(&PairScores::q, &report.per_item, &ItemReport::recall_q),
                   average(&PairScores::qk, &report.per_item, &ItemReport::recall_qk)};
  report.original_recall = {average(&PairScores::ok, nullptr, nullptr),
                            average(&PairScores::oq, nullptr, nullptr),
                            average(&PairScores::oqk, nullptr, nullptr)};
  report.delta = {report.recall.k - report.original_recall.k,
                  report.recall.q - report.original_recall.q,
                  report.recall.qk - report.original_recall.qk};

  std::vector<Tokens> cands, refs;
  for (const auto& item : item_order) {
    cands.push_back(bleu_pairs[item].first);
    refs.push_back(bleu_pairs[item].second);
  }
  report.bleu = bleu(cands, refs);
  report.dist1 = dist_n(texts, 1);
  report.dist2 = dist_n(texts, 2);
  report.items = item_order.size();
  report.pairs = test.size();
  return report;
}

std::string report_to_json(const EvalReport& r) {
  auto recalls = [](const RecallSet& s) {
    nlohmann::ordered_json j;
    j["k"] = s.k;
    j["q"] = s.q;
    j["qk"] = s.qk;
    return j;
  };
  nlohmann::ordered_json j;
  j["bleu"] = r.bleu;
  j["recall_k"] = r.recall.k;
  j["recall_q"] = r.recall.q;
  j["recall_qk"] = r.recall.qk;
  j["dist1"] = r.dist1;
  j["dist2"] = r.dist2;
  j["original_recall"] = recalls(r.original_recall);
  j["delta_recall"] = recalls(r.delta);
  j["items"] = r.items;
  j["pairs"] = r.pairs;
  j["skipped_query_pairs"] = r.skipped_q;
  j["averaging"] = r.pairs_weighted ? "pairs" : "item-then-corpus";
  return j.dump(2) + "\n";
}

std::string report_items_csv(const EvalReport& r) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  std::string out = "item,pairs,recall_k,recall_q,recall_qk\n";
  for (const auto& it : r.per_item) {
    out += it.item + "," + std::to_string(it.pairs) + "," + cell(it.recall_k) + "," +
           cell(it.recall_q) + "," + cell(it.recall_qk) + "\n";
  }
  return out;
}

}  // namespace qvad
