// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qvad/association.h"
#include "qvad/eval.h"
#include "qvad/gradcheck_suite.h"
#include "qvad/trainer.h"
#include "support/oracles.h"
#include "support/synthetic.h"

using namespace qvad;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kWeightTol = 1e-12;
constexpr double kGraphSeconds = 1.0;
constexpr double kGradSeconds = 120.0;
constexpr double kRewardTol = 1e-12;
constexpr double kBleuFixture = 65.8037;  // 100 (3/4 * 3/4 * 2/3 * 1/2)^(1/4)
constexpr double kBleuTol = 0.01;
constexpr double kMetricSeconds = 1.0;
constexpr double kOverfitExact = 0.90;
constexpr double kOverfitBleu = 90.0;
constexpr double kTrainSeconds = 600.0;
constexpr double kPlantedFactor = 3.0;
constexpr double kRewardGain = 0.02;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

// Runs a criterion; an exception counts as a failure.
void criterion(int id, const char* name, const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail += std::string(" exception: ") + e.what();
  }
  report(id, name, ok, detail);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tokens split(const std::string& s) {
  std::istringstream in(s);
  Tokens out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Toy corpus with its graph, built the way build-graph does it.
struct ToySetup {
  std::vector<Record> records = testing::toy_corpus();
  StopWords stopwords = testing::toy_stopwords();
  Vocab vocab;
  Akwg graph;
  RunConfig config;
};

ToySetup toy_setup() {
  ToySetup s;
  s.vocab = build_vocab(s.records, 1000);
  std::vector<std::vector<WordId>> docs;
  for (const Record& r : s.records) {
    std::vector<WordId> d;
    for (WordId id : encode_words(r.ad_text, s.vocab)) {
      if (id > kUnk) d.push_back(id);
    }
    docs.push_back(d);
  }
  s.config.xi = 2.0;
  s.graph = build_graph(count_cooccurrence(docs), s.config.xi, s.config.max_degree, s.vocab.size());
  s.config.model.vocab_size = s.vocab.size();
  s.config.stage1_epochs = 40;
  s.config.batch_size = 4;
  s.config.learning_rate = 4e-4;
  return s;
}

std::vector<Generation> run_policy(const Model& m, const Vocab& v, const Akwg& g,
                                   const std::vector<Record>& recs, const StopWords& stop,
                                   SelectionPolicy policy, std::size_t phi) {
  GenerateOptions o;
  o.policy = policy;
  o.phi = phi;
  return generate_all(m, v, g, recs, stop, o);
}

// Four-policy comparison; returns the reports in policy order and prints a table.
std::vector<EvalReport> compare_policies(const std::string& label, const Model& m, const Vocab& v,
                                         const Akwg& g, const std::vector<Record>& recs,
                                         const StopWords& stop, std::size_t phi) {
  std::vector<EvalReport> out;
  std::printf("  %s policy comparison (phi=%zu)\n", label.c_str(), phi);
  std::printf("  %-10s %8s %8s %8s %8s %8s %8s\n", "policy", "bleu", "rec_k", "rec_q", "rec_qk",
              "dist1", "dist2");
  for (SelectionPolicy p : {SelectionPolicy::kRandom, SelectionPolicy::kTopPmi,
                            SelectionPolicy::kNoFilter, SelectionPolicy::kLearned}) {
    const EvalReport r = evaluate_run(run_policy(m, v, g, recs, stop, p, phi), recs, stop);
    std::printf("  %-10s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", policy_name(p), r.bleu,
                r.recall.k, r.recall.q, r.recall.qk, r.dist1, r.dist2);
    out.push_back(r);
  }
  return out;
}

// Criterion 6 state reused by criterion 8.
struct PlantedRun {
  testing::PlantedTask task;
  RunConfig config;
  std::unique_ptr<Model> model;
  std::vector<Record> held_out;
  std::size_t train_count = 300;
};

}  // namespace

int main() {
  criterion(1, "graph oracle", [](std::string& d) {
    const auto docs = testing::oracle_docs();
    const std::size_t num_nodes = 60;
    bool ok = true;
    double worst = 0.0, slowest = 0.0;
    std::size_t edges = 0;
    for (std::size_t cap : {3u, 6u, 20u}) {
      for (double xi : {0.5, 0.9, 1.5}) {
        const Timer t;
        const Akwg g = build_graph(count_cooccurrence(docs), xi, cap, num_nodes);
        slowest = std::max(slowest, t.seconds());
        const auto ref = testing::brute_force_graph(docs, xi, cap, num_nodes);
        std::size_t count = 0;
        for (WordId a = 0; a < num_nodes; ++a) {
          for (const auto& n : g.neighbors(a)) {
            if (n.neighbor < a) continue;
            ++count;
            const auto it = ref.find(std::make_pair(a, n.neighbor));
            if (it == ref.end()) {
              ok = false;
              continue;
            }
            worst = std::max(worst, std::abs(n.weight - it->second));
          }
        }
        ok = ok && count == ref.size();
        edges += count;
      }
    }
    d = "9 settings, " + std::to_string(edges) + " edges, max |dw| " + fmt("%.3g", worst) +
        ", slowest build " + fmt("%.4f s", slowest);
    return ok && worst <= kWeightTol && slowest < kGraphSeconds;
  });

  criterion(2, "gradient suite", [](std::string& d) {
    const Timer t;
    const auto cases = run_gradcheck_suite();
    const double secs = t.seconds();
    bool ok = !cases.empty();
    std::string failed;
    for (const auto& c : cases) {
      if (!c.passed()) {
        ok = false;
        failed += " " + c.name + fmt("=%.3g", c.max_error);
      }
    }
    d = std::to_string(cases.size()) + " checks in " + fmt("%.1f s", secs) +
        (failed.empty() ? "" : ", failed:" + failed);
    return ok && secs < kGradSeconds;
  });

  criterion(3, "reward properties", [](std::string& d) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ce(0.0, 30.0);
    bool in_range = true;
    for (int i = 0; i < 1000; ++i) {
      const double r = reward_from_cross_entropy(ce(rng));
      in_range = in_range && r > 0.0 && r <= 1.0;
    }
    bool monotone = true;
    double prev = reward_from_cross_entropy(0.0);
    for (int k = 1; k <= 100; ++k) {
      const double r = reward_from_cross_entropy(0.1 * k);
      monotone = monotone && r < prev;
      prev = r;
    }
    const double at_ln2 = reward_from_cross_entropy(std::log(2.0));
    // Through the probability interface: p = 1/2 at every step gives CE = ln 2.
    const std::vector<double> halves = {0.5, 0.5, 0.5};
    const double via_probs = compute_reward(halves);
    d = "range " + std::string(in_range ? "ok" : "violated") + ", monotone " +
        (monotone ? "ok" : "violated") + ", r(ln 2) = " + fmt("%.15f", at_ln2);
    return in_range && monotone && std::abs(at_ln2 - 0.4) <= kRewardTol &&
           std::abs(via_probs - 0.4) <= kRewardTol;
  });

  criterion(4, "metric oracles", [](std::string& d) {
    const Timer t;
    const double b = bleu({split("a b c d")}, {split("a b c e")});
    const double self = bleu({split("the red phone case")}, {split("the red phone case")});
    const double d1 = dist_n({split("a b"), split("a c")}, 1);
    const bool rec = recall(split("a b c"), split("a d")) == 50.0 &&
                     recall(split("a b c d"), split("d a")) == 100.0 &&
                     recall(split("a b"), split("c d")) == 0.0 &&
                     !recall(split("a"), {}).has_value();
    const double secs = t.seconds();
    d = "BLEU " + fmt("%.4f", b) + ", BLEU(x,x) " + fmt("%.4f", self) + ", Dist-1 " +
        fmt("%.2f", d1) + ", recall fixtures " + (rec ? "exact" : "wrong");
    return std::abs(b - kBleuFixture) <= kBleuTol && std::abs(self - 100.0) < 1e-9 && d1 == 75.0 &&
           rec && secs < kMetricSeconds;
  });

  ToySetup toy = toy_setup();
  std::unique_ptr<Model> toy_model;

  criterion(5, "overfit", [&](std::string& d) {
    const Timer t;
    toy_model = std::make_unique<Model>(toy.config.model, 1);
    TrainingData data{&toy.vocab, &toy.graph, toy.records};
    Trainer trainer(*toy_model, data, toy.config);
    const auto logs = trainer.stage1();
    const auto gens = run_policy(*toy_model, toy.vocab, toy.graph, toy.records, toy.stopwords,
                                 SelectionPolicy::kRandom, toy.config.phi);
    std::size_t exact = 0;
    std::vector<Tokens> cands, refs;
    for (std::size_t i = 0; i < gens.size(); ++i) {
      exact += gens[i].text_keywords == toy.records[i].ad_text;
      cands.push_back(gens[i].text_keywords);
      refs.push_back(toy.records[i].ad_text);
    }
    const double rate = static_cast<double>(exact) / gens.size();
    const double b = bleu(cands, refs);
    const double secs = t.seconds();
    d = std::to_string(exact) + "/" + std::to_string(gens.size()) + " exact, BLEU " +
        fmt("%.2f", b) + ", final loss " + fmt("%.4f", logs.back().loss) + ", " +
        fmt("%.0f s", secs);
    return rate >= kOverfitExact && b >= kOverfitBleu && secs < kTrainSeconds;
  });

  PlantedRun planted;
  criterion(6, "planted association", [&](std::string& d) {
    const Timer t;
    PlantedRun& p = planted;
    p.task = testing::planted_task(p.train_count + 100, 5);
    RunConfig& c = p.config;
    c.phi = 1;
    c.stage1_epochs = 15;
    c.stage2_epochs = 5;
    c.batch_size = 4;
    c.learning_rate = 1e-3;
    c.rl_learning_rate = 1e-2;
    c.baseline_decay = 0.9;
    c.model.embedding_dim = 64;
    c.model.hidden_dim = 128;
    c.model.ffn_dim = 256;
    c.model.vocab_size = p.task.vocab.size();
    p.model = std::make_unique<Model>(c.model, 1);
    const auto& recs = p.task.records;
    const std::vector<Record> train(recs.begin(), recs.begin() + p.train_count);
    p.held_out.assign(recs.begin() + p.train_count, recs.end());

    // The generator learns on one split; the selector is trained on records
    // whose ads the generator has not memorized.
    TrainingData gen_data{&p.task.vocab, &p.task.graph, train};
    Trainer(*p.model, gen_data, c).stage1();
    TrainingData rl_data{&p.task.vocab, &p.task.graph, p.held_out};
    const auto logs = Trainer(*p.model, rl_data, c).stage2();

    Rng rng(99);
    std::size_t hits = 0, draws = 0;
    const std::size_t m = p.task.candidates_per_record;
    for (std::size_t i = p.train_count; i < recs.size(); ++i) {
      const SubGraph base = prepare_train_input(recs[i], p.task.vocab, p.task.graph);
      std::vector<WordId> ids;
      for (const auto& cand : one_hop_candidates(base, p.task.graph)) ids.push_back(cand.id);
      Tape tape(false);
      const auto enc = p.model->association().encode(tape, base);
      const auto scores = p.model->association().score(enc.global, ids).value().values();
      for (int k = 0; k < 20; ++k) {
        const auto tr = sample_phi(scores, ids, c.phi, c.temperature, rng);
        hits += tr.chosen[0] == p.task.planted[i];
        ++draws;
      }
    }
    const double freq = static_cast<double>(hits) / draws;
    const double chance = static_cast<double>(c.phi) / m;
    const double r0 = logs.front().mean_reward, r1 = logs.back().mean_reward;
    const double secs = t.seconds();
    d = "planted frequency " + fmt("%.3f", freq) + " vs chance " + fmt("%.3f", chance) +
        ", reward " + fmt("%.4f", r0) + " -> " + fmt("%.4f", r1) + ", " + fmt("%.0f s", secs);
    return logs.front().epoch == 0 && logs.size() == c.stage2_epochs + 1 &&
           freq >= kPlantedFactor * chance && r1 >= r0 + kRewardGain && secs < kTrainSeconds;
  });

  criterion(7, "train/inference asymmetry", [&](std::string& d) {
    RunConfig c = toy.config;
    c.stage1_epochs = 1;
    Model m(c.model, 2);
    TrainingData data{&toy.vocab, &toy.graph, toy.records};
    Trainer trainer(m, data, c);
    std::size_t train_graphs = 0, query_nodes = 0, foreign = 0;
    trainer.set_observer([&](const SubGraphEvent& e) {
      ++train_graphs;
      const Record& r = toy.records[e.record];
      for (const SubGraph* s : {e.base, e.extended}) {
        for (std::size_t i = 0; i < s->size(); ++i) {
          query_nodes += s->node_types[i] == NodeType::kQuery;
          // A base node that is not a keyword would be a leaked query word.
          if (s == e.base &&
              std::find(r.keywords.begin(), r.keywords.end(), toy.vocab.word(s->node_ids[i])) ==
                  r.keywords.end()) {
            ++foreign;
          }
        }
      }
    });
    trainer.stage1();

    std::size_t infer_graphs = 0, expected = 0, missing = 0;
    generate_all(m, toy.vocab, toy.graph, toy.records, toy.stopwords, GenerateOptions{},
                 [&](const SubGraphEvent& e) {
                   ++infer_graphs;
                   for (const auto& w : toy.records[e.record].query) {
                     if (toy.stopwords.count(w)) continue;
                     ++expected;
                     const WordId id = toy.vocab.id(w);
                     missing += id == kUnk || !e.base->contains(id);
                   }
                 });
    d = std::to_string(train_graphs) + " training graphs with " + std::to_string(query_nodes) +
        " query nodes and " + std::to_string(foreign) + " non-keyword inputs; " +
        std::to_string(infer_graphs) + " inference graphs missing " + std::to_string(missing) +
        " of " + std::to_string(expected) + " query words";
    return train_graphs == toy.records.size() && query_nodes == 0 && foreign == 0 &&
           infer_graphs == toy.records.size() && expected > 0 && missing == 0;
  });

  criterion(8, "policy comparison", [&](std::string& d) {
    if (!toy_model || !planted.model) {
      d = "prerequisite model missing";
      return false;
    }
    const auto toy_reports = compare_policies("toy corpus", *toy_model, toy.vocab, toy.graph,
                                              toy.records, toy.stopwords, toy.config.phi);
    const auto planted_reports =
        compare_policies("planted held-out", *planted.model, planted.task.vocab,
                         planted.task.graph, planted.held_out, {}, planted.config.phi);
    const double random_qk = planted_reports[0].recall.qk;
    const double learned_qk = planted_reports[3].recall.qk;
    d = "4 policies on both corpora; planted Recall(q+k) learned " + fmt("%.2f", learned_qk) +
        " vs random " + fmt("%.2f", random_qk);
    return toy_reports.size() == 4 && planted_reports.size() == 4 && learned_qk >= random_qk;
  });

  criterion(9, "determinism", [](std::string& d) {
    const fs::path root = testing::scratch_dir("acceptance_determinism");
    testing::write_jsonl(root / "train.jsonl", testing::toy_corpus());
    {
      std::ofstream stop(root / "stop.txt");
      for (const auto& w : testing::toy_stopwords()) stop << w << "\n";
    }
    const std::string bin = QVAD_CLI_PATH;
    const std::string common =
        " --stopwords " + (root / "stop.txt").string() +
        " --embedding_dim 16 --hidden_dim 24 --heads 2 --ffn_dim 32 --phi 3 --xi 2"
        " --stage1_epochs 2 --stage2_epochs 1 --stage3_epochs 1 --seed 7";
    auto pipeline = [&](const fs::path& dir) {
      const std::string train = (root / "train.jsonl").string();
      const std::vector<std::string> steps = {
          "build-graph --corpus " + train + " --out " + (dir / "g").string(),
          "train --corpus " + train + " --graph-dir " + (dir / "g").string() + " --out " +
              (dir / "m").string(),
          "generate --checkpoint " + (dir / "m" / "stage3.ckpt").string() + " --graph-dir " +
              (dir / "g").string() + " --input " + train + " --out " + (dir / "gen.jsonl").string(),
          "evaluate --generations " + (dir / "gen.jsonl").string() + " --input " + train +
              " --report " + (dir / "report.json").string() + " --items " +
              (dir / "items.csv").string()};
      for (const auto& s : steps) {
        if (std::system((bin + " " + s + common + " > /dev/null 2>&1").c_str()) != 0) return false;
      }
      return true;
    };
    if (!pipeline(root / "a") || !pipeline(root / "b")) {
      d = "pipeline command failed";
      return false;
    }
    std::size_t compared = 0, differing = 0;
    for (const char* f : {"g/akwg.bin", "g/akwg.tsv", "g/vocab.txt", "m/stage1.ckpt",
                          "m/stage2.ckpt", "m/stage3.ckpt", "gen.jsonl", "report.json",
                          "items.csv"}) {
      const std::string a = read(root / "a" / f), b = read(root / "b" / f);
      ++compared;
      differing += a.empty() || a != b;
    }
    d = std::to_string(compared) + " artifacts compared, " + std::to_string(differing) + " differ";
    return differing == 0;
  });

  return failures;
}
