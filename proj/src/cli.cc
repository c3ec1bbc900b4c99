#include "qvad/cli.h"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qvad/akwg.h"
#include "qvad/config.h"
#include "qvad/corpus.h"
#include "qvad/error.h"
#include "qvad/eval.h"
#include "qvad/gradcheck_suite.h"
#include "qvad/model.h"
#include "qvad/trainer.h"

namespace qvad {

namespace fs = std::filesystem;

namespace {

struct Paths {
  static fs::path vocab(const fs::path& dir) { return dir / "vocab.txt"; }
  static fs::path graph(const fs::path& dir) { return dir / "akwg.bin"; }
  static fs::path tsv(const fs::path& dir) { return dir / "akwg.tsv"; }
  static fs::path checkpoint(const fs::path& dir, int stage) {
    return dir / ("stage" + std::to_string(stage) + ".ckpt");
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

StopWords stopwords_of(const RunConfig& c) {
  return c.stopwords.empty() ? StopWords{} : load_stopwords(c.stopwords);
}

LoadResult load_corpus(const fs::path& path, const StopWords& stopwords, std::ostream& err) {
  LoadResult loaded = load_records(path, stopwords);
  for (const auto& issue : loaded.errors) {
    err << "warning\t" << path.string() << ":" << issue.line << "\t" << issue.message << '\n';
  }
  return loaded;
}

ModelConfig model_config(const RunConfig& c, const Vocab& vocab) {
  ModelConfig m = c.model;
  m.vocab_size = vocab.size();
  return m;
}

int build_graph_cmd(const RunConfig& c, const fs::path& corpus, const fs::path& out_dir,
                    std::ostream& out, std::ostream& err) {
  const StopWords sw = stopwords_of(c);
  const LoadResult loaded = load_corpus(corpus, sw, err);
  if (loaded.records.empty()) throw DataError("no valid records in " + corpus.string());
  const Vocab vocab = build_vocab(loaded.records, c.vocab_max);
  // Co-occurrence is counted over ad texts; specials and UNK are dropped.
  std::vector<std::vector<WordId>> docs;
  for (const Record& r : loaded.records) {
    std::vector<WordId> doc;
    for (WordId id : encode_words(r.ad_text, vocab)) {
      if (id >= kReservedTokens) doc.push_back(id);
    }
    docs.push_back(std::move(doc));
  }
  const CooccurrenceCounts counts = count_cooccurrence_parallel(docs, c.threads);
  const Akwg graph = build_graph(counts, c.xi, c.max_degree, vocab.size());
  ensure_dir(out_dir);
  vocab.save(Paths::vocab(out_dir));
  graph.save_binary(Paths::graph(out_dir));
  graph.export_tsv(Paths::tsv(out_dir), vocab, &counts);
  out << "records\t" << loaded.records.size() << "\ndropped\t" << loaded.dropped
      << "\nparse_errors\t" << loaded.errors.size() << "\nvocab\t" << vocab.size() << "\nedges\t"
      << graph.edge_count() << '\n';
  return kExitOk;
}

int train_cmd(const RunConfig& c, const fs::path& corpus, const fs::path& graph_dir,
              const fs::path& out_dir, int start_stage, int end_stage,
              const std::string& selection_dump, std::ostream& out, std::ostream& err) {
  if (start_stage < 1 || end_stage > 3 || start_stage > end_stage) {
    throw UsageError("stages must satisfy 1 <= start-stage <= end-stage <= 3");
  }
  const Vocab vocab = Vocab::load(Paths::vocab(graph_dir));
  const Akwg graph = Akwg::load_binary(Paths::graph(graph_dir));
  TrainingData data{&vocab, &graph, load_corpus(corpus, stopwords_of(c), err).records};
  if (data.records.empty()) throw DataError("no valid records in " + corpus.string());

  Model model(model_config(c, vocab), c.seed);
  if (start_stage > 1) model.load(Paths::checkpoint(out_dir, start_stage - 1), start_stage - 1);
  ensure_dir(out_dir);
  write_text(out_dir / "config.txt", to_text(c));

  const fs::path log_path = out_dir / "train_log.csv";
  std::ofstream log(log_path, start_stage == 1 ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (start_stage == 1) log << epoch_log_header() << '\n';

  Trainer trainer(model, data, c);
  std::ofstream dump;
  if (!selection_dump.empty()) {
    dump.open(selection_dump);
    if (!dump) throw DataError("cannot write " + selection_dump);
    trainer.set_selection_dump(&dump);
  }
  trainer.set_epoch_callback([&](const EpochLog& e) {
    log << epoch_log_line(e) << '\n';
    log.flush();
    out << epoch_log_line(e) << '\n';
    if (c.checkpoint_every > 0 && e.epoch > 0 && e.epoch % c.checkpoint_every == 0) {
      model.save(out_dir / ("stage" + std::to_string(e.stage) + "_epoch" +
                            std::to_string(e.epoch) + ".partial"),
                 0);
    }
  });
  for (int stage = start_stage; stage <= end_stage; ++stage) {
    if (stage == 1) trainer.stage1();
    if (stage == 2) trainer.stage2();
    if (stage == 3) trainer.stage3();
    model.save(Paths::checkpoint(out_dir, stage), static_cast<std::uint32_t>(stage));
  }
  return kExitOk;
}

int generate_cmd(const RunConfig& c, const fs::path& checkpoint, const fs::path& graph_dir,
                 const fs::path& input, const fs::path& output, bool no_query,
                 const std::string& policy, std::ostream& out, std::ostream& err) {
  const Vocab vocab = Vocab::load(Paths::vocab(graph_dir));
  const Akwg graph = Akwg::load_binary(Paths::graph(graph_dir));
  const StopWords sw = stopwords_of(c);
  const LoadResult loaded = load_corpus(input, sw, err);
  Model model(model_config(c, vocab), c.seed);
  model.load(checkpoint);

  GenerateOptions opt;
  opt.policy = parse_policy(policy);
  opt.use_query = !no_query;
  opt.mode = c.decode;
  opt.beam_size = c.beam_size;
  opt.phi = c.phi;
  opt.seed = c.seed;
  std::size_t query_nodes = 0;
  auto observer = [&](const SubGraphEvent& e) {
    for (NodeType t : e.extended->node_types) query_nodes += t == NodeType::kQuery;
  };
  const auto gens = generate_all(model, vocab, graph, loaded.records, sw, opt, observer);
  if (no_query && query_nodes != 0) throw DataError("query words reached a --no-query input");
  std::ostringstream text;
  for (const auto& g : gens) text << generation_to_json(g) << '\n';
  write_text(output, text.str());
  out << "generated\t" << gens.size() << "\npolicy\t" << policy_name(opt.policy) << "\nquery\t"
      << (no_query ? "off" : "on") << '\n';
  return kExitOk;
}

int evaluate_cmd(const RunConfig& c, const fs::path& generations, const fs::path& input,
                 const fs::path& report_path, const std::string& items_path, std::ostream& out,
                 std::ostream& err) {
  std::ifstream in(generations);
  if (!in) throw DataError("cannot read " + generations.string());
  std::vector<Generation> gens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) gens.push_back(generation_from_json(line));
  }
  const StopWords sw = stopwords_of(c);
  const LoadResult test = load_corpus(input, sw, err);
  const EvalReport report = evaluate_run(gens, test.records, sw, c.pairs_weighted);
  const std::string json = report_to_json(report);
  if (!report_path.empty()) write_text(report_path, json);
  if (!items_path.empty()) write_text(items_path, report_items_csv(report));
  out << json;
  return kExitOk;
}

int gradcheck_cmd(std::uint64_t seed, std::ostream& out) {
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(seed)) {
    out << (c.passed() ? "PASS" : "FAIL") << '\t' << c.name << "\tmax_rel_err=" << std::scientific
        << std::setprecision(3) << c.max_error << "\ttol=" << c.tolerance << "\tcoords="
        << c.coordinates << '\n';
    ok = ok && c.passed();
  }
  out << std::defaultfloat;
  if (!ok) throw NumericError("gradient check failed");
  return kExitOk;
}

int inspect_cmd(const fs::path& graph_dir, const std::string& word, std::ostream& out) {
  const Vocab vocab = Vocab::load(Paths::vocab(graph_dir));
  const Akwg graph = Akwg::load_binary(Paths::graph(graph_dir));
  if (!vocab.contains(word)) throw DataError("word not in vocabulary: " + word);
  const WordId id = vocab.id(word);
  const auto nbrs = graph.neighbors(id);
  out << word << "\tid=" << id << "\tdegree=" << nbrs.size() << '\n';
  char buf[96];
  for (const Edge& e : nbrs) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f", e.weight * graph.threshold(), e.weight);
    out << vocab.word(e.neighbor) << '\t' << buf << '\n';
  }
  return kExitOk;
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\t') ch = ' ';
  }
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query-variant ad text generation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path,
                 std::string("config file of key = value lines (default: $") + kConfigEnvVar +
                     ")");
  // Every config key doubles as a flag; flags override the config file.
  const RunConfig defaults;
  std::map<std::string, std::string> overrides;
  std::vector<std::pair<const ConfigField*, CLI::Option*>> field_opts;
  for (const ConfigField& f : config_fields()) {
    auto* opt = app.add_option("--" + f.key, overrides[f.key], f.help)
                    ->default_str(f.get(defaults))
                    ->group("Config");
    field_opts.emplace_back(&f, opt);
  }

  fs::path corpus, out_dir, graph_dir, checkpoint, input, output, generations, report;
  std::string items_csv, selection_dump, policy = "learned", word;
  int start_stage = 1, end_stage = 3;
  bool no_query = false;

  auto* build = app.add_subcommand("build-graph", "corpus -> vocabulary, AKWG binary and TSV");
  build->add_option("--corpus", corpus, "training records (JSONL)")->required();
  build->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "three-stage training");
  train->add_option("--corpus", corpus, "training records (JSONL)")->required();
  train->add_option("--graph-dir", graph_dir, "directory written by build-graph")->required();
  train->add_option("--out", out_dir, "checkpoint directory")->required();
  train->add_option("--start-stage", start_stage, "first stage to run; loads the previous "
                                                  "stage's checkpoint from --out")
      ->capture_default_str();
  train->add_option("--end-stage", end_stage, "last stage to run")->capture_default_str();
  train->add_option("--selection-dump", selection_dump, "stage-2 selection JSONL");

  auto* generate = app.add_subcommand("generate", "checkpoint + records -> generations JSONL");
  generate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  generate->add_option("--graph-dir", graph_dir, "directory written by build-graph")->required();
  generate->add_option("--input", input, "test records (JSONL)")->required();
  generate->add_option("--out", output, "generations JSONL")->required();
  generate->add_flag("--no-query", no_query, "keywords-only input");
  generate->add_option("--policy", policy, "selection policy: random, pmi, no-filter, learned")
      ->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "generations + test records -> report");
  evaluate->add_option("--generations", generations, "generations JSONL")->required();
  evaluate->add_option("--input", input, "test records (JSONL)")->required();
  evaluate->add_option("--report", report, "report JSON path");
  evaluate->add_option("--items", items_csv, "per-item CSV path");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");

  auto* inspect = app.add_subcommand("inspect-graph", "print a word's AKWG neighbours");
  inspect->add_option("--graph-dir", graph_dir, "directory written by build-graph")->required();
  inspect->add_option("--word", word, "word to inspect")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error\tusage\t" << one_line(e.what()) << '\n';
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    RunConfig config;
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') {
        config_path = env;
      }
    }
    if (!config_path.empty()) config = load_config(config_path);
    for (const auto& [field, opt] : field_opts) {
      if (opt->count() > 0) field->set(config, overrides[field->key]);
    }
    config.validate();

    if (*build) return build_graph_cmd(config, corpus, out_dir, out, err);
    if (*train) {
      return train_cmd(config, corpus, graph_dir, out_dir, start_stage, end_stage,
                       selection_dump, out, err);
    }
    if (*generate) {
      return generate_cmd(config, checkpoint, graph_dir, input, output, no_query, policy, out,
                          err);
    }
    if (*evaluate) return evaluate_cmd(config, generations, input, report, items_csv, out, err);
    if (*gradcheck) return gradcheck_cmd(config.seed, out);
    if (*inspect) return inspect_cmd(graph_dir, word, out);
  } catch (const UsageError& e) {
    err << "error\tusage\t" << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error\tnumeric\t" << one_line(e.what()) << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error\tdata\t" << one_line(e.what()) << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error\tdata\t" << one_line(e.what()) << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace qvad
