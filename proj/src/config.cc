#include "qvad/config.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qvad/error.h"
#include "qvad/serialize.h"

namespace qvad {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw UsageError("config " + key + ": expected a non-negative integer, got \"" + v + "\"");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError("config " + key + ": expected a number, got \"" + v + "\"");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config " + key + ": expected true/false, got \"" + v + "\"");
}

template <class M>
ConfigField size_field(std::string key, std::string help, M RunConfig::*member) {
  return {key, std::move(help),
          [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, key](RunConfig& c, const std::string& v) {
            c.*member = parse_unsigned<M>(key, v);
          }};
}

ConfigField model_field(std::string key, std::string help, std::size_t ModelConfig::*member) {
  return {key, std::move(help),
          [member](const RunConfig& c) { return std::to_string(c.model.*member); },
          [member, key](RunConfig& c, const std::string& v) {
            c.model.*member = parse_unsigned<std::size_t>(key, v);
          }};
}

ConfigField double_field(std::string key, std::string help, double RunConfig::*member) {
  return {key, std::move(help), [member](const RunConfig& c) { return fmt_double(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid model config: " + what);
  };
  need(embedding_dim > 0 && hidden_dim > 0, "dimensions must be positive");
  need(association_layers >= 1, "association_layers must be >= 1");
  need(gcn_layers >= 1, "gcn_layers must be >= 1");
  need(decoder_layers >= 1, "decoder_layers must be >= 1");
  need(heads >= 1 && hidden_dim % heads == 0, "heads must divide hidden_dim");
  need(ffn_dim > 0, "ffn_dim must be positive");
  need(max_decode_length >= 1, "max_decode_length must be >= 1");
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream s;
  s << "vocab=" << vocab_size << ";emb=" << embedding_dim << ";hidden=" << hidden_dim
    << ";assoc_layers=" << association_layers << ";gcn=" << gcn_layers
    << ";enc=" << encoder_layers << ";dec=" << decoder_layers << ";heads=" << heads
    << ";ffn=" << ffn_dim << ";max_len=" << max_decode_length;
  return fnv1a(s.str());
}

void RunConfig::validate() const {
  model.validate();
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("invalid config: " + what);
  };
  need(xi > 0.0, "xi must be positive");
  need(temperature > 0.0, "temperature must be positive");
  need(baseline_decay >= 0.0 && baseline_decay <= 1.0, "baseline_decay must lie in [0, 1]");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(beam_size >= 1, "beam_size must be >= 1");
  need(learning_rate >= 0.0 && rl_learning_rate >= 0.0, "learning rates must be >= 0");
  need(threads >= 1, "threads must be >= 1");
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      double_field("xi", "PMI threshold for AKWG edges (natural log)", &RunConfig::xi),
      size_field("max_degree", "maximum AKWG neighbours per word", &RunConfig::max_degree),
      size_field("vocab_max", "vocabulary size including 4 reserved tokens",
                 &RunConfig::vocab_max),
      size_field("phi", "associated words added per example", &RunConfig::phi),
      double_field("temperature", "selection sampling temperature", &RunConfig::temperature),
      double_field("baseline_decay", "EMA decay of the reward baseline",
                   &RunConfig::baseline_decay),
      model_field("embedding_dim", "word/type embedding size", &ModelConfig::embedding_dim),
      model_field("hidden_dim", "hidden size", &ModelConfig::hidden_dim),
      model_field("association_layers", "GatedGCN layers in the association encoder",
                  &ModelConfig::association_layers),
      model_field("gcn_layers", "GatedGCN layers in the generation encoder",
                  &ModelConfig::gcn_layers),
      model_field("encoder_layers", "attention encoder layers after the GatedGCN",
                  &ModelConfig::encoder_layers),
      model_field("decoder_layers", "decoder layers", &ModelConfig::decoder_layers),
      model_field("heads", "attention heads", &ModelConfig::heads),
      model_field("ffn_dim", "feed-forward inner size", &ModelConfig::ffn_dim),
      model_field("max_decode_length", "maximum generated content tokens",
                  &ModelConfig::max_decode_length),
      size_field("beam_size", "beam width for beam decoding", &RunConfig::beam_size),
      {"decode", "decoding mode: greedy or beam",
       [](const RunConfig& c) { return std::string(c.decode == DecodeMode::kBeam ? "beam" : "greedy"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "greedy") c.decode = DecodeMode::kGreedy;
         else if (v == "beam") c.decode = DecodeMode::kBeam;
         else throw UsageError("config decode: expected greedy or beam, got \"" + v + "\"");
       }},
      size_field("stage1_epochs", "supervised epochs with random association",
                 &RunConfig::stage1_epochs),
      size_field("stage2_epochs", "policy-gradient epochs", &RunConfig::stage2_epochs),
      size_field("stage3_epochs", "supervised epochs with the learned selector",
                 &RunConfig::stage3_epochs),
      size_field("batch_size", "examples per optimizer step", &RunConfig::batch_size),
      double_field("learning_rate", "Adam learning rate for supervised stages",
                   &RunConfig::learning_rate),
      double_field("rl_learning_rate", "Adam learning rate for the policy-gradient stage",
                   &RunConfig::rl_learning_rate),
      double_field("adam_beta1", "Adam beta1", &RunConfig::adam_beta1),
      double_field("adam_beta2", "Adam beta2", &RunConfig::adam_beta2),
      double_field("adam_epsilon", "Adam epsilon", &RunConfig::adam_epsilon),
      size_field("seed", "random seed", &RunConfig::seed),
      size_field("checkpoint_every", "write a checkpoint every N epochs (0: stage end only)",
                 &RunConfig::checkpoint_every),
      {"pairs_weighted", "average recalls over (item, query) pairs instead of items",
       [](const RunConfig& c) { return std::string(c.pairs_weighted ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.pairs_weighted = parse_bool("pairs_weighted", v); }},
      size_field("threads", "worker threads", &RunConfig::threads),
      {"stopwords", "stop-word list, one word per line",
       [](const RunConfig& c) { return c.stopwords; },
       [](RunConfig& c, const std::string& v) { c.stopwords = v; }},
  };
  return fields;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(n) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : config_fields()) {
      if (f.key == key) {
        f.set(base, value);
        found = true;
        break;
      }
    }
    if (!found) throw UsageError("config line " + std::to_string(n) + ": unknown key " + key);
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace qvad
