#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace qvad {

// Architecture of the association and generation networks. Everything that
// changes parameter shapes lives here and feeds the checkpoint hash.
struct ModelConfig {
  std::size_t vocab_size = 0;  // taken from the built vocabulary
  std::size_t embedding_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t association_layers = 2;
  std::size_t gcn_layers = 2;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 3;
  std::size_t heads = 4;
  std::size_t ffn_dim = 512;
  std::size_t max_decode_length = 20;

  void validate() const;
  std::uint64_t hash() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class DecodeMode { kGreedy, kBeam };

struct RunConfig {
  // Graph construction.
  double xi = 8.0;
  std::size_t max_degree = 20;
  std::size_t vocab_max = 50000;

  // Association.
  std::size_t phi = 10;
  double temperature = 1.0;
  double baseline_decay = 0.99;

  ModelConfig model;
  std::size_t beam_size = 4;
  DecodeMode decode = DecodeMode::kGreedy;

  // Training.
  std::size_t stage1_epochs = 15;
  std::size_t stage2_epochs = 5;
  std::size_t stage3_epochs = 5;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double rl_learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only at stage end

  // Evaluation and runtime.
  bool pairs_weighted = false;
  std::size_t threads = 1;
  std::string stopwords;  // path; empty means no stop words

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// One declarative entry per config key; drives parsing, echo, CLI flags and
// --help text.
struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigField>& config_fields();

// Flat "key = value" text; '#' starts a comment. Unknown keys and malformed
// values throw UsageError.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// Every field, one per line, in config_fields() order.
std::string to_text(const RunConfig& config);

// Name of the environment variable holding the default config file path.
inline constexpr const char* kConfigEnvVar = "QVAD_CONFIG";

}  // namespace qvad
