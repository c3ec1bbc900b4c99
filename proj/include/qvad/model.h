#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "qvad/association.h"
#include "qvad/config.h"
#include "qvad/generation.h"

namespace qvad {

// Owns all parameters: "assoc.*" for the association module and "gen.*" for
// the generation module.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const AssociationModule& association() const { return *association_; }
  const GenerationModule& generation() const { return *generation_; }

  // Stage-2 initialisation: association embeddings take the generator's.
  void copy_embeddings_to_association();

  // Rounds every parameter to the nearest float so that a run resumed from a
  // (32-bit) checkpoint continues exactly like an uninterrupted one.
  void round_to_float();

  // Layout: "QVCK", u32 version, u64 config hash, u32 stage, u32 count, then
  // per tensor: name, u32 rank, rank x u32 dims, f32 values.
  void save(const std::filesystem::path& path, std::uint32_t stage) const;
  // Throws DataError on a hash mismatch, a missing or misshapen tensor, or
  // when required_stage is non-zero and differs from the stored stage.
  // Returns the stored stage.
  std::uint32_t load(const std::filesystem::path& path, std::uint32_t required_stage = 0);

  // Stage tag of a checkpoint without loading it.
  static std::uint32_t checkpoint_stage(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  ParamStore store_;
  std::unique_ptr<AssociationModule> association_;
  std::unique_ptr<GenerationModule> generation_;
};

}  // namespace qvad
