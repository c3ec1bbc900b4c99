#include "qvad/model.h"

#include <algorithm>

#include "qvad/error.h"
#include "qvad/serialize.h"

namespace qvad {

namespace {

constexpr char kMagic[4] = {'Q', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void read_header(BinaryReader& r, const std::filesystem::path& path) {
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw DataError("not a checkpoint: " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  association_ = std::make_unique<AssociationModule>(store_, config_, rng);
  generation_ = std::make_unique<GenerationModule>(store_, config_, rng);
}

void Model::copy_embeddings_to_association() {
  association_->word_embedding().value = generation_->word_embedding().value;
  association_->type_embedding().value = generation_->type_embedding().value;
}

void Model::round_to_float() {
  for (Parameter* p : store_.all()) {
    for (double& v : p->value.values()) v = static_cast<float>(v);
  }
}

void Model::save(const std::filesystem::path& path, std::uint32_t stage) const {
  BinaryWriter w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u64(config_.hash());
  w.u32(stage);
  const auto params = store_.all();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value.values()) w.f32(static_cast<float>(v));
  }
  w.finish();
}

std::uint32_t Model::load(const std::filesystem::path& path, std::uint32_t required_stage) {
  BinaryReader r(path);
  read_header(r, path);
  const std::uint64_t hash = r.u64();
  if (hash != config_.hash()) {
    throw DataError("checkpoint " + path.string() + " was written for a different model config");
  }
  const std::uint32_t stage = r.u32();
  if (required_stage != 0 && stage != required_stage) {
    throw DataError("checkpoint " + path.string() + " is from stage " + std::to_string(stage) +
                    ", expected stage " + std::to_string(required_stage));
  }
  const std::uint32_t count = r.u32();
  if (count != store_.all().size()) {
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                    std::to_string(store_.all().size()));
  }
  // Read everything before touching the model so a bad file leaves it intact.
  std::vector<std::pair<Parameter*, Tensor>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (!store_.contains(name)) throw DataError("checkpoint has unknown tensor " + name);
    Parameter& p = store_.get(name);
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != p.value.shape()) {
      throw DataError("tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                      shape_string(p.value.shape()));
    }
    Tensor t(shape);
    for (double& v : t.values()) v = r.f32();
    loaded.emplace_back(&p, std::move(t));
  }
  r.expect_end();
  for (auto& [p, t] : loaded) p->value = std::move(t);
  return stage;
}

std::uint32_t Model::checkpoint_stage(const std::filesystem::path& path) {
  BinaryReader r(path);
  read_header(r, path);
  r.u64();
  return r.u32();
}

}  // namespace qvad
