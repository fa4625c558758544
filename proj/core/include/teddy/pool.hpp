#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "teddy/model.hpp"

namespace teddy {

// Epoch-denominated by default; per-step stages exist for tiny datasets.
enum class StageUnit { epoch, step };

StageUnit parse_stage_unit(const std::string& s);
std::string stage_unit_name(StageUnit u);

struct PriorWindow {
  Index t_begin = 0;  // T_b
  Index t_end = 0;    // T_e
  Index stride = 1;   // m

  Index entry_count() const { return (t_end - t_begin) / stride + 1; }
};

struct PruneSpec {
  double target_flops_ratio = 0.66;  // in (0,1)
  Index finetune_steps = 0;
  std::string group_selection = "random";
  std::uint64_t seed = 0;
};

struct PoolEntry {
  std::string snapshot;  // path relative to the pool directory
  Index stage = 0;
  Index param_count = 0;
  Index flops = 0;
  std::string note;
  std::string checksum;
};

// Source of truth for a model pool on disk: directory with a `manifest` file
// plus one content-addressed checkpoint per entry.
struct PoolManifest {
  std::string strategy;  // "prior" | "post"
  std::vector<PoolEntry> entries;
  std::string base_model;  // checkpoint path relative to the pool directory
  std::optional<PriorWindow> window;
  std::optional<PruneSpec> prune_spec;
  std::filesystem::path dir;  // location on disk; not serialized

  Index size() const { return static_cast<Index>(entries.size()); }
  void validate() const;
};

void save_pool_manifest(const PoolManifest& pool);
PoolManifest load_pool_manifest(const std::filesystem::path& dir);

ModelSnapshot load_pool_entry(const PoolManifest& pool, Index index);

struct PriorPoolOptions {
  StageUnit stage_unit = StageUnit::epoch;
  Index max_stage = 200;  // refuses windows beyond this horizon
};

// Trains one trajectory from `base` and caches a snapshot at every stage
// T_b, T_b + m, ..., T_e under `dir`.
PoolManifest generate_prior_pool(const ModelSnapshot& base, const LabeledDataset& ds,
                                 const PriorWindow& window, const OptimizerSettings& hp,
                                 const std::filesystem::path& dir,
                                 const PriorPoolOptions& options = {});

// Produces `count` structurally pruned variants of a trained base, each
// briefly finetuned; channel removal respects inter-layer dependencies.
PoolManifest generate_post_pool(const ModelSnapshot& base, const LabeledDataset& ds,
                                const PruneSpec& spec, Index count, const OptimizerSettings& hp,
                                const std::filesystem::path& dir, bool strict = true);

// Uniform sample of n entries without replacement; snapshots are read from
// disk at call time.
std::vector<ModelSnapshot> sample_teachers(const PoolManifest& pool, Index n, std::uint64_t seed);
std::vector<Index> sample_teacher_indices(const PoolManifest& pool, Index n, std::uint64_t seed);

// Mean KL(softmax(logits_a) || softmax(logits_b)) over the probe set;
// optionally symmetrized.
double kl_model_distance(const ModelSnapshot& a, const ModelSnapshot& b, const LabeledDataset& probe,
                         bool symmetrized = false);

// Dependency-aware structural pruning. Exposed for tests; generate_post_pool
// drives it. Removes random channel groups until flops <= ratio * base flops.
ModelSnapshot prune_to_ratio(const ModelSnapshot& base, double target_flops_ratio, std::uint64_t seed);

}  // namespace teddy
