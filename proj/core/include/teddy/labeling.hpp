#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "teddy/augment.hpp"
#include "teddy/dataset.hpp"
#include "teddy/model.hpp"
#include "teddy/pool.hpp"

namespace teddy {

enum class SoftLabelMode { none, static_labels, on_the_fly };

SoftLabelMode parse_soft_label_mode(const std::string& s);
std::string soft_label_mode_name(SoftLabelMode mode);

// Training settings for evaluation runs: decoupled-weight-decay
// adaptive-moment optimizer with a cosine schedule by default.
struct EvalSettings {
  Index epochs = 200;
  Index batch_size = 100;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  LrSchedule schedule = LrSchedule::cosine;
  AugmentMode augment = AugmentMode::none;
  bool cutmix = false;  // CutMix batch mixing during evaluation training
  double bn_momentum = 0.1;

  std::string config_hash() const;
};

struct EvalReport {
  std::string arch_id;
  std::vector<std::uint64_t> seeds;
  std::vector<double> test_accuracies;
  double mean = 0.0;
  double std_dev = 0.0;  // population convention
  std::string train_config_hash;
  SoftLabelMode soft_label_mode = SoftLabelMode::none;

  void finalize();  // recomputes mean/std from test_accuracies
};

// Ensemble soft relabeling: soft_labels[i] = mean over ALL pool models of
// softmax(logits on the augmented image i). Images are returned unchanged.
SyntheticDataset relabel(const SyntheticDataset& synth, const PoolManifest& pool, AugmentMode augment,
                         std::uint64_t seed);

// Trains one fresh model per seed on the synthetic set and reports test
// accuracy. Static mode needs synth.soft_labels; on-the-fly mode queries the
// pool for targets every step on the CutMix-augmented batch.
EvalReport evaluate(const SyntheticDataset& synth, const std::string& arch_id,
                    const LabeledDataset& test, const std::vector<std::uint64_t>& seeds,
                    const EvalSettings& hp, SoftLabelMode mode,
                    const PoolManifest* pool = nullptr);

std::vector<EvalReport> cross_arch_evaluate(const SyntheticDataset& synth,
                                            const std::vector<std::string>& arch_ids,
                                            const LabeledDataset& test,
                                            const std::vector<std::uint64_t>& seeds,
                                            const EvalSettings& hp, SoftLabelMode mode,
                                            const PoolManifest* pool = nullptr);

// Coreset control: per seed, picks ipc random real images per class and
// evaluates them exactly like a synthetic set.
EvalReport random_baseline(const LabeledDataset& ds, Index ipc, const std::string& arch_id,
                           const LabeledDataset& test, const std::vector<std::uint64_t>& seeds,
                           const EvalSettings& hp);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

}  // namespace teddy
