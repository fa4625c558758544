#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "teddy/augment.hpp"
#include "teddy/dataset.hpp"
#include "teddy/model.hpp"
#include "teddy/pool.hpp"

namespace teddy {

// Knobs of the synthetic-image optimization loop.
struct SynthesisConfig {
  Index iterations = 500;
  Index batch_size = 0;  // images per optimizer step; 0 = whole synthetic set
  Index ensemble_n = 3;  // teachers sampled per step
  double u = 1.0;        // classifier-prior weight: total = mean + var + u * ce
  double lr = 0.1;
  double beta1 = 0.5;  // adaptive-moment pair
  double beta2 = 0.9;
  LrSchedule lr_schedule = LrSchedule::cosine;
  InitMode init_mode = InitMode::noise;
  AugmentMode augment = AugmentMode::none;
  bool clamp_pixels = true;
  // Fidelity flag: draw one teacher subset per within-class image slot
  // instead of one per optimizer step.
  bool per_image_subsets = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossBreakdown {
  double mean_term = 0.0;
  double var_term = 0.0;
  double ce_term = 0.0;
  double total = 0.0;

  struct TeacherTerms {
    double mean_term = 0.0, var_term = 0.0, ce_term = 0.0, total = 0.0;
  };
  std::vector<TeacherTerms> per_teacher;
};

// One teacher's statistic-matching objective on an image batch:
//   sum_l ||mu_l(f(X)) - RM_l||_2 + sum_l ||var_l(f(X)) - RV_l||_2 + u * ce
// with the batch statistics taken at the pre-normalization batch-norm inputs.
// When image_grad is non-null it receives d total / d images.
LossBreakdown statistic_matching_loss(const Tensor& images, const std::vector<int>& hard_labels,
                                      const ModelSnapshot& teacher, double u,
                                      Tensor* image_grad = nullptr);

// Reusable evaluator bound to one teacher; the optimization loop holds one
// per pool entry so pass workspaces persist across iterations. The teacher
// must outlive the matcher.
class StatMatcher {
 public:
  explicit StatMatcher(const ModelSnapshot& teacher);
  ~StatMatcher();
  StatMatcher(StatMatcher&&) noexcept;
  StatMatcher& operator=(StatMatcher&&) noexcept;

  LossBreakdown evaluate(const Tensor& images, const std::vector<int>& hard_labels, double u,
                         Tensor* image_grad = nullptr);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct DistillResult {
  SyntheticDataset synth;
  std::vector<LossBreakdown> history;  // one aggregate entry per iteration
};

// Algorithm main loop: optimizes the pixels of `init` against randomly
// sampled teacher ensembles from the pool. Model parameters never change;
// hard labels never change; soft labels stay absent.
DistillResult distill(const PoolManifest& pool, const SyntheticDataset& init,
                      const SynthesisConfig& cfg);

// Convenience form that initializes from the dataset per cfg.init_mode.
DistillResult distill(const PoolManifest& pool, const LabeledDataset& ds, Index ipc,
                      const SynthesisConfig& cfg);

// Verification-only evaluation of the student-statistic objective: real-data
// statistics are recomputed per checkpoint instead of read from running
// buffers. Hard size caps keep this at toy scale.
inline constexpr Index kTrajectoryRealCap = 512;
inline constexpr Index kTrajectorySynthCap = 256;
double student_trajectory_loss(const Tensor& images, const std::vector<int>& hard_labels,
                               const std::vector<ModelSnapshot>& student_traj,
                               const LabeledDataset& ds, double u);

// Loss history on disk: one line per iteration, "iter mean_term var_term
// ce_term total", tab separated with a header row.
void save_loss_history(const std::vector<LossBreakdown>& history, const std::filesystem::path& path);
std::vector<LossBreakdown> load_loss_history(const std::filesystem::path& path);

}  // namespace teddy
