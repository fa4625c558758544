#include "teddy/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "teddy/network.hpp"
#include "teddy/rng.hpp"

namespace teddy {

void SynthesisConfig::validate() const {
  require(iterations >= 1, ErrorCode::invalid_argument, "iterations must be >= 1");
  require(ensemble_n >= 1, ErrorCode::invalid_argument, "ensemble_n must be >= 1");
  require(u >= 0.0, ErrorCode::invalid_argument, "u must be >= 0");
  require(lr >= 0.0, ErrorCode::invalid_argument, "lr must be >= 0");
}

struct StatMatcher::Impl {
  const ModelSnapshot* teacher;
  Network net;
  explicit Impl(const ModelSnapshot& t) : teacher(&t), net(t) {}
};

StatMatcher::StatMatcher(const ModelSnapshot& teacher) : impl_(std::make_unique<Impl>(teacher)) {}
StatMatcher::~StatMatcher() = default;
StatMatcher::StatMatcher(StatMatcher&&) noexcept = default;
StatMatcher& StatMatcher::operator=(StatMatcher&&) noexcept = default;

LossBreakdown StatMatcher::evaluate(const Tensor& images, const std::vector<int>& hard_labels,
                                    double u, Tensor* image_grad) {
  require(images.rank() == 4 && images.shape[0] >= 2, ErrorCode::invalid_argument,
          "statistic matching needs a batch of at least 2 images");
  require(static_cast<Index>(hard_labels.size()) == images.shape[0], ErrorCode::shape_mismatch,
          "label count does not match batch");

  PassConfig cfg;
  cfg.bn_batch_mode = false;  // teacher logits are inference logits
  cfg.stat_match = true;
  cfg.capture_stats = true;
  cfg.check_finite = true;
  const Tensor& logits = impl_->net.forward(images, cfg);

  LossBreakdown out;
  out.mean_term = impl_->net.stat_mean_term();
  out.var_term = impl_->net.stat_var_term();

  Tensor dlogits;
  out.ce_term = cross_entropy(logits, hard_labels, image_grad ? &dlogits : nullptr);
  out.total = out.mean_term + out.var_term + u * out.ce_term;

  if (image_grad) {
    dlogits.vec() *= u;
    impl_->net.backward(dlogits, true, false);
    *image_grad = impl_->net.input_grad();
  }
  return out;
}

LossBreakdown statistic_matching_loss(const Tensor& images, const std::vector<int>& hard_labels,
                                      const ModelSnapshot& teacher, double u, Tensor* image_grad) {
  StatMatcher matcher(teacher);
  return matcher.evaluate(images, hard_labels, u, image_grad);
}

namespace {

LossBreakdown::TeacherTerms to_terms(const LossBreakdown& b) {
  return {b.mean_term, b.var_term, b.ce_term, b.total};
}

// Aggregates per-teacher losses by arithmetic mean, so u keeps its meaning
// independent of the ensemble size.
LossBreakdown aggregate(const std::vector<LossBreakdown>& parts) {
  LossBreakdown out;
  for (const auto& p : parts) {
    out.mean_term += p.mean_term;
    out.var_term += p.var_term;
    out.ce_term += p.ce_term;
    out.total += p.total;
    out.per_teacher.push_back(to_terms(p));
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  out.mean_term *= inv;
  out.var_term *= inv;
  out.ce_term *= inv;
  out.total *= inv;
  return out;
}

}  // namespace

DistillResult distill(const PoolManifest& pool, const SyntheticDataset& init,
                      const SynthesisConfig& cfg) {
  cfg.validate();
  init.validate();
  pool.validate();
  require(cfg.ensemble_n <= pool.size(), ErrorCode::n_exceeds_pool,
          "ensemble_n exceeds the pool size");

  // Teachers are read once; their snapshots are never written back. Each
  // keeps its own matcher so pass workspaces persist across iterations.
  std::vector<ModelSnapshot> teachers;
  for (Index i = 0; i < pool.size(); ++i) teachers.push_back(load_pool_entry(pool, i));
  for (const auto& t : teachers)
    require(t.class_count == init.class_count, ErrorCode::class_count_mismatch,
            "pool models classify " + std::to_string(t.class_count) + " classes, synthetic set has " +
                std::to_string(init.class_count));
  std::vector<StatMatcher> matchers;
  matchers.reserve(teachers.size());
  for (const auto& t : teachers) matchers.emplace_back(t);

  DistillResult result;
  result.synth = init;
  result.synth.soft_labels.reset();
  Tensor& images = result.synth.images;

  const Index N = images.shape[0];
  const Index B = (cfg.batch_size <= 0 || cfg.batch_size >= N) ? N : std::max<Index>(2, cfg.batch_size);
  const Index pixels_per_image = images.numel() / N;

  // Adaptive-moment state over the full pixel buffer; shared step counter.
  Tensor m1(images.shape), m2(images.shape);
  constexpr double kAdamEps = 1e-8;

  std::vector<Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  const Index steps_per_cycle = std::max<Index>(1, N / B);

  double initial_total = -1.0;

  for (Index step = 0; step < cfg.iterations; ++step) {
    if (B < N && step % steps_per_cycle == 0) {
      Rng rng = make_rng(derive_seed(cfg.seed, "batch-order", static_cast<std::uint64_t>(step / steps_per_cycle)));
      std::shuffle(order.begin(), order.end(), rng);
    }

    // Gather the step's batch.
    std::vector<Index> batch_idx;
    if (B == N) {
      batch_idx = order;
    } else {
      const Index pos = step % steps_per_cycle;
      for (Index i = 0; i < B; ++i) batch_idx.push_back(order[static_cast<std::size_t>((pos * B + i) % N)]);
    }
    Tensor batch({static_cast<Index>(batch_idx.size()), images.shape[1], images.shape[2], images.shape[3]});
    std::vector<int> batch_labels;
    for (std::size_t i = 0; i < batch_idx.size(); ++i) {
      std::copy_n(images.ptr() + batch_idx[i] * pixels_per_image, static_cast<std::size_t>(pixels_per_image),
                  batch.ptr() + static_cast<Index>(i) * pixels_per_image);
      batch_labels.push_back(result.synth.hard_labels[static_cast<std::size_t>(batch_idx[i])]);
    }

    AugmentPlan plan = make_augment_plan(cfg.augment, derive_seed(cfg.seed, "augment-step", static_cast<std::uint64_t>(step)),
                                         batch.shape[0], batch.shape[1]);
    Tensor augmented = apply_augment(batch, plan);

    Tensor grad(batch.shape);
    std::vector<LossBreakdown> parts;

    if (!cfg.per_image_subsets) {
      auto picked = sample_teacher_indices(pool, cfg.ensemble_n,
                                           derive_seed(cfg.seed, "step-ensemble", static_cast<std::uint64_t>(step)));
      for (Index ti : picked) {
        Tensor g;
        parts.push_back(matchers[static_cast<std::size_t>(ti)].evaluate(augmented, batch_labels, cfg.u, &g));
        grad.vec() += g.vec();
      }
      grad.vec() /= static_cast<double>(picked.size());
    } else {
      // One subset per within-class slot; the slot group holds one image per
      // class, and its loss is averaged over the slot's teachers.
      std::map<Index, std::vector<Index>> slots;  // slot -> positions within batch
      for (std::size_t i = 0; i < batch_idx.size(); ++i)
        slots[batch_idx[i] % result.synth.ipc].push_back(static_cast<Index>(i));

      for (const auto& [slot, positions] : slots) {
        Tensor group({static_cast<Index>(positions.size()), batch.shape[1], batch.shape[2], batch.shape[3]});
        std::vector<int> group_labels;
        for (std::size_t i = 0; i < positions.size(); ++i) {
          std::copy_n(augmented.ptr() + positions[i] * pixels_per_image,
                      static_cast<std::size_t>(pixels_per_image),
                      group.ptr() + static_cast<Index>(i) * pixels_per_image);
          group_labels.push_back(batch_labels[static_cast<std::size_t>(positions[i])]);
        }
        auto picked = sample_teacher_indices(
            pool, cfg.ensemble_n,
            derive_seed(cfg.seed, "slot-ensemble", static_cast<std::uint64_t>(step) * 100003 +
                                                        static_cast<std::uint64_t>(slot)));
        Tensor group_grad(group.shape);
        std::vector<LossBreakdown> group_parts;
        for (Index ti : picked) {
          Tensor g;
          group_parts.push_back(
              matchers[static_cast<std::size_t>(ti)].evaluate(group, group_labels, cfg.u, &g));
          group_grad.vec() += g.vec();
        }
        group_grad.vec() /= static_cast<double>(picked.size());
        for (std::size_t i = 0; i < positions.size(); ++i)
          std::copy_n(group_grad.ptr() + static_cast<Index>(i) * pixels_per_image,
                      static_cast<std::size_t>(pixels_per_image),
                      grad.ptr() + positions[i] * pixels_per_image);
        for (auto& p : group_parts) parts.push_back(p);
      }
    }

    LossBreakdown entry = aggregate(parts);
    if (initial_total < 0.0) initial_total = std::max(entry.total, 1e-12);
    if (entry.total > 1e3 * initial_total)
      fail(ErrorCode::divergence, "loss exceeded 1000x its initial value at iteration " +
                                      std::to_string(step) + "; aborting");
    result.history.push_back(entry);

    // Map the gradient back through the augmentation and update pixels.
    Tensor batch_grad = backprop_augment(grad, plan);

    double lr = cfg.lr;
    if (cfg.lr_schedule == LrSchedule::cosine)
      lr = cfg.lr * 0.5 *
           (1.0 + std::cos(3.14159265358979 * static_cast<double>(step) /
                           static_cast<double>(cfg.iterations)));

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < batch_idx.size(); ++i) {
      double* px = images.ptr() + batch_idx[i] * pixels_per_image;
      double* m = m1.ptr() + batch_idx[i] * pixels_per_image;
      double* v = m2.ptr() + batch_idx[i] * pixels_per_image;
      const double* g = batch_grad.ptr() + static_cast<Index>(i) * pixels_per_image;
      for (Index p = 0; p < pixels_per_image; ++p) {
        m[p] = cfg.beta1 * m[p] + (1.0 - cfg.beta1) * g[p];
        v[p] = cfg.beta2 * v[p] + (1.0 - cfg.beta2) * g[p] * g[p];
        px[p] -= lr * (m[p] / bc1) / (std::sqrt(v[p] / bc2) + kAdamEps);
        if (cfg.clamp_pixels) px[p] = std::clamp(px[p], 0.0, 1.0);
      }
    }
  }

  result.synth.validate();
  return result;
}

DistillResult distill(const PoolManifest& pool, const LabeledDataset& ds, Index ipc,
                      const SynthesisConfig& cfg) {
  SyntheticDataset init = init_synthetic(ds, static_cast<int>(ipc), cfg.init_mode,
                                         derive_seed(cfg.seed, "init"));
  return distill(pool, init, cfg);
}

double student_trajectory_loss(const Tensor& images, const std::vector<int>& hard_labels,
                               const std::vector<ModelSnapshot>& student_traj,
                               const LabeledDataset& ds, double u) {
  require(!student_traj.empty(), ErrorCode::invalid_argument, "student trajectory is empty");
  require(images.rank() == 4 && images.shape[0] >= 2, ErrorCode::invalid_argument,
          "need a synthetic batch of at least 2 images");
  if (ds.size() > kTrajectoryRealCap)
    fail(ErrorCode::size_cap_exceeded, "real set exceeds the verification cap of " +
                                           std::to_string(kTrajectoryRealCap) + " images");
  if (images.shape[0] > kTrajectorySynthCap)
    fail(ErrorCode::size_cap_exceeded, "synthetic set exceeds the verification cap of " +
                                           std::to_string(kTrajectorySynthCap) + " images");

  double total = 0.0;
  for (const ModelSnapshot& checkpoint : student_traj) {
    // Real-data statistics recomputed at this checkpoint.
    ForwardResult real = forward_with_stats(checkpoint, ds.images);
    std::vector<Tensor> target_means, target_vars;
    for (auto& ls : real.stats.per_layer) {
      target_means.push_back(ls.mean);
      target_vars.push_back(ls.variance);
    }

    Network net(checkpoint);
    PassConfig cfg;
    cfg.stat_match = true;
    cfg.capture_stats = true;
    cfg.target_means = &target_means;
    cfg.target_vars = &target_vars;
    const Tensor& logits = net.forward(images, cfg);
    total += net.stat_mean_term() + net.stat_var_term() + u * cross_entropy(logits, hard_labels);
  }
  return total;
}

void save_loss_history(const std::vector<LossBreakdown>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  require(f.good(), ErrorCode::io_failure, "cannot write loss history: " + path.string());
  f << "iter\tmean_term\tvar_term\tce_term\ttotal\n";
  f.precision(12);
  for (std::size_t i = 0; i < history.size(); ++i)
    f << i << "\t" << history[i].mean_term << "\t" << history[i].var_term << "\t" << history[i].ce_term
      << "\t" << history[i].total << "\n";
}

std::vector<LossBreakdown> load_loss_history(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f.good()) fail(ErrorCode::missing_files, path.string());
  std::vector<LossBreakdown> history;
  std::string header;
  std::getline(f, header);
  std::size_t iter;
  LossBreakdown b;
  while (f >> iter >> b.mean_term >> b.var_term >> b.ce_term >> b.total) history.push_back(b);
  return history;
}

}  // namespace teddy
