#include "teddy/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "teddy/container.hpp"
#include "teddy/network.hpp"
#include "teddy/rng.hpp"

namespace teddy {

using nlohmann::json;

SoftLabelMode parse_soft_label_mode(const std::string& s) {
  if (s == "none") return SoftLabelMode::none;
  if (s == "static") return SoftLabelMode::static_labels;
  if (s == "on-the-fly") return SoftLabelMode::on_the_fly;
  fail(ErrorCode::unknown_mode, "soft_label_mode must be none, static, or on-the-fly; got " + s);
}

std::string soft_label_mode_name(SoftLabelMode mode) {
  switch (mode) {
    case SoftLabelMode::none: return "none";
    case SoftLabelMode::static_labels: return "static";
    case SoftLabelMode::on_the_fly: return "on-the-fly";
  }
  return "?";
}

std::string EvalSettings::config_hash() const {
  std::ostringstream os;
  os << epochs << "|" << batch_size << "|" << lr << "|" << weight_decay << "|" << beta1 << "|" << beta2
     << "|" << lr_schedule_name(schedule) << "|" << augment_mode_name(augment) << "|" << cutmix << "|"
     << bn_momentum;
  return checksum_hex(fnv1a64(os.str()));
}

void EvalReport::finalize() {
  require(seeds.size() == test_accuracies.size(), ErrorCode::invalid_argument,
          "seed and accuracy counts differ");
  const double n = static_cast<double>(test_accuracies.size());
  mean = std::accumulate(test_accuracies.begin(), test_accuracies.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : test_accuracies) ss += (a - mean) * (a - mean);
  std_dev = std::sqrt(ss / n);
}

// ------------------------------------------------------------------ relabel

SyntheticDataset relabel(const SyntheticDataset& synth, const PoolManifest& pool, AugmentMode augment,
                         std::uint64_t seed) {
  synth.validate();
  pool.validate();
  require(synth.size() > 0, ErrorCode::invalid_argument, "synthetic set is empty");

  Tensor augmented = augment_batch(synth.images, augment, derive_seed(seed, "relabel-augment"));

  const Index N = synth.size();
  Tensor soft({N, synth.class_count});
  for (Index i = 0; i < pool.size(); ++i) {
    ModelSnapshot model = load_pool_entry(pool, i);
    require(model.class_count == synth.class_count, ErrorCode::class_count_mismatch,
            "pool model classifies " + std::to_string(model.class_count) + " classes, synthetic set has " +
                std::to_string(synth.class_count));
    Tensor p = softmax_rows(forward_logits(model, augmented));
    soft.vec() += p.vec();
  }
  soft.vec() /= static_cast<double>(pool.size());

  SyntheticDataset out = synth;
  out.soft_labels = std::move(soft);
  out.validate();
  return out;
}

// ----------------------------------------------------------------- evaluate

namespace {

struct CutMixPlan {
  std::vector<Index> partner;  // per image
  Index y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  double lambda_adj = 1.0;  // target weight of the base image
};

CutMixPlan make_cutmix_plan(Rng& rng, Index batch, Index height, Index width) {
  CutMixPlan plan;
  plan.partner.resize(static_cast<std::size_t>(batch));
  std::iota(plan.partner.begin(), plan.partner.end(), 0);
  std::shuffle(plan.partner.begin(), plan.partner.end(), rng);

  double lambda = uniform(rng);
  double cut = std::sqrt(1.0 - lambda);
  Index cut_h = static_cast<Index>(std::floor(static_cast<double>(height) * cut));
  Index cut_w = static_cast<Index>(std::floor(static_cast<double>(width) * cut));
  Index cy = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(height)));
  Index cx = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(width)));
  plan.y0 = std::clamp<Index>(cy - cut_h / 2, 0, height);
  plan.y1 = std::clamp<Index>(cy + cut_h / 2, 0, height);
  plan.x0 = std::clamp<Index>(cx - cut_w / 2, 0, width);
  plan.x1 = std::clamp<Index>(cx + cut_w / 2, 0, width);
  double box = static_cast<double>((plan.y1 - plan.y0) * (plan.x1 - plan.x0));
  plan.lambda_adj = 1.0 - box / static_cast<double>(height * width);
  return plan;
}

void apply_cutmix(Tensor& batch, const CutMixPlan& plan) {
  const Index B = batch.shape[0], C = batch.shape[1], W = batch.shape[3];
  Tensor source = batch;
  for (Index b = 0; b < B; ++b) {
    Index partner = plan.partner[static_cast<std::size_t>(b)];
    for (Index c = 0; c < C; ++c)
      for (Index y = plan.y0; y < plan.y1; ++y) {
        const double* src = source.ptr() + ((partner * C + c) * batch.shape[2] + y) * W;
        double* dst = batch.ptr() + ((b * C + c) * batch.shape[2] + y) * W;
        for (Index x = plan.x0; x < plan.x1; ++x) dst[x] = src[x];
      }
  }
}

Tensor pool_mean_softmax(const std::vector<ModelSnapshot>& pool_models, const Tensor& batch) {
  Tensor soft({batch.shape[0], pool_models.front().class_count});
  for (const auto& model : pool_models) {
    Tensor p = softmax_rows(forward_logits(model, batch));
    soft.vec() += p.vec();
  }
  soft.vec() /= static_cast<double>(pool_models.size());
  return soft;
}

double evaluate_one_seed(const SyntheticDataset& synth, const std::string& arch_id,
                         const LabeledDataset& test, std::uint64_t seed, const EvalSettings& hp,
                         SoftLabelMode mode, const std::vector<ModelSnapshot>* pool_models) {
  ModelSnapshot model = build_model(arch_id, synth.class_count, derive_seed(seed, "eval-init"));

  const Index N = synth.size();
  const Index B = std::max<Index>(2, std::min(hp.batch_size, N));
  const Index steps_per_epoch = std::max<Index>(1, N / B);
  const Index total_steps = hp.epochs * steps_per_epoch;
  const Index C = synth.images.shape[1], H = synth.images.shape[2], W = synth.images.shape[3];
  const Index per_image = C * H * W;

  Tensor flat = model.trainable_params_flat();
  Tensor m1({flat.numel()}), m2({flat.numel()});
  constexpr double kAdamEps = 1e-8;

  std::vector<Index> order(static_cast<std::size_t>(N));
  Network net(model);
  PassConfig cfg;
  cfg.bn_batch_mode = true;
  cfg.update_running = true;
  cfg.bn_momentum = hp.bn_momentum;

  Tensor batch({B, C, H, W});
  std::vector<int> batch_hard(static_cast<std::size_t>(B));
  Tensor batch_soft({B, synth.class_count});

  for (Index step = 0; step < total_steps; ++step) {
    const Index epoch = step / steps_per_epoch;
    const Index pos = step % steps_per_epoch;
    if (pos == 0) {
      Rng rng = make_rng(derive_seed(seed, "eval-epoch", static_cast<std::uint64_t>(epoch)));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }

    for (Index i = 0; i < B; ++i) {
      Index src = order[static_cast<std::size_t>((pos * B + i) % N)];
      std::copy_n(synth.images.ptr() + src * per_image, static_cast<std::size_t>(per_image),
                  batch.ptr() + i * per_image);
      batch_hard[static_cast<std::size_t>(i)] = synth.hard_labels[static_cast<std::size_t>(src)];
      if (mode == SoftLabelMode::static_labels)
        for (Index c = 0; c < synth.class_count; ++c)
          batch_soft.at2(i, c) = synth.soft_labels->at2(src, c);
    }

    if (hp.augment != AugmentMode::none) {
      Tensor augmented = augment_batch(batch, hp.augment,
                                       derive_seed(seed, "eval-augment", static_cast<std::uint64_t>(step)));
      batch = std::move(augmented);
    }

    // Targets per soft-label mode, optionally CutMix-blended.
    Tensor targets({B, synth.class_count});
    bool soft_targets = mode != SoftLabelMode::none;
    if (mode == SoftLabelMode::static_labels) targets = batch_soft;
    if (mode == SoftLabelMode::none)
      for (Index i = 0; i < B; ++i) targets.at2(i, batch_hard[static_cast<std::size_t>(i)]) = 1.0;

    if (hp.cutmix) {
      Rng rng = make_rng(derive_seed(seed, "eval-cutmix", static_cast<std::uint64_t>(step)));
      CutMixPlan plan = make_cutmix_plan(rng, B, H, W);
      apply_cutmix(batch, plan);
      if (mode != SoftLabelMode::on_the_fly) {
        Tensor mixed({B, synth.class_count});
        for (Index i = 0; i < B; ++i) {
          Index partner = plan.partner[static_cast<std::size_t>(i)];
          for (Index c = 0; c < synth.class_count; ++c)
            mixed.at2(i, c) = plan.lambda_adj * targets.at2(i, c) +
                              (1.0 - plan.lambda_adj) * targets.at2(partner, c);
        }
        targets = std::move(mixed);
        soft_targets = true;
      }
    }
    if (mode == SoftLabelMode::on_the_fly) {
      targets = pool_mean_softmax(*pool_models, batch);
      soft_targets = true;
    }

    const Tensor& logits = net.forward(batch, cfg);
    Tensor dlogits;
    if (soft_targets) cross_entropy_soft(logits, targets, &dlogits);
    else cross_entropy(logits, batch_hard, &dlogits);
    net.backward(dlogits, false, true);

    double lr = hp.lr;
    if (hp.schedule == LrSchedule::cosine)
      lr = hp.lr * 0.5 *
           (1.0 + std::cos(3.14159265358979 * static_cast<double>(step) / static_cast<double>(total_steps)));

    // Decoupled-weight-decay adaptive-moment update.
    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(hp.beta1, t);
    const double bc2 = 1.0 - std::pow(hp.beta2, t);
    Index off = 0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      if (!model.schema.layers[li].trainable) continue;
      LayerState& l = model.layers[li];
      const ParamGrads& pg = net.param_grads()[li];
      auto update = [&](Tensor& param, const Tensor& grad) {
        for (Index i = 0; i < param.numel(); ++i) {
          double g = grad.numel() ? grad[i] : 0.0;
          double& mi = m1[off + i];
          double& vi = m2[off + i];
          mi = hp.beta1 * mi + (1.0 - hp.beta1) * g;
          vi = hp.beta2 * vi + (1.0 - hp.beta2) * g * g;
          param[i] -= lr * ((mi / bc1) / (std::sqrt(vi / bc2) + kAdamEps) + hp.weight_decay * param[i]);
        }
        off += param.numel();
      };
      update(l.weight, pg.weight);
      update(l.bias, pg.bias);
      update(l.gamma, pg.gamma);
      update(l.beta, pg.beta);
    }
  }

  return accuracy(model, test);
}

}  // namespace

EvalReport evaluate(const SyntheticDataset& synth, const std::string& arch_id,
                    const LabeledDataset& test, const std::vector<std::uint64_t>& seeds,
                    const EvalSettings& hp, SoftLabelMode mode, const PoolManifest* pool) {
  synth.validate();
  test.validate();
  require(!seeds.empty(), ErrorCode::invalid_argument, "need at least one evaluation seed");
  if (mode == SoftLabelMode::static_labels)
    require(synth.soft_labels.has_value(), ErrorCode::invalid_argument,
            "static soft-label mode requires soft labels; run relabel first");
  if (mode == SoftLabelMode::on_the_fly)
    require(pool != nullptr, ErrorCode::invalid_argument, "on-the-fly mode requires a model pool");

  std::vector<ModelSnapshot> pool_models;
  if (mode == SoftLabelMode::on_the_fly) {
    for (Index i = 0; i < pool->size(); ++i) pool_models.push_back(load_pool_entry(*pool, i));
    for (const auto& m : pool_models)
      require(m.class_count == synth.class_count, ErrorCode::class_count_mismatch,
              "pool and synthetic set disagree on class count");
  }

  EvalReport report;
  report.arch_id = arch_id;
  report.soft_label_mode = mode;
  report.train_config_hash = hp.config_hash();
  for (std::uint64_t seed : seeds) {
    report.seeds.push_back(seed);
    report.test_accuracies.push_back(evaluate_one_seed(synth, arch_id, test, seed, hp, mode,
                                                       pool_models.empty() ? nullptr : &pool_models));
  }
  report.finalize();
  return report;
}

std::vector<EvalReport> cross_arch_evaluate(const SyntheticDataset& synth,
                                            const std::vector<std::string>& arch_ids,
                                            const LabeledDataset& test,
                                            const std::vector<std::uint64_t>& seeds,
                                            const EvalSettings& hp, SoftLabelMode mode,
                                            const PoolManifest* pool) {
  require(!arch_ids.empty(), ErrorCode::invalid_argument, "architecture list is empty");
  std::vector<EvalReport> reports;
  for (const auto& arch : arch_ids) reports.push_back(evaluate(synth, arch, test, seeds, hp, mode, pool));
  return reports;
}

EvalReport random_baseline(const LabeledDataset& ds, Index ipc, const std::string& arch_id,
                           const LabeledDataset& test, const std::vector<std::uint64_t>& seeds,
                           const EvalSettings& hp) {
  require(!seeds.empty(), ErrorCode::invalid_argument, "need at least one evaluation seed");
  EvalReport report;
  report.arch_id = arch_id;
  report.soft_label_mode = SoftLabelMode::none;
  report.train_config_hash = hp.config_hash();
  for (std::uint64_t seed : seeds) {
    SyntheticDataset coreset =
        init_synthetic(ds, static_cast<int>(ipc), InitMode::real, derive_seed(seed, "random-baseline"));
    report.seeds.push_back(seed);
    report.test_accuracies.push_back(
        evaluate_one_seed(coreset, arch_id, test, seed, hp, SoftLabelMode::none, nullptr));
  }
  report.finalize();
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["arch_id"] = report.arch_id;
  j["seeds"] = report.seeds;
  j["test_accuracies"] = report.test_accuracies;
  j["mean"] = report.mean;
  j["std"] = report.std_dev;
  j["train_config_hash"] = report.train_config_hash;
  j["soft_label_mode"] = soft_label_mode_name(report.soft_label_mode);
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  json j = json::parse(text);
  EvalReport report;
  report.arch_id = j.at("arch_id").get<std::string>();
  report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  report.test_accuracies = j.at("test_accuracies").get<std::vector<double>>();
  report.train_config_hash = j.value("train_config_hash", "");
  report.soft_label_mode = parse_soft_label_mode(j.value("soft_label_mode", "none"));
  report.finalize();
  return report;
}

}  // namespace teddy
