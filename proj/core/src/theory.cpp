#include "teddy/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "teddy/container.hpp"
#include "teddy/network.hpp"
#include "teddy/rng.hpp"
#include "teddy/synthesis.hpp"

namespace teddy {

CheckResult make_check(const std::string& id, const std::string& digest, double lhs, double rhs,
                       const std::string& relation, double tolerance, const std::string& detail) {
  CheckResult r;
  r.check_id = id;
  r.inputs_digest = digest;
  r.lhs = lhs;
  r.rhs = rhs;
  r.relation = relation;
  r.tolerance = tolerance;
  r.detail = detail;
  if (relation == "<=") r.passed = lhs <= rhs + tolerance;
  else if (relation == "~") r.passed = std::abs(lhs - rhs) <= tolerance;
  else if (relation == "ratio") r.passed = std::abs(lhs / rhs - 1.0) <= tolerance;
  else fail(ErrorCode::invalid_argument, "unknown check relation " + relation);
  return r;
}

namespace {

std::string digest_tensors(std::initializer_list<const Tensor*> tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : tensors) h = fnv1a64(t->data.data(), t->data.size() * sizeof(double), h);
  return checksum_hex(h).substr(0, 12);
}

// Input gradient of the schema loss at explicit flat parameters.
Tensor input_grad_at(const ModelSnapshot& model, const Tensor& flat, const Tensor& images,
                     const std::vector<int>& labels) {
  ModelSnapshot work = model;
  work.set_trainable_params_flat(flat);
  Network net(work);
  PassConfig cfg;
  cfg.bn_batch_mode = work.bn_layer_count() > 0;
  const Tensor& logits = net.forward(images, cfg);
  Tensor dlogits;
  loss_by_kind(work.schema.loss, logits, labels, &dlogits);
  net.backward(dlogits, true, false);
  return net.input_grad();
}

LossGrad loss_grad_at(const ModelSnapshot& model, const Tensor& flat, const Tensor& images,
                      const std::vector<int>& labels) {
  ModelSnapshot work = model;
  work.set_trainable_params_flat(flat);
  return loss_and_param_grad(work, images, labels);
}

double loss_at(const ModelSnapshot& model, const Tensor& flat, const Tensor& images,
               const std::vector<int>& labels) {
  ModelSnapshot work = model;
  work.set_trainable_params_flat(flat);
  return dataset_loss(work, images, labels);
}

}  // namespace

// ------------------------------------------------------------ Taylor checks

TaylorComponents taylor_residual(const ModelSnapshot& model, const SyntheticDataset& grad_source,
                                 const LabeledDataset& eval_ds, double alpha) {
  require(alpha >= 0.0, ErrorCode::invalid_argument, "alpha must be >= 0");

  Tensor theta = model.trainable_params_flat();
  LossGrad gs = loss_grad_at(model, theta, grad_source.images, grad_source.hard_labels);
  LossGrad gt = loss_grad_at(model, theta, eval_ds.images, eval_ds.labels);
  require(std::isfinite(gs.loss) && std::isfinite(gt.loss), ErrorCode::nan_in_activation,
          "non-finite loss in taylor residual");

  Tensor stepped = theta;
  stepped.vec() -= alpha * gs.grad.vec();

  TaylorComponents out;
  out.loss_base = gt.loss;
  out.dot_term = dot(gt.grad, gs.grad);
  out.loss_after = loss_at(model, stepped, eval_ds.images, eval_ds.labels);
  require(std::isfinite(out.loss_after), ErrorCode::nan_in_activation,
          "non-finite loss after gradient step");
  out.residual = std::abs(out.loss_after - (out.loss_base - alpha * out.dot_term));
  return out;
}

double multi_step_residual(const ModelSnapshot& model, const SyntheticDataset& synth,
                           const LabeledDataset& eval_ds, double alpha, Index m) {
  require(m >= 1, ErrorCode::invalid_argument, "m must be >= 1");

  Tensor theta = model.trainable_params_flat();
  LossGrad gt = loss_grad_at(model, theta, eval_ds.images, eval_ds.labels);

  Tensor current = theta;
  Tensor grad_sum({theta.numel()});
  for (Index i = 0; i < m; ++i) {
    LossGrad gs = loss_grad_at(model, current, synth.images, synth.hard_labels);
    require(std::isfinite(gs.loss), ErrorCode::nan_in_activation, "non-finite synthetic loss");
    grad_sum.vec() += gs.grad.vec();
    current.vec() -= alpha * gs.grad.vec();
  }

  double loss_end = loss_at(model, current, eval_ds.images, eval_ds.labels);
  require(std::isfinite(loss_end), ErrorCode::nan_in_activation, "non-finite loss after steps");
  return std::abs(loss_end - (gt.loss - alpha * dot(grad_sum, gt.grad)));
}

// -------------------------------------------------- feature-space reductions

CheckResult gradient_statistic_bound(const Tensor& images_t, const Tensor& targets_t,
                                     const Tensor& images_s, const Tensor& targets_s,
                                     const ModelSnapshot& probe) {
  require(probe.schema.loss == LossKind::mse, ErrorCode::invalid_argument,
          "probe must be a linear-head model");

  const Tensor ft = feature_embedding(probe, images_t);
  const Tensor fs = feature_embedding(probe, images_s);
  const Index fd = ft.shape[1], c = targets_t.shape[1];
  require(fs.shape[1] == fd, ErrorCode::shape_mismatch, "feature dims disagree");
  require(targets_s.shape[1] == c, ErrorCode::shape_mismatch, "target dims disagree");

  // Head weight is stored [c, fd]; the bound uses W = weight^T, [fd, c].
  const LayerState* head = nullptr;
  for (std::size_t li = probe.layers.size(); li-- > 0;)
    if (probe.schema.layers[li].kind == LayerKind::linear && probe.schema.layers[li].trainable) {
      head = &probe.layers[li];
      break;
    }
  require(head != nullptr, ErrorCode::invalid_argument, "probe has no trainable head");
  Eigen::MatrixXd W = head->weight.mat(c, fd).transpose();
  const double w_norm2 = W.squaredNorm();
  require(w_norm2 > 0.0, ErrorCode::invalid_argument, "probe head weight is zero");

  auto gram = [](const Tensor& f) {
    ConstMatrixMap F(f.ptr(), f.shape[0], f.shape[1]);
    return Eigen::MatrixXd((F.transpose() * F) / static_cast<double>(f.shape[0]));
  };
  auto cross = [](const Tensor& f, const Tensor& y) {
    ConstMatrixMap F(f.ptr(), f.shape[0], f.shape[1]);
    ConstMatrixMap Y(y.ptr(), y.shape[0], y.shape[1]);
    return Eigen::MatrixXd((F.transpose() * Y) / static_cast<double>(f.shape[0]));
  };

  Eigen::MatrixXd c_gap = gram(ft) - gram(fs);
  Eigen::MatrixXd m_gap = cross(ft, targets_t) - cross(fs, targets_s);
  Eigen::MatrixXd grad_gap = c_gap * W - m_gap;  // equals g_T - g_S for the squared-error head

  const double lhs = grad_gap.squaredNorm() / w_norm2;
  // ||x - y||^2 <= 2||x||^2 + 2||y||^2 with ||C_gap W|| <= ||C_gap||_F ||W||_F;
  // equality needs C_gap W = -M_gap with the weight aligned to the gap.
  const double statistic_sum = c_gap.squaredNorm() + m_gap.squaredNorm() / w_norm2;
  const double rhs = 2.0 * statistic_sum;

  std::ostringstream detail;
  detail << "||C_gap||^2=" << c_gap.squaredNorm()
         << " ||M_gap||^2/||W||^2=" << m_gap.squaredNorm() / w_norm2
         << " unscaled_sum=" << statistic_sum << " margin_vs_unscaled=" << lhs - statistic_sum;
  return make_check("gradient-statistic-bound",
                    digest_tensors({&images_t, &targets_t, &images_s, &targets_s}), lhs, rhs, "<=",
                    1e-9, detail.str());
}

CheckResult covariance_implies_variance(const Tensor& features_t, const Tensor& features_s,
                                        double tolerance) {
  require(features_t.shape[1] == features_s.shape[1], ErrorCode::shape_mismatch,
          "feature dimensions disagree");
  ConstMatrixMap Ft(features_t.ptr(), features_t.shape[0], features_t.shape[1]);
  ConstMatrixMap Fs(features_s.ptr(), features_s.shape[0], features_s.shape[1]);
  Eigen::MatrixXd gap = (Ft.transpose() * Ft) / static_cast<double>(features_t.shape[0]) -
                        (Fs.transpose() * Fs) / static_cast<double>(features_s.shape[0]);
  const double diag_gap = gap.diagonal().norm();
  const double full_gap = gap.norm();
  std::ostringstream detail;
  detail << "diag gap " << diag_gap << " vs full Frobenius gap " << full_gap;
  if (full_gap <= tolerance) detail << "; full matrices match so variances match";
  return make_check("covariance-implies-variance", digest_tensors({&features_t, &features_s}),
                    diag_gap, full_gap, "<=", tolerance, detail.str());
}

CheckResult balanced_mean_reduction(const Tensor& features, const std::vector<int>& labels,
                                    int class_count, bool strict) {
  const Index N = features.shape[0], fd = features.shape[1];
  require(static_cast<Index>(labels.size()) == N, ErrorCode::shape_mismatch,
          "label count does not match features");

  std::vector<Index> counts(static_cast<std::size_t>(class_count), 0);
  for (int l : labels) counts[static_cast<std::size_t>(l)]++;
  if (strict)
    for (Index n : counts)
      require(n == counts[0] && n > 0, ErrorCode::invalid_argument,
              "labels are imbalanced in strict mode");

  // (1/N) F^T Y with one-hot Y, column by column.
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(fd, class_count);
  ConstMatrixMap F(features.ptr(), N, fd);
  for (Index i = 0; i < N; ++i) M.col(labels[static_cast<std::size_t>(i)]) += F.row(i).transpose();
  M /= static_cast<double>(N);

  double max_dev = 0.0;
  Eigen::VectorXd global_from_classes = Eigen::VectorXd::Zero(fd);
  for (int k = 0; k < class_count; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) continue;
    Eigen::VectorXd class_mean = Eigen::VectorXd::Zero(fd);
    for (Index i = 0; i < N; ++i)
      if (labels[static_cast<std::size_t>(i)] == k) class_mean += F.row(i).transpose();
    class_mean /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    const double frac = static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(N);
    max_dev = std::max(max_dev, (M.col(k) - class_mean * frac).lpNorm<Eigen::Infinity>());
    global_from_classes += class_mean * frac;
  }
  Eigen::VectorXd global_mean = F.colwise().mean().transpose();
  max_dev = std::max(max_dev, (global_from_classes - global_mean).lpNorm<Eigen::Infinity>());

  std::ostringstream detail;
  detail << "columns of (1/N)F^T Y match class means scaled by class fractions; "
         << "fraction-weighted class means reproduce the global mean";
  return make_check("balanced-mean-reduction", digest_tensors({&features}), max_dev, 0.0, "~", 1e-9,
                    detail.str());
}

CheckResult cosine_identity_check(const Tensor& grad_a, const Tensor& grad_b) {
  const double na = l2_norm(grad_a), nb = l2_norm(grad_b);
  require(na > 0.0 && nb > 0.0, ErrorCode::invalid_argument, "cosine identity needs nonzero vectors");
  require(grad_a.numel() == grad_b.numel(), ErrorCode::shape_mismatch, "vector lengths disagree");

  const double cos_ab = dot(grad_a, grad_b) / (na * nb);
  double sq = 0.0;
  for (Index i = 0; i < grad_a.numel(); ++i) {
    const double d = grad_a[i] / na - grad_b[i] / nb;
    sq += d * d;
  }
  return make_check("cosine-identity", digest_tensors({&grad_a, &grad_b}), -cos_ab, 0.5 * sq - 1.0,
                    "~", 1e-9);
}

// ------------------------------------------------------------ bi-level study

Tensor unrolled_bilevel_pixel_grad(const ModelSnapshot& init, const SyntheticDataset& synth,
                                   const LabeledDataset& eval_ds, double alpha, Index m,
                                   double* meta_loss) {
  require(m >= 1, ErrorCode::invalid_argument, "inner step count must be >= 1");

  // Inner full-batch trajectory theta_0 .. theta_m on the synthetic set.
  std::vector<Tensor> thetas;
  thetas.push_back(init.trainable_params_flat());
  for (Index k = 0; k < m; ++k) {
    LossGrad g = loss_grad_at(init, thetas.back(), synth.images, synth.hard_labels);
    Tensor next = thetas.back();
    next.vec() -= alpha * g.grad.vec();
    thetas.push_back(std::move(next));
  }

  LossGrad meta = loss_grad_at(init, thetas.back(), eval_ds.images, eval_ds.labels);
  if (meta_loss) *meta_loss = meta.loss;

  Tensor v = meta.grad;  // dL/dtheta_k, transported backwards
  Tensor pixel_grad(synth.images.shape);

  for (Index k = m - 1; k >= 0; --k) {
    const Tensor& theta = thetas[static_cast<std::size_t>(k)];
    const double vn = l2_norm(v);
    if (vn < 1e-14) break;
    const double eps = 1e-6 * (1.0 + l2_norm(theta)) / vn;

    Tensor plus = theta, minus = theta;
    plus.vec() += eps * v.vec();
    minus.vec() -= eps * v.vec();

    // d/dS <g_S(theta), v> by central differences through the input gradient.
    Tensor ig_plus = input_grad_at(init, plus, synth.images, synth.hard_labels);
    Tensor ig_minus = input_grad_at(init, minus, synth.images, synth.hard_labels);
    for (Index i = 0; i < pixel_grad.numel(); ++i)
      pixel_grad[i] -= alpha * (ig_plus[i] - ig_minus[i]) / (2.0 * eps);

    if (k == 0) break;
    // Transport v through (I - alpha H_S(theta)).
    LossGrad gp = loss_grad_at(init, plus, synth.images, synth.hard_labels);
    LossGrad gm = loss_grad_at(init, minus, synth.images, synth.hard_labels);
    for (Index i = 0; i < v.numel(); ++i)
      v[i] -= alpha * (gp.grad[i] - gm.grad[i]) / (2.0 * eps);
  }
  return pixel_grad;
}

namespace {

struct EvalCurves {
  std::vector<double> train_loss;
  std::vector<double> test_acc;
  double final_acc = 0.0;
};

EvalCurves train_and_track(const SyntheticDataset& synth, const LabeledDataset& test,
                           Index epochs, std::uint64_t seed) {
  LabeledDataset as_dataset;
  as_dataset.name = "study-synth";
  as_dataset.class_count = synth.class_count;
  as_dataset.images = synth.images;
  as_dataset.labels = synth.hard_labels;

  ModelSnapshot model = build_model("toy-bn-1", synth.class_count, derive_seed(seed, "study-eval"));
  OptimizerSettings hp;
  hp.lr = 0.05;
  hp.momentum = 0.9;
  hp.batch_size = synth.size();
  hp.schedule = LrSchedule::cosine;
  hp.seed = derive_seed(seed, "study-eval-order");
  hp.horizon_steps = epochs;

  EvalCurves curves;
  for (Index e = 0; e < epochs; ++e) {
    model = train_steps(model, as_dataset, 1, hp);
    curves.train_loss.push_back(dataset_loss(model, as_dataset.images, as_dataset.labels));
    curves.test_acc.push_back(accuracy(model, test));
  }
  curves.final_acc = curves.test_acc.back();
  return curves;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

StudyReport taylor_vs_exact_training_study(const StudyConfig& cfg) {
  if (cfg.inner_steps == 0)
    fail(ErrorCode::degenerate_config,
         "0 inner steps degenerates the meta objective to l(T; theta_0); nothing to study");
  require(cfg.inner_steps <= 5, ErrorCode::size_cap_exceeded, "inner unrolling is capped at 5 steps");
  require(cfg.class_count <= 2 && cfg.per_class <= 500, ErrorCode::size_cap_exceeded,
          "study fixture is capped at 2 classes x 500 images");

  LabeledDataset train = make_blob_dataset(cfg.class_count, cfg.per_class, 3, 32, 32, 0.15,
                                           derive_seed(cfg.seed, "study-train"), "study-train");
  LabeledDataset test = make_blob_dataset(cfg.class_count, std::max<Index>(20, cfg.per_class / 2), 3,
                                          32, 32, 0.15, derive_seed(cfg.seed, "study-test"),
                                          "study-test");

  SyntheticDataset baseline = init_synthetic(train, static_cast<int>(cfg.ipc), InitMode::noise,
                                             derive_seed(cfg.seed, "study-init"));

  StudyReport report;
  constexpr double kAdamEps = 1e-8;

  // (a) literal unrolled meta objective.
  SyntheticDataset bilevel = baseline;
  {
    Tensor m1(bilevel.images.shape), m2(bilevel.images.shape);
    for (Index it = 0; it < cfg.bilevel_iterations; ++it) {
      ModelSnapshot init = build_model("toy-bn-1", cfg.class_count,
                                       derive_seed(cfg.seed, "bilevel-model", static_cast<std::uint64_t>(it)));
      double meta_loss = 0.0;
      Tensor grad = unrolled_bilevel_pixel_grad(init, bilevel, train, cfg.inner_lr, cfg.inner_steps,
                                                &meta_loss);
      report.bilevel_loss_curve.push_back(meta_loss);
      const double t = static_cast<double>(it + 1);
      const double bc1 = 1.0 - std::pow(0.5, t), bc2 = 1.0 - std::pow(0.9, t);
      for (Index i = 0; i < grad.numel(); ++i) {
        double& m = m1[i];
        double& v = m2[i];
        m = 0.5 * m + 0.5 * grad[i];
        v = 0.9 * v + 0.1 * grad[i] * grad[i];
        bilevel.images[i] =
            std::clamp(bilevel.images[i] - cfg.pixel_lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps), 0.0, 1.0);
      }
    }
  }

  // (b) the statistic-matching objective on an in-memory weak-teacher pool.
  SyntheticDataset teddy = baseline;
  {
    std::vector<ModelSnapshot> teachers;
    ModelSnapshot base = build_model("toy-bn-1", cfg.class_count, derive_seed(cfg.seed, "study-base"));
    OptimizerSettings hp;
    hp.lr = 0.05;
    hp.batch_size = 32;
    hp.schedule = LrSchedule::constant;
    hp.seed = derive_seed(cfg.seed, "study-teacher");
    ModelSnapshot live = base;
    for (int t = 0; t < 6; ++t) {
      live = train_steps(live, train, 8, hp);
      teachers.push_back(live);
    }

    Tensor m1(teddy.images.shape), m2(teddy.images.shape);
    double initial_total = -1.0;
    for (Index it = 0; it < cfg.teddy_iterations; ++it) {
      Rng pick = make_rng(derive_seed(cfg.seed, "study-pick", static_cast<std::uint64_t>(it)));
      Tensor grad(teddy.images.shape);
      double total = 0.0;
      const int n_pick = 3;
      for (int p = 0; p < n_pick; ++p) {
        const ModelSnapshot& teacher = teachers[uniform_index(pick, teachers.size())];
        Tensor g;
        LossBreakdown b = statistic_matching_loss(teddy.images, teddy.hard_labels, teacher, 1.0, &g);
        grad.vec() += g.vec();
        total += b.total;
      }
      grad.vec() /= static_cast<double>(n_pick);
      total /= static_cast<double>(n_pick);
      report.teddy_loss_curve.push_back(total);
      if (initial_total < 0) initial_total = total;

      const double t = static_cast<double>(it + 1);
      const double bc1 = 1.0 - std::pow(0.5, t), bc2 = 1.0 - std::pow(0.9, t);
      for (Index i = 0; i < grad.numel(); ++i) {
        double& m = m1[i];
        double& v = m2[i];
        m = 0.5 * m + 0.5 * grad[i];
        v = 0.9 * v + 0.1 * grad[i] * grad[i];
        teddy.images[i] =
            std::clamp(teddy.images[i] - cfg.pixel_lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps), 0.0, 1.0);
      }
    }
  }

  EvalCurves curves_a = train_and_track(bilevel, test, cfg.eval_epochs, cfg.seed ^ 0xA);
  EvalCurves curves_b = train_and_track(teddy, test, cfg.eval_epochs, cfg.seed ^ 0xB);
  EvalCurves curves_0 = train_and_track(baseline, test, cfg.eval_epochs, cfg.seed ^ 0xC);

  report.bilevel_accuracy = curves_a.final_acc;
  report.teddy_accuracy = curves_b.final_acc;
  report.baseline_accuracy = curves_0.final_acc;
  report.average_loss_gap = std::abs(mean_of(curves_a.train_loss) - mean_of(curves_b.train_loss));
  report.average_accuracy_gap = std::abs(mean_of(curves_a.test_acc) - mean_of(curves_b.test_acc));
  report.peak_accuracy_gap =
      std::abs(*std::max_element(curves_a.test_acc.begin(), curves_a.test_acc.end()) -
               *std::max_element(curves_b.test_acc.begin(), curves_b.test_acc.end()));
  report.both_beat_baseline = report.bilevel_accuracy > report.baseline_accuracy &&
                              report.teddy_accuracy > report.baseline_accuracy;
  return report;
}

// ------------------------------------------------------------------- sweeps

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

Tensor one_hot_rows(Rng& rng, Index n, Index c) {
  Tensor y({n, c});
  for (Index i = 0; i < n; ++i) y.at2(i, static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(c)))) = 1.0;
  return y;
}

std::pair<SyntheticDataset, LabeledDataset> random_probe_sets(Rng& rng, const ModelSnapshot& model,
                                                              Index n_s, Index n_t) {
  const Shape in = model.schema.input_shape;
  SyntheticDataset s;
  s.class_count = model.class_count;
  s.ipc = static_cast<int>(n_s) / model.class_count;
  s.images = random_tensor(rng, {n_s, in[0], in[1], in[2]}, 0.0, 1.0);
  for (Index i = 0; i < n_s; ++i) s.hard_labels.push_back(static_cast<int>(i % model.class_count));

  LabeledDataset t;
  t.name = "probe";
  t.class_count = model.class_count;
  t.images = random_tensor(rng, {n_t, in[0], in[1], in[2]}, 0.0, 1.0);
  for (Index i = 0; i < n_t; ++i) t.labels.push_back(static_cast<int>(i % model.class_count));
  return {std::move(s), std::move(t)};
}

}  // namespace

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  std::vector<CheckResult> results;
  Rng rng = make_rng(derive_seed(seed, "verify"));

  // Cosine identity across 1000 random pairs, dims 2..64.
  {
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      Index dim = 2 + static_cast<Index>(uniform_index(rng, 63));
      Tensor a = random_tensor(rng, {dim}), b = random_tensor(rng, {dim});
      if (l2_norm(a) < 1e-9 || l2_norm(b) < 1e-9) continue;
      CheckResult r = cosine_identity_check(a, b);
      worst = std::max(worst, std::abs(r.lhs - r.rhs));
    }
    results.push_back(make_check("cosine-identity-sweep", "n=1000", worst, 0.0, "~", 1e-9,
                                 "max |lhs-rhs| over 1000 random pairs, dims 2..64"));
  }
  {
    Tensor a = random_tensor(rng, {8});
    CheckResult aligned = cosine_identity_check(a, a);
    results.push_back(make_check("cosine-identity-aligned", aligned.inputs_digest, aligned.lhs, -1.0,
                                 "~", 1e-9, "aligned vectors give -1 on both sides"));
    Tensor neg = a;
    neg.vec() *= -1.0;
    CheckResult anti = cosine_identity_check(a, neg);
    results.push_back(make_check("cosine-identity-antialigned", anti.inputs_digest, anti.lhs, 1.0, "~",
                                 1e-9, "anti-aligned vectors give +1 on both sides"));
  }

  // Gradient-to-statistics bound: randomized instances on small linear heads.
  {
    double worst_margin = -1e300;
    for (int i = 0; i < 100; ++i) {
      const Index fd = 2 + static_cast<Index>(uniform_index(rng, 7));
      const int c = 2 + static_cast<int>(uniform_index(rng, 2));
      const Index n_t = 2 + static_cast<Index>(uniform_index(rng, 15));
      const Index n_s = 2 + static_cast<Index>(uniform_index(rng, 15));
      ModelSnapshot probe = build_linear_head({1, 2, 4}, fd, FeatureKind::random_tanh, c,
                                              derive_seed(seed, "bound-probe", static_cast<std::uint64_t>(i)));
      // Randomize the head away from its near-zero init.
      for (std::size_t li = 0; li < probe.layers.size(); ++li)
        if (probe.schema.layers[li].kind == LayerKind::linear && probe.schema.layers[li].trainable)
          for (double& v : probe.layers[li].weight.data) v = uniform(rng, -1.0, 1.0);
      Tensor xt = random_tensor(rng, {n_t, 1, 2, 4}, -1.0, 1.0);
      Tensor xs = random_tensor(rng, {n_s, 1, 2, 4}, -1.0, 1.0);
      Tensor yt = one_hot_rows(rng, n_t, c);
      Tensor ys = one_hot_rows(rng, n_s, c);
      CheckResult r = gradient_statistic_bound(xt, yt, xs, ys, probe);
      worst_margin = std::max(worst_margin, r.lhs - r.rhs);
    }
    results.push_back(make_check("gradient-statistic-bound-sweep", "n=100", worst_margin, 0.0, "<=",
                                 1e-9, "max(lhs - rhs) over 100 randomized linear-head instances"));
  }
  {
    // Identical data: both sides vanish.
    ModelSnapshot probe = build_linear_head({1, 2, 4}, 6, FeatureKind::random_tanh, 2,
                                            derive_seed(seed, "bound-eq-probe"));
    for (std::size_t li = 0; li < probe.layers.size(); ++li)
      if (probe.schema.layers[li].kind == LayerKind::linear && probe.schema.layers[li].trainable)
        for (double& v : probe.layers[li].weight.data) v = uniform(rng, -1.0, 1.0);
    Tensor x = random_tensor(rng, {6, 1, 2, 4}, -1.0, 1.0);
    Tensor y = one_hot_rows(rng, 6, 2);
    CheckResult r = gradient_statistic_bound(x, y, x, y, probe);
    results.push_back(make_check("gradient-statistic-bound-identical", r.inputs_digest,
                                 std::abs(r.lhs) + std::abs(r.rhs), 0.0, "~", 1e-12,
                                 "identical data zeroes both sides"));
  }
  {
    // Equality fixture with identity features: the covariance gap maps the
    // weight exactly onto the negated mean gap, so the two difference vectors
    // are parallel and the bound is tight.
    //   X_t rows (p, +-q), X_s rows (a, +-q): C_gap = diag(p^2 - a^2, 0),
    //   M_gap = (p - a, 0); W = (-1/(p+a), 0) makes C_gap W = -M_gap.
    ModelSnapshot probe = build_linear_head({1, 1, 2}, 0, FeatureKind::identity, 1,
                                            derive_seed(seed, "bound-eq2"));
    const double p = 0.8, a = 0.2, q = 0.3;
    for (std::size_t li = 0; li < probe.layers.size(); ++li)
      if (probe.schema.layers[li].kind == LayerKind::linear) {
        probe.layers[li].weight.fill(0.0);
        probe.layers[li].weight[0] = -1.0 / (p + a);
        if (probe.layers[li].bias.numel()) probe.layers[li].bias.fill(0.0);
      }
    Tensor xt({2, 1, 1, 2});
    xt.data = {p, q, p, -q};
    Tensor xs({2, 1, 1, 2});
    xs.data = {a, q, a, -q};
    Tensor y({2, 1}, 1.0);
    CheckResult r = gradient_statistic_bound(xt, y, xs, y, probe);
    results.push_back(make_check("gradient-statistic-bound-equality", r.inputs_digest, r.lhs, r.rhs,
                                 "~", 1e-6,
                                 "parallel covariance/mean difference vectors reach equality"));
  }
  {
    // Randomized adversarial weight search on one fixed data instance,
    // including rank-1 draws.
    ModelSnapshot probe = build_linear_head({1, 2, 4}, 6, FeatureKind::random_tanh, 2,
                                            derive_seed(seed, "bound-adv-probe"));
    Tensor xt = random_tensor(rng, {12, 1, 2, 4}, -1.0, 1.0);
    Tensor xs = random_tensor(rng, {9, 1, 2, 4}, -1.0, 1.0);
    Tensor yt = one_hot_rows(rng, 12, 2);
    Tensor ys = one_hot_rows(rng, 9, 2);
    double worst_margin = -1e300;
    for (int draw = 0; draw < 1000; ++draw) {
      for (std::size_t li = 0; li < probe.layers.size(); ++li)
        if (probe.schema.layers[li].kind == LayerKind::linear && probe.schema.layers[li].trainable) {
          Tensor& w = probe.layers[li].weight;
          if (draw % 2 == 0) {
            for (double& v : w.data) v = uniform(rng, -2.0, 2.0);
          } else {
            // rank-1: outer product of random vectors
            Tensor u = random_tensor(rng, {w.shape[0]});
            Tensor z = random_tensor(rng, {w.shape[1]});
            for (Index r0 = 0; r0 < w.shape[0]; ++r0)
              for (Index c0 = 0; c0 < w.shape[1]; ++c0) w.at2(r0, c0) = u[r0] * z[c0];
          }
        }
      CheckResult r = gradient_statistic_bound(xt, yt, xs, ys, probe);
      worst_margin = std::max(worst_margin, r.lhs - r.rhs);
    }
    results.push_back(make_check("gradient-statistic-bound-adversarial", "draws=1000", worst_margin,
                                 0.0, "<=", 1e-9,
                                 "max(lhs - rhs) over 1000 random W draws incl. rank-1"));
  }

  // Covariance-to-variance reduction.
  {
    Tensor ft = random_tensor(rng, {10, 6});
    Tensor fs({10, 6});
    std::vector<Index> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index i = 0; i < 10; ++i)
      for (Index j = 0; j < 6; ++j) fs.at2(i, j) = ft.at2(perm[static_cast<std::size_t>(i)], j);
    CheckResult r = covariance_implies_variance(ft, fs);
    results.push_back(make_check("covariance-implies-variance-permutation", r.inputs_digest,
                                 r.lhs + r.rhs, 0.0, "~", 1e-9,
                                 "row permutation leaves F^T F and its diagonal unchanged"));

    Tensor neg = ft;
    neg.vec() *= -1.0;
    CheckResult rs = covariance_implies_variance(ft, neg);
    results.push_back(make_check("covariance-implies-variance-signflip", rs.inputs_digest,
                                 rs.lhs + rs.rhs, 0.0, "~", 1e-9,
                                 "second moments are sign invariant"));

    Tensor other = random_tensor(rng, {8, 6});
    results.push_back(covariance_implies_variance(ft, other));
  }

  // Balanced class-mean reduction.
  {
    Tensor f({4, 3});
    f.data = {1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 4.0, 4.0, -2.0, 0.0, 1.0, 1.0};
    results.push_back(balanced_mean_reduction(f, {0, 0, 1, 1}, 2, true));
    Tensor g = random_tensor(rng, {6, 4});
    CheckResult degenerate = balanced_mean_reduction(g, {0, 0, 0, 0, 0, 0}, 1, false);
    degenerate.check_id = "balanced-mean-reduction-degenerate";
    results.push_back(degenerate);
  }

  // Taylor scaling: exact quartering for the quadratic head.
  {
    ModelSnapshot quad = build_linear_head({1, 2, 4}, 6, FeatureKind::random_tanh, 2,
                                           derive_seed(seed, "quad-probe"));
    for (std::size_t li = 0; li < quad.layers.size(); ++li)
      if (quad.schema.layers[li].kind == LayerKind::linear && quad.schema.layers[li].trainable)
        for (double& v : quad.layers[li].weight.data) v = uniform(rng, -0.5, 0.5);
    auto [synth, eval_ds] = random_probe_sets(rng, quad, 8, 12);
    const double alpha = 0.05;
    double r1 = taylor_residual(quad, synth, eval_ds, alpha).residual;
    double r2 = taylor_residual(quad, synth, eval_ds, alpha / 2.0).residual;
    results.push_back(make_check("taylor-quadratic-scaling", digest_tensors({&synth.images}), r1 / r2,
                                 4.0, "~", 1e-6, "halving alpha quarters the residual exactly"));

    double alpha_zero = taylor_residual(quad, synth, eval_ds, 0.0).residual;
    results.push_back(make_check("taylor-zero-alpha", digest_tensors({&synth.images}), alpha_zero, 0.0,
                                 "~", 1e-12, "alpha = 0 leaves no residual"));

    // For m >= 2 the accumulated gradient itself moves with alpha, so the
    // residual picks up an O(alpha^3) path term; exact quartering is the
    // alpha -> 0 limit.
    double rm = multi_step_residual(quad, synth, eval_ds, 4e-3, 3);
    double rm_half = multi_step_residual(quad, synth, eval_ds, 2e-3, 3);
    results.push_back(make_check("multi-step-quadratic-scaling", digest_tensors({&synth.images}),
                                 rm / rm_half / 4.0, 1.0, "~", 2e-2,
                                 "ratio/4 at alpha = 4e-3; exact in the small-alpha limit"));
  }

  // Toy-network Taylor scaling stays near the quadratic regime.
  {
    ModelSnapshot toy = build_model("toy-bn-1", 2, derive_seed(seed, "toy-net"));
    LabeledDataset train = make_blob_dataset(2, 16, 3, 32, 32, 0.1, derive_seed(seed, "toy-data"));
    OptimizerSettings hp;
    hp.lr = 0.05;
    hp.batch_size = 16;
    hp.seed = derive_seed(seed, "toy-warm");
    toy = train_steps(toy, train, 10, hp);

    SyntheticDataset synth = init_synthetic(train, 4, InitMode::real, derive_seed(seed, "toy-synth"));
    double r1 = taylor_residual(toy, synth, train, 1e-3).residual;
    double r2 = taylor_residual(toy, synth, train, 5e-4).residual;
    results.push_back(make_check("taylor-toy-ratio-low", "toy", 3.0, r1 / r2, "<=", 0.0,
                                 "toy residual ratio at alpha 1e-3 vs 5e-4, lower bound"));
    results.push_back(make_check("taylor-toy-ratio-high", "toy", r1 / r2, 5.0, "<=", 0.0,
                                 "toy residual ratio at alpha 1e-3 vs 5e-4, upper bound"));

    double tr = taylor_residual(toy, synth, train, 1e-3).residual;
    double ms = multi_step_residual(toy, synth, train, 1e-3, 1);
    results.push_back(make_check("multi-step-collapse", "toy", tr, ms, "~", 1e-12,
                                 "m = 1 reduces to the single-step residual"));

    int m5_wins = 0;
    for (int trial = 0; trial < 100; ++trial) {
      ModelSnapshot probe = build_model("toy-bn-1", 2, derive_seed(seed, "mono", static_cast<std::uint64_t>(trial)));
      double m5 = multi_step_residual(probe, synth, train, 5e-3, 5);
      double m1 = multi_step_residual(probe, synth, train, 5e-3, 1);
      if (m5 >= m1) ++m5_wins;
    }
    results.push_back(make_check("multi-step-monotonicity", "trials=100", 90.0,
                                 static_cast<double>(m5_wins), "<=", 0.0,
                                 "residual(m=5) >= residual(m=1) in at least 90/100 trials"));
  }

  return results;
}

}  // namespace teddy
