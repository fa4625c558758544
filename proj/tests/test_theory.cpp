#include <doctest.h>

#include <cmath>

#include "teddy/dataset.hpp"
#include "teddy/network.hpp"
#include "teddy/rng.hpp"
#include "teddy/theory.hpp"
#include "test_util.hpp"

using namespace teddy;

namespace {

ModelSnapshot quadratic_probe(std::uint64_t seed) {
  ModelSnapshot m = build_linear_head({1, 2, 4}, 6, FeatureKind::random_tanh, 2, seed);
  Rng rng = make_rng(derive_seed(seed, "probe-weights"));
  for (std::size_t li = 0; li < m.layers.size(); ++li)
    if (m.schema.layers[li].kind == LayerKind::linear && m.schema.layers[li].trainable)
      for (double& v : m.layers[li].weight.data) v = uniform(rng, -0.5, 0.5);
  return m;
}

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

SyntheticDataset tiny_synth(Rng& rng, const Shape& image_shape, Index n, int classes) {
  SyntheticDataset s;
  s.class_count = classes;
  s.ipc = static_cast<int>(n) / classes;
  s.images = random_tensor(rng, {n, image_shape[0], image_shape[1], image_shape[2]}, 0.0, 1.0);
  for (Index i = 0; i < n; ++i) s.hard_labels.push_back(static_cast<int>(i) % classes);
  return s;
}

LabeledDataset tiny_eval(Rng& rng, const Shape& image_shape, Index n, int classes) {
  LabeledDataset t;
  t.name = "tiny-eval";
  t.class_count = classes;
  t.images = random_tensor(rng, {n, image_shape[0], image_shape[1], image_shape[2]}, 0.0, 1.0);
  for (Index i = 0; i < n; ++i) t.labels.push_back(static_cast<int>(i) % classes);
  return t;
}

}  // namespace

TEST_CASE("taylor residual") {
  Rng rng = make_rng(3);
  ModelSnapshot quad = quadratic_probe(5);
  SyntheticDataset synth = tiny_synth(rng, {1, 2, 4}, 8, 2);
  LabeledDataset eval_ds = tiny_eval(rng, {1, 2, 4}, 12, 2);

  SUBCASE("alpha zero leaves no residual") {
    CHECK(taylor_residual(quad, synth, eval_ds, 0.0).residual == doctest::Approx(0.0).epsilon(1e-15));
  }

  SUBCASE("quadratic loss scales exactly quadratically in alpha") {
    double r1 = taylor_residual(quad, synth, eval_ds, 0.05).residual;
    double r2 = taylor_residual(quad, synth, eval_ds, 0.025).residual;
    CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(1e-6));
  }

  SUBCASE("components expose the three scalars") {
    TaylorComponents c = taylor_residual(quad, synth, eval_ds, 0.05);
    CHECK(std::isfinite(c.loss_base));
    CHECK(std::isfinite(c.loss_after));
    CHECK(std::isfinite(c.dot_term));
    CHECK(c.residual == doctest::Approx(std::abs(c.loss_after - (c.loss_base - 0.05 * c.dot_term))));
  }

  SUBCASE("toy network ratio stays in the near-quadratic window") {
    ModelSnapshot toy = build_model("toy-bn-1", 2, 11);
    LabeledDataset train = make_blob_dataset(2, 16, 3, 32, 32, 0.1, 13, "taylor-toy");
    OptimizerSettings hp;
    hp.seed = 1;
    hp.batch_size = 16;
    toy = train_steps(toy, train, 10, hp);
    SyntheticDataset s = init_synthetic(train, 4, InitMode::real, 3);
    double r1 = taylor_residual(toy, s, train, 1e-3).residual;
    double r2 = taylor_residual(toy, s, train, 5e-4).residual;
    CHECK(r1 / r2 >= 3.0);
    CHECK(r1 / r2 <= 5.0);
  }
}

TEST_CASE("multi-step residual") {
  Rng rng = make_rng(7);
  ModelSnapshot quad = quadratic_probe(9);
  SyntheticDataset synth = tiny_synth(rng, {1, 2, 4}, 8, 2);
  LabeledDataset eval_ds = tiny_eval(rng, {1, 2, 4}, 12, 2);

  SUBCASE("m = 1 collapses to the single-step residual") {
    double a = taylor_residual(quad, synth, eval_ds, 0.05).residual;
    double b = multi_step_residual(quad, synth, eval_ds, 0.05, 1);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }

  SUBCASE("quadratic scaling approaches exact quartering as alpha shrinks") {
    // m >= 2 adds an O(alpha^3) path-curvature term, so the ratio converges
    // to 4 rather than equalling it at finite alpha.
    for (Index m : {2, 3, 5}) {
      double coarse = multi_step_residual(quad, synth, eval_ds, 0.04, m) /
                      multi_step_residual(quad, synth, eval_ds, 0.02, m);
      double fine = multi_step_residual(quad, synth, eval_ds, 0.004, m) /
                    multi_step_residual(quad, synth, eval_ds, 0.002, m);
      CHECK(std::abs(fine - 4.0) < std::abs(coarse - 4.0) + 1e-9);
      CHECK(fine == doctest::Approx(4.0).epsilon(2e-2));
    }
  }

  SUBCASE("longer segments accumulate at least as much curvature error, usually") {
    LabeledDataset train = make_blob_dataset(2, 12, 3, 32, 32, 0.1, 23, "ms-toy");
    SyntheticDataset s = init_synthetic(train, 3, InitMode::real, 5);
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
      ModelSnapshot toy = build_model("toy-bn-1", 2, 100 + static_cast<std::uint64_t>(trial));
      double m5 = multi_step_residual(toy, s, train, 5e-3, 5);
      double m1 = multi_step_residual(toy, s, train, 5e-3, 1);
      if (m5 >= m1) ++wins;
    }
    CHECK(wins >= 18);  // the 100-trial sweep runs in the acceptance suite
  }

  SUBCASE("m must be positive") {
    CHECK(testutil::threw_code(ErrorCode::invalid_argument,
                               [&] { multi_step_residual(quad, synth, eval_ds, 0.05, 0); }));
  }
}

TEST_CASE("gradient statistic bound") {
  Rng rng = make_rng(13);

  SUBCASE("identical data zeroes both sides") {
    ModelSnapshot probe = quadratic_probe(17);
    Tensor x = random_tensor(rng, {6, 1, 2, 4});
    Tensor y({6, 2});
    for (Index i = 0; i < 6; ++i) y.at2(i, i % 2) = 1.0;
    CheckResult r = gradient_statistic_bound(x, y, x, y, probe);
    CHECK(r.lhs == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r.rhs == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r.passed);
  }

  SUBCASE("randomized instances satisfy the bound") {
    for (int i = 0; i < 25; ++i) {
      ModelSnapshot probe = quadratic_probe(200 + static_cast<std::uint64_t>(i));
      Index nt = 2 + static_cast<Index>(uniform_index(rng, 15));
      Index ns = 2 + static_cast<Index>(uniform_index(rng, 15));
      Tensor xt = random_tensor(rng, {nt, 1, 2, 4});
      Tensor xs = random_tensor(rng, {ns, 1, 2, 4});
      Tensor yt({nt, 2}), ys({ns, 2});
      for (Index j = 0; j < nt; ++j) yt.at2(j, static_cast<Index>(uniform_index(rng, 2))) = 1.0;
      for (Index j = 0; j < ns; ++j) ys.at2(j, static_cast<Index>(uniform_index(rng, 2))) = 1.0;
      CheckResult r = gradient_statistic_bound(xt, yt, xs, ys, probe);
      CHECK(r.lhs <= r.rhs + 1e-9);
    }
  }

  SUBCASE("zero head weight is refused") {
    ModelSnapshot probe = build_linear_head({1, 2, 4}, 6, FeatureKind::random_tanh, 2, 3);
    for (std::size_t li = 0; li < probe.layers.size(); ++li)
      if (probe.schema.layers[li].kind == LayerKind::linear && probe.schema.layers[li].trainable)
        probe.layers[li].weight.fill(0.0);
    Tensor x = random_tensor(rng, {4, 1, 2, 4});
    Tensor y({4, 2});
    for (Index i = 0; i < 4; ++i) y.at2(i, 0) = 1.0;
    CHECK(testutil::threw_code(ErrorCode::invalid_argument,
                               [&] { gradient_statistic_bound(x, y, x, y, probe); }));
  }
}

TEST_CASE("covariance implies variance") {
  Rng rng = make_rng(19);
  Tensor ft = random_tensor(rng, {10, 5});

  SUBCASE("row permutation: both gaps vanish") {
    Tensor fs = ft;
    // reverse rows
    for (Index i = 0; i < 10; ++i)
      for (Index j = 0; j < 5; ++j) fs.at2(i, j) = ft.at2(9 - i, j);
    CheckResult r = covariance_implies_variance(ft, fs);
    CHECK(r.passed);
    CHECK(r.lhs == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.rhs == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("sign flip: second moments are invariant") {
    Tensor fs = ft;
    fs.vec() *= -1.0;
    CheckResult r = covariance_implies_variance(ft, fs);
    CHECK(r.lhs == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("random pair: diagonal gap is bounded by the Frobenius gap") {
    Tensor fs = random_tensor(rng, {7, 5});
    CheckResult r = covariance_implies_variance(ft, fs);
    CHECK(r.passed);
    CHECK(r.lhs <= r.rhs + 1e-12);
  }

  SUBCASE("dimension mismatch is refused") {
    Tensor fs = random_tensor(rng, {7, 4});
    CHECK(testutil::threw_code(ErrorCode::shape_mismatch,
                               [&] { covariance_implies_variance(ft, fs); }));
  }
}

TEST_CASE("balanced mean reduction") {
  SUBCASE("two classes, two samples each, hand features") {
    Tensor f({4, 2});
    // class 0 rows: (1,2), (3,4); class 1 rows: (5,6), (7,8)
    f.data = {1, 2, 3, 4, 5, 6, 7, 8};
    CheckResult r = balanced_mean_reduction(f, {0, 0, 1, 1}, 2, true);
    CHECK(r.passed);
    // Column 0 of (1/4) F^T Y must equal class-0 mean (2,3) times 1/2.
  }

  SUBCASE("single class with strict off reduces to the global mean") {
    Rng rng = make_rng(29);
    Tensor f = random_tensor(rng, {6, 3});
    CheckResult r = balanced_mean_reduction(f, {0, 0, 0, 0, 0, 0}, 1, false);
    CHECK(r.passed);
  }

  SUBCASE("imbalanced labels in strict mode are refused") {
    Rng rng = make_rng(31);
    Tensor f = random_tensor(rng, {5, 3});
    CHECK(testutil::threw_code(ErrorCode::invalid_argument,
                               [&] { balanced_mean_reduction(f, {0, 0, 0, 1, 1}, 2, true); }));
  }

  SUBCASE("balanced per-class means reproduce the global mean") {
    Rng rng = make_rng(37);
    Tensor f = random_tensor(rng, {8, 4});
    CheckResult r = balanced_mean_reduction(f, {0, 1, 0, 1, 0, 1, 0, 1}, 2, true);
    CHECK(r.passed);
    CHECK(r.lhs <= 1e-9);
  }
}

TEST_CASE("cosine identity") {
  Rng rng = make_rng(41);

  SUBCASE("aligned vectors give -1 on both sides") {
    Tensor a = random_tensor(rng, {9});
    CheckResult r = cosine_identity_check(a, a);
    CHECK(r.lhs == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r.rhs == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r.passed);
  }

  SUBCASE("anti-aligned vectors give +1 on both sides") {
    Tensor a = random_tensor(rng, {9});
    Tensor b = a;
    b.vec() *= -2.5;
    CheckResult r = cosine_identity_check(a, b);
    CHECK(r.lhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.rhs == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("random pairs satisfy the identity to 1e-9") {
    for (int i = 0; i < 200; ++i) {
      Index dim = 2 + static_cast<Index>(uniform_index(rng, 63));
      Tensor a = random_tensor(rng, {dim});
      Tensor b = random_tensor(rng, {dim});
      CheckResult r = cosine_identity_check(a, b);
      CHECK(std::abs(r.lhs - r.rhs) < 1e-9);
    }
  }

  SUBCASE("zero vectors are refused") {
    Tensor a = random_tensor(rng, {4});
    Tensor z({4});
    CHECK(testutil::threw_code(ErrorCode::invalid_argument, [&] { cosine_identity_check(a, z); }));
  }
}

TEST_CASE("unrolled bi-level gradient matches finite differences") {
  // One inner step on the toy batch-norm network; probe a handful of pixels.
  StudyConfig cfg;
  LabeledDataset train = make_blob_dataset(2, 20, 3, 32, 32, 0.12, 43, "bilevel-train");
  SyntheticDataset synth = init_synthetic(train, 2, InitMode::real, 7);
  ModelSnapshot init = build_model("toy-bn-1", 2, 47);

  const double alpha = 0.05;
  double meta_loss = 0.0;
  Tensor grad = unrolled_bilevel_pixel_grad(init, synth, train, alpha, 1, &meta_loss);
  CHECK(std::isfinite(meta_loss));

  auto meta_at = [&](const SyntheticDataset& s) {
    Tensor theta = init.trainable_params_flat();
    LossGrad g = loss_and_param_grad(init, s.images, s.hard_labels);
    Tensor stepped = theta;
    stepped.vec() -= alpha * g.grad.vec();
    ModelSnapshot moved = init;
    moved.set_trainable_params_flat(stepped);
    return dataset_loss(moved, train.images, train.labels);
  };

  Rng rng = make_rng(53);
  const double h = 1e-5;
  for (int probe = 0; probe < 6; ++probe) {
    Index i = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(synth.images.numel())));
    SyntheticDataset plus = synth, minus = synth;
    plus.images[i] += h;
    minus.images[i] -= h;
    double fd = (meta_at(plus) - meta_at(minus)) / (2.0 * h);
    double rel = std::abs(grad[i] - fd) / std::max({std::abs(fd), std::abs(grad[i]), 1e-10});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("taylor vs exact training study") {
  SUBCASE("zero inner steps is a degenerate configuration") {
    StudyConfig cfg;
    cfg.inner_steps = 0;
    CHECK(testutil::threw_code(ErrorCode::degenerate_config,
                               [&] { taylor_vs_exact_training_study(cfg); }));
  }

  SUBCASE("caps are enforced") {
    StudyConfig cfg;
    cfg.per_class = 900;
    CHECK(testutil::threw_code(ErrorCode::size_cap_exceeded,
                               [&] { taylor_vs_exact_training_study(cfg); }));
    StudyConfig deep;
    deep.inner_steps = 9;
    CHECK(testutil::threw_code(ErrorCode::size_cap_exceeded,
                               [&] { taylor_vs_exact_training_study(deep); }));
  }

  SUBCASE("small study emits curves and the three gap fields") {
    StudyConfig cfg;
    cfg.per_class = 30;
    cfg.ipc = 3;
    cfg.inner_steps = 2;
    cfg.bilevel_iterations = 12;
    cfg.teddy_iterations = 60;
    cfg.eval_epochs = 60;
    cfg.seed = 5;
    StudyReport report = taylor_vs_exact_training_study(cfg);
    CHECK(report.bilevel_loss_curve.size() == 12);
    CHECK(report.teddy_loss_curve.size() == 60);
    CHECK(std::isfinite(report.average_loss_gap));
    CHECK(std::isfinite(report.average_accuracy_gap));
    CHECK(std::isfinite(report.peak_accuracy_gap));
    CHECK(report.baseline_accuracy >= 0.0);
    // Optimized synthetic data shouldn't lose to noise on this easy fixture.
    CHECK(report.teddy_accuracy >= report.baseline_accuracy);
  }
}

TEST_CASE("run_all_checks passes every hard assertion") {
  auto results = run_all_checks(2024);
  CHECK(results.size() >= 15);
  for (const auto& r : results) {
    INFO(r.check_id, ": lhs=", r.lhs, " rhs=", r.rhs, " rel=", r.relation);
    CHECK(r.passed);
  }
}
