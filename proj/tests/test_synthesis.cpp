#include <doctest.h>

#include <cmath>

#include "teddy/dataset.hpp"
#include "teddy/network.hpp"
#include "teddy/pool.hpp"
#include "teddy/rng.hpp"
#include "teddy/synthesis.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace teddy;
using teddy::testutil::TempDir;

namespace {

Tensor random_images(Index n, std::uint64_t seed) {
  Tensor t({n, 3, 32, 32});
  Rng rng = make_rng(seed);
  for (double& v : t.data) v = uniform(rng);
  return t;
}

// Refresh a model's running statistics from one batch with momentum 1.
void refresh_stats_from(ModelSnapshot& model, const Tensor& batch) {
  Network net(model);
  PassConfig cfg;
  cfg.bn_batch_mode = true;
  cfg.update_running = true;
  cfg.bn_momentum = 1.0;
  net.forward(batch, cfg);
}

PoolManifest tiny_pool(const std::filesystem::path& dir, const LabeledDataset& ds, int entries,
                       std::uint64_t seed) {
  ModelSnapshot base = build_model("toy-bn-1", ds.class_count, seed);
  OptimizerSettings hp;
  hp.lr = 0.05;
  hp.batch_size = 16;
  hp.schedule = LrSchedule::constant;
  hp.seed = seed;
  PriorPoolOptions opt;
  opt.stage_unit = StageUnit::step;
  return generate_prior_pool(base, ds, {2, 2 + 3 * (entries - 1), 3}, hp, dir, opt);
}

}  // namespace

TEST_CASE("statistic matching loss") {
  SUBCASE("self-match after a momentum-1 stats refresh is zero") {
    ModelSnapshot teacher = build_model("toy-bn-1", 4, 3);
    Tensor batch = random_images(6, 5);
    refresh_stats_from(teacher, batch);
    std::vector<int> labels = {0, 1, 2, 3, 0, 1};
    LossBreakdown b = statistic_matching_loss(batch, labels, teacher, 0.0);
    CHECK(b.total == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(b.mean_term == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(b.var_term == doctest::Approx(0.0).epsilon(1e-6));
  }

  SUBCASE("teacher without batch norm reduces to the classifier term") {
    ModelSnapshot teacher = build_model("linear-head", 2, 3);
    Tensor batch = random_images(4, 6);
    std::vector<int> labels = {0, 1, 0, 1};
    LossBreakdown b = statistic_matching_loss(batch, labels, teacher, 1.0);
    CHECK(b.mean_term == 0.0);
    CHECK(b.var_term == 0.0);
    CHECK(b.total == b.ce_term);
  }

  SUBCASE("hand-set unit statistics match an independent recomputation") {
    // RM = 0, RV = 1 are the build defaults; terms are then the plain norms
    // of the oracle-recomputed batch statistics.
    ModelSnapshot teacher = build_model("toy-bn-1", 2, 9);
    Tensor batch = random_images(2, 11);
    std::vector<int> labels = {0, 1};
    LossBreakdown b = statistic_matching_loss(batch, labels, teacher, 0.0);

    oracle::StackResult ref = oracle::run_sequential_stack(teacher, batch);
    REQUIRE(ref.bn_means.size() == 1);
    double mean_norm = 0.0, var_norm = 0.0;
    for (double mu : ref.bn_means[0]) mean_norm += mu * mu;
    for (double v : ref.bn_variances[0]) var_norm += (v - 1.0) * (v - 1.0);
    CHECK(b.mean_term == doctest::Approx(std::sqrt(mean_norm)).epsilon(1e-9));
    CHECK(b.var_term == doctest::Approx(std::sqrt(var_norm)).epsilon(1e-9));
  }

  SUBCASE("total is mean + var + u * ce") {
    ModelSnapshot teacher = build_model("convnet-3", 4, 13);
    Tensor batch = random_images(5, 17);
    std::vector<int> labels = {0, 1, 2, 3, 0};
    for (double u : {0.0, 0.3, 1.0, 2.5}) {
      LossBreakdown b = statistic_matching_loss(batch, labels, teacher, u);
      CHECK(b.total == doctest::Approx(b.mean_term + b.var_term + u * b.ce_term).epsilon(1e-12));
    }
  }

  SUBCASE("pixel gradient agrees with central finite differences") {
    ModelSnapshot teacher = build_model("toy-bn-1", 2, 23);
    LabeledDataset warm = make_blob_dataset(2, 8, 3, 32, 32, 0.1, 29, "warm");
    OptimizerSettings hp;
    hp.seed = 2;
    hp.batch_size = 8;
    teacher = train_steps(teacher, warm, 5, hp);

    Tensor batch = random_images(3, 31);
    std::vector<int> labels = {0, 1, 0};
    const double u = 0.7;
    Tensor grad;
    statistic_matching_loss(batch, labels, teacher, u, &grad);

    Rng rng = make_rng(37);
    const double h = 1e-5;
    for (int probe = 0; probe < 20; ++probe) {
      Index i = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(batch.numel())));
      Tensor plus = batch, minus = batch;
      plus[i] += h;
      minus[i] -= h;
      double fp = statistic_matching_loss(plus, labels, teacher, u).total;
      double fm = statistic_matching_loss(minus, labels, teacher, u).total;
      double fd = (fp - fm) / (2.0 * h);
      double rel = std::abs(grad[i] - fd) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      CHECK(rel < 1e-3);
    }
  }

  SUBCASE("batches of one are refused") {
    ModelSnapshot teacher = build_model("toy-bn-1", 2, 3);
    CHECK(testutil::threw_code(ErrorCode::invalid_argument, [&] {
      statistic_matching_loss(random_images(1, 3), {0}, teacher, 1.0);
    }));
  }

  SUBCASE("non-finite activations abort with the layer id") {
    ModelSnapshot teacher = build_model("toy-bn-1", 2, 3);
    Tensor batch = random_images(2, 3);
    batch[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      statistic_matching_loss(batch, {0, 1}, teacher, 1.0);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::nan_in_activation);
      CHECK(std::string(e.what()).find("stem.conv") != std::string::npos);
    }
  }
}

TEST_CASE("distill") {
  TempDir tmp("synthesis_distill");
  LabeledDataset ds = make_blob_dataset(2, 12, 3, 32, 32, 0.12, 41, "distill-data");
  PoolManifest pool = tiny_pool(tmp.path() / "pool", ds, 4, 43);

  SynthesisConfig cfg;
  cfg.iterations = 30;
  cfg.ensemble_n = 2;
  cfg.u = 1.0;
  cfg.lr = 0.05;
  cfg.seed = 47;
  cfg.init_mode = InitMode::noise;

  SUBCASE("zero learning rate leaves the initialization untouched") {
    SyntheticDataset init = init_synthetic(ds, 2, InitMode::noise, 1);
    SynthesisConfig frozen = cfg;
    frozen.lr = 0.0;
    frozen.iterations = 1;
    DistillResult r = distill(pool, init, frozen);
    CHECK(bitwise_equal(r.synth.images, init.images));
    CHECK(r.history.size() == 1);
  }

  SUBCASE("statistic matching converges on the overparameterized toy case") {
    // Single teacher, trained far enough that its running statistics
    // describe the data rather than their (0,1) initialization; targets are
    // then reachable from clamped pixels.
    ModelSnapshot base = build_model("toy-bn-1", 2, 43);
    OptimizerSettings hp;
    hp.lr = 0.05;
    hp.batch_size = 16;
    hp.schedule = LrSchedule::constant;
    hp.seed = 43;
    PriorPoolOptions opt;
    opt.stage_unit = StageUnit::step;
    PoolManifest single = generate_prior_pool(base, ds, {40, 40, 1}, hp, tmp.path() / "single", opt);

    SynthesisConfig long_run = cfg;
    long_run.iterations = 500;
    long_run.u = 0.0;
    long_run.ensemble_n = 1;
    DistillResult r = distill(single, ds, 2, long_run);
    double initial = r.history.front().mean_term + r.history.front().var_term;
    double final_terms = r.history.back().mean_term + r.history.back().var_term;
    CHECK(final_terms < 0.1 * initial);
  }

  SUBCASE("teachers, hard labels, and class balance are never touched") {
    std::vector<ModelSnapshot> before;
    for (Index i = 0; i < pool.size(); ++i) before.push_back(load_pool_entry(pool, i));
    SyntheticDataset init = init_synthetic(ds, 3, InitMode::real, 7);
    std::vector<int> labels_before = init.hard_labels;

    DistillResult r = distill(pool, init, cfg);
    CHECK(r.synth.hard_labels == labels_before);
    CHECK_FALSE(r.synth.soft_labels.has_value());
    for (Index i = 0; i < pool.size(); ++i) {
      ModelSnapshot after = load_pool_entry(pool, i);
      CHECK(models_equal(before[static_cast<std::size_t>(i)], after));
    }
    // Pixels stay clamped in range.
    for (double v : r.synth.images.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  SUBCASE("loss decreases on the shipped fixture configuration") {
    SynthesisConfig run = cfg;
    run.iterations = 120;
    DistillResult r = distill(pool, ds, 2, run);
    CHECK(r.history.back().total < r.history.front().total);
  }

  SUBCASE("breakdown aggregates the per-teacher means") {
    DistillResult r = distill(pool, ds, 2, cfg);
    for (const auto& entry : r.history) {
      REQUIRE(entry.per_teacher.size() == 2);
      double mean_total = 0.0;
      for (const auto& t : entry.per_teacher) mean_total += t.total;
      mean_total /= static_cast<double>(entry.per_teacher.size());
      CHECK(entry.total == doctest::Approx(mean_total).epsilon(1e-9));
    }
  }

  SUBCASE("identical configs give bit-identical synthetic images") {
    DistillResult a = distill(pool, ds, 2, cfg);
    DistillResult b = distill(pool, ds, 2, cfg);
    CHECK(bitwise_equal(a.synth.images, b.synth.images));
  }

  SUBCASE("per-image subsets mode runs and stays deterministic") {
    SynthesisConfig per_image = cfg;
    per_image.per_image_subsets = true;
    per_image.iterations = 10;
    DistillResult a = distill(pool, ds, 2, per_image);
    DistillResult b = distill(pool, ds, 2, per_image);
    CHECK(bitwise_equal(a.synth.images, b.synth.images));
    a.synth.validate();
  }

  SUBCASE("ensemble beyond the pool is refused") {
    SynthesisConfig big = cfg;
    big.ensemble_n = 40;
    CHECK(testutil::threw_code(ErrorCode::n_exceeds_pool, [&] { distill(pool, ds, 2, big); }));
  }

  SUBCASE("divergence guard aborts a blown-up run") {
    SynthesisConfig wild = cfg;
    wild.lr = 1e7;
    wild.clamp_pixels = false;
    wild.iterations = 400;
    CHECK(testutil::threw_code(ErrorCode::divergence, [&] { distill(pool, ds, 2, wild); }));
  }
}

TEST_CASE("student trajectory objective") {
  TempDir tmp("synthesis_traj");
  LabeledDataset ds = make_blob_dataset(2, 10, 3, 32, 32, 0.1, 53, "traj-data");
  ModelSnapshot model = build_model("toy-bn-1", 2, 59);
  OptimizerSettings hp;
  hp.seed = 3;
  hp.batch_size = 10;

  Tensor synth_images = random_images(4, 61);
  std::vector<int> synth_labels = {0, 1, 0, 1};

  SUBCASE("coincides with statistic_matching_loss when real stats equal running stats") {
    ModelSnapshot refreshed = model;
    refresh_stats_from(refreshed, ds.images);
    double traj = student_trajectory_loss(synth_images, synth_labels, {refreshed}, ds, 1.0);
    double direct = statistic_matching_loss(synth_images, synth_labels, refreshed, 1.0).total;
    CHECK(traj == doctest::Approx(direct).epsilon(1e-4));
  }

  SUBCASE("additive across checkpoints") {
    std::vector<ModelSnapshot> traj;
    ModelSnapshot live = model;
    for (int k = 0; k < 3; ++k) {
      live = train_steps(live, ds, 2, hp);
      traj.push_back(live);
    }
    double whole = student_trajectory_loss(synth_images, synth_labels, traj, ds, 0.5);
    double parts = 0.0;
    for (const auto& checkpoint : traj)
      parts += student_trajectory_loss(synth_images, synth_labels, {checkpoint}, ds, 0.5);
    CHECK(whole == doctest::Approx(parts).epsilon(1e-9));
  }

  SUBCASE("empty trajectory is refused") {
    CHECK(testutil::threw_code(ErrorCode::invalid_argument, [&] {
      student_trajectory_loss(synth_images, synth_labels, {}, ds, 1.0);
    }));
  }

  SUBCASE("size caps are enforced") {
    LabeledDataset big = make_blob_dataset(2, 300, 3, 8, 8, 0.1, 3, "big");
    CHECK(testutil::threw_code(ErrorCode::size_cap_exceeded, [&] {
      student_trajectory_loss(synth_images, synth_labels, {model}, big, 1.0);
    }));
  }
}

TEST_CASE("augmentation") {
  Tensor batch = random_images(3, 67);

  SUBCASE("none is the identity") {
    Tensor out = augment_batch(batch, AugmentMode::none, 5);
    CHECK(bitwise_equal(out, batch));
  }

  SUBCASE("same seed gives identical outputs") {
    Tensor a = augment_batch(batch, AugmentMode::dsa_basic, 5);
    Tensor b = augment_batch(batch, AugmentMode::dsa_basic, 5);
    CHECK(bitwise_equal(a, b));
  }

  SUBCASE("flip mode mirrors pixels index-wise") {
    Tensor out = augment_batch(batch, AugmentMode::flip, 5);
    const Index W = batch.shape[3];
    for (Index b = 0; b < 3; ++b)
      for (Index c = 0; c < 3; ++c)
        for (Index y = 0; y < batch.shape[2]; ++y)
          for (Index x = 0; x < W; ++x)
            CHECK(out.at4(b, c, y, x) == batch.at4(b, c, y, W - 1 - x));
  }

  SUBCASE("unknown mode is refused") {
    CHECK(testutil::threw_code(ErrorCode::unknown_mode, [&] { parse_augment_mode("cutout"); }));
  }

  SUBCASE("backprop_augment is the exact adjoint of apply_augment") {
    AugmentPlan plan = make_augment_plan(AugmentMode::dsa_basic, 11, 3, 3);
    Tensor x = random_images(3, 71);
    Tensor y = random_images(3, 73);
    Tensor ax = apply_augment(x, plan);
    Tensor aty = backprop_augment(y, plan);
    // <A x, y> == <x, A^T y> up to the affine brightness offset.
    double lhs = dot(ax, y);
    double rhs = dot(x, aty);
    double offset = 0.0;
    for (Index b = 0; b < 3; ++b) {
      const ImageAugment& a = plan.per_image[static_cast<std::size_t>(b)];
      for (Index i = 0; i < y.numel() / 3; ++i) offset += a.brightness * y[b * (y.numel() / 3) + i];
    }
    CHECK(lhs - offset == doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("loss history io") {
  TempDir tmp("synthesis_hist");
  std::vector<LossBreakdown> history(3);
  for (std::size_t i = 0; i < 3; ++i) {
    history[i].mean_term = 1.0 + static_cast<double>(i);
    history[i].var_term = 0.5;
    history[i].ce_term = 2.0;
    history[i].total = history[i].mean_term + history[i].var_term + history[i].ce_term;
  }
  save_loss_history(history, tmp.path() / "loss.tsv");
  auto back = load_loss_history(tmp.path() / "loss.tsv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].mean_term == doctest::Approx(history[i].mean_term));
    CHECK(back[i].total == doctest::Approx(history[i].total));
  }
}
