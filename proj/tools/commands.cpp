#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "teddy/container.hpp"
#include "teddy/dataset.hpp"
#include "teddy/experiment.hpp"
#include "teddy/labeling.hpp"
#include "teddy/pool.hpp"
#include "teddy/rng.hpp"
#include "teddy/synthesis.hpp"
#include "teddy/theory.hpp"

namespace teddy::cli {

using nlohmann::json;

Env Env::from_process() {
  Env env;
  const char* data = std::getenv("TEDDY_DATA_ROOT");
  const char* out = std::getenv("TEDDY_OUT_ROOT");
  env.data_root = data ? data : ".";
  env.out_root = out ? out : ".";
  return env;
}

namespace {

std::ostream& out_stream(const Env& env) { return env.out ? *env.out : std::cout; }

// JSON access with schema-violation errors that carry the full field path.
class ConfigView {
 public:
  ConfigView(std::shared_ptr<const json> root, const json& node, std::string path)
      : root_(std::move(root)), j_(&node), path_(std::move(path)) {}

  static ConfigView load(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f.good()) fail(ErrorCode::missing_files, file.string());
    json parsed = json::parse(f, nullptr, false);
    if (parsed.is_discarded())
      fail(ErrorCode::schema_violation, "config is not valid JSON: " + file.string());
    auto root = std::make_shared<const json>(std::move(parsed));
    const json& node = *root;
    return ConfigView(root, node, "");
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  ConfigView child(const std::string& key) const {
    require_key(key);
    return ConfigView(root_, (*j_)[key], join(key));
  }

  // An absent optional section: get_or on it returns fallbacks everywhere.
  ConfigView empty_child(const std::string& key) const {
    static const json empty = json::object();
    return ConfigView(root_, empty, join(key));
  }

  template <typename T>
  T get(const std::string& key) const {
    require_key(key);
    try {
      return (*j_)[key].get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::schema_violation, "field " + join(key) + " has the wrong type");
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    if (!j_->contains(key)) return fallback;
    return get<T>(key);
  }

  const json& raw() const { return *j_; }

 private:
  void require_key(const std::string& key) const {
    if (!j_->contains(key)) fail(ErrorCode::schema_violation, "missing required field " + join(key));
  }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::shared_ptr<const json> root_;
  const json* j_;
  std::string path_;
};

std::filesystem::path resolve_out(const Env& env, const std::string& out) {
  std::filesystem::path p(out);
  return p.is_absolute() ? p : env.out_root / p;
}

std::filesystem::path resolve_data_root(const Env& env, const ConfigView& data) {
  return data.has("root") ? std::filesystem::path(data.get<std::string>("root")) : env.data_root;
}

LabeledDataset load_data_section(const Env& env, const ConfigView& data) {
  return load_dataset(data.get<std::string>("name"), resolve_data_root(env, data));
}

void refuse_existing_output(const std::filesystem::path& dir, const Env& env) {
  const bool populated = std::filesystem::exists(dir / "record.json") ||
                         std::filesystem::exists(dir / "manifest") ||
                         std::filesystem::exists(dir / "manifest.json");
  if (populated && !env.force)
    fail(ErrorCode::locked_output,
         "output " + dir.string() + " already holds an artifact; pass --force to replace");
  if (populated && env.force) std::filesystem::remove_all(dir);
}

OptimizerSettings optimizer_from(const ConfigView& hp, std::uint64_t seed) {
  OptimizerSettings s;
  s.lr = hp.get_or<double>("lr", 0.2);
  s.momentum = hp.get_or<double>("momentum", 0.9);
  s.weight_decay = hp.get_or<double>("weight_decay", 1e-4);
  s.batch_size = hp.get_or<Index>("batch_size", 64);
  s.schedule = parse_lr_schedule(hp.get_or<std::string>("lr_schedule", "cosine"));
  s.schedule_step_size = hp.get_or<Index>("lr_step_size", 30);
  s.schedule_gamma = hp.get_or<double>("lr_gamma", 0.1);
  s.bn_momentum = hp.get_or<double>("bn_momentum", 0.1);
  s.seed = seed;
  return s;
}

EvalSettings eval_settings_from(const ConfigView& hp) {
  EvalSettings s;
  s.epochs = hp.get_or<Index>("epochs", 200);
  s.batch_size = hp.get_or<Index>("batch_size", 100);
  s.lr = hp.get_or<double>("lr", 1e-3);
  s.weight_decay = hp.get_or<double>("weight_decay", 0.01);
  if (hp.has("betas")) {
    auto betas = hp.get<std::vector<double>>("betas");
    if (betas.size() == 2) {
      s.beta1 = betas[0];
      s.beta2 = betas[1];
    }
  }
  s.schedule = parse_lr_schedule(hp.get_or<std::string>("lr_schedule", "cosine"));
  s.augment = parse_augment_mode(hp.get_or<std::string>("augment", "none"));
  s.cutmix = hp.get_or<bool>("cutmix", false);
  s.bn_momentum = hp.get_or<double>("bn_momentum", 0.1);
  return s;
}

std::string parent_record_id(const std::filesystem::path& dir) {
  return has_record(dir) ? read_record(dir).id : std::string{};
}

int run_guarded(const Env& env, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const Error& e) {
    out_stream(env) << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::schema_violation:
      case ErrorCode::invalid_argument:
      case ErrorCode::unknown_mode:
      case ErrorCode::unknown_architecture:
      case ErrorCode::locked_output:
        return kExitValidation;
      default:
        return kExitRuntime;
    }
  } catch (const std::exception& e) {
    out_stream(env) << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

// -------------------------------------------------------------------- pools

int cmd_pool_prior(const std::filesystem::path& config_path, const Env& env) {
  return run_guarded(env, [&] {
    ConfigView cfg = ConfigView::load(config_path);
    const auto seed = cfg.get<std::uint64_t>("seed");
    LabeledDataset ds = load_data_section(env, cfg.child("data"));

    ConfigView window = cfg.child("window");
    PriorWindow w;
    w.t_begin = window.get<Index>("T_b");
    w.t_end = window.get<Index>("T_e");
    w.stride = window.get<Index>("m");

    PriorPoolOptions options;
    options.stage_unit = parse_stage_unit(cfg.get_or<std::string>("stage_unit", "epoch"));
    options.max_stage = cfg.get_or<Index>("max_stage", 200);

    const std::string arch = cfg.get_or<std::string>("arch", "convnet-3");
    ModelSnapshot base = build_model(arch, ds.class_count, derive_seed(seed, "base-init"));
    OptimizerSettings hp =
        optimizer_from(cfg.has("hp") ? cfg.child("hp") : cfg.empty_child("hp"), derive_seed(seed, "pool-train"));

    const auto out_dir = resolve_out(env, cfg.get<std::string>("out"));
    refuse_existing_output(out_dir, env);
    DirLock lock(out_dir);

    PoolManifest pool = generate_prior_pool(base, ds, w, hp, out_dir, options);

    ExperimentRecord record = ExperimentRecord::create(
        "pool-prior", cfg.raw(),
        {{"dataset:" + ds.name, checksum_hex(fnv1a64(ds.images.data.data(), ds.images.data.size() * 8))}});
    record.outputs = {out_dir.string()};
    record.metrics = {{"entries", pool.size()},
                      {"first_stage", pool.entries.front().stage},
                      {"last_stage", pool.entries.back().stage}};
    write_record(record, out_dir);
    out_stream(env) << "pool-prior: " << pool.size() << " entries at " << out_dir.string() << "\n";
  });
}

int cmd_pool_post(const std::filesystem::path& config_path, const Env& env) {
  return run_guarded(env, [&] {
    ConfigView cfg = ConfigView::load(config_path);
    const auto seed = cfg.get<std::uint64_t>("seed");
    LabeledDataset ds = load_data_section(env, cfg.child("data"));

    ModelSnapshot base = [&] {
      if (cfg.has("base_model")) {
        auto path = std::filesystem::path(cfg.get<std::string>("base_model"));
        if (path.is_relative()) path = env.out_root / path;
        return load_model(path);
      }
      ConfigView bc = cfg.child("base");
      ModelSnapshot fresh = build_model(bc.get_or<std::string>("arch", "convnet-3"), ds.class_count,
                                        derive_seed(seed, "base-init"));
      OptimizerSettings hp =
          optimizer_from(bc.has("hp") ? bc.child("hp") : bc.empty_child("hp"), derive_seed(seed, "base-train"));
      const Index epochs = bc.get_or<Index>("train_epochs", 2);
      const Index steps = epochs * std::max<Index>(1, ds.size() / std::max<Index>(2, hp.batch_size));
      return train_steps(fresh, ds, steps, hp);
    }();

    ConfigView prune = cfg.child("prune");
    PruneSpec spec;
    spec.target_flops_ratio = prune.get<double>("target_flops_ratio");
    spec.finetune_steps = prune.get_or<Index>("finetune_steps", 0);
    spec.group_selection = prune.get_or<std::string>("group_selection", "random");
    spec.seed = derive_seed(seed, "prune");
    const Index count = cfg.get<Index>("count");
    const bool strict = cfg.get_or<bool>("strict", true);

    OptimizerSettings hp =
        optimizer_from(cfg.has("hp") ? cfg.child("hp") : cfg.empty_child("hp"), derive_seed(seed, "finetune"));

    const auto out_dir = resolve_out(env, cfg.get<std::string>("out"));
    refuse_existing_output(out_dir, env);
    DirLock lock(out_dir);

    PoolManifest pool = generate_post_pool(base, ds, spec, count, hp, out_dir, strict);

    ExperimentRecord record = ExperimentRecord::create("pool-post", cfg.raw(), {});
    record.outputs = {out_dir.string()};
    record.metrics = {{"entries", pool.size()}, {"base_flops", base.flops()}};
    write_record(record, out_dir);
    out_stream(env) << "pool-post: " << pool.size() << " variants at " << out_dir.string() << "\n";
  });
}

// ------------------------------------------------------------------ distill

int cmd_distill(const std::filesystem::path& config_path, const Env& env) {
  return run_guarded(env, [&] {
    ConfigView cfg = ConfigView::load(config_path);
    const auto seed = cfg.get<std::uint64_t>("seed");

    const auto pool_dir = resolve_out(env, cfg.get<std::string>("pool"));
    PoolManifest pool = load_pool_manifest(pool_dir);
    LabeledDataset ds = load_data_section(env, cfg.child("data"));
    const auto ipc = cfg.get<Index>("ipc");

    ConfigView sc = cfg.child("synthesis");
    SynthesisConfig synth_cfg;
    synth_cfg.iterations = sc.get_or<Index>("iterations", 4000);
    synth_cfg.batch_size = sc.get_or<Index>("batch_size", 0);
    synth_cfg.ensemble_n = sc.get_or<Index>("ensemble_n", 3);
    synth_cfg.u = sc.get_or<double>("u", 1.0);
    synth_cfg.lr = sc.get_or<double>("lr", 0.1);
    if (sc.has("betas")) {
      auto betas = sc.get<std::vector<double>>("betas");
      if (betas.size() == 2) {
        synth_cfg.beta1 = betas[0];
        synth_cfg.beta2 = betas[1];
      }
    }
    synth_cfg.lr_schedule = parse_lr_schedule(sc.get_or<std::string>("lr_schedule", "cosine"));
    synth_cfg.init_mode = parse_init_mode(sc.get_or<std::string>("init", "noise"));
    synth_cfg.augment = parse_augment_mode(sc.get_or<std::string>("augment", "none"));
    synth_cfg.clamp_pixels = sc.get_or<bool>("clamp_pixels", true);
    synth_cfg.per_image_subsets = sc.get_or<bool>("per_image_subsets", false);
    synth_cfg.seed = derive_seed(seed, "distill");

    const auto out_dir = resolve_out(env, cfg.get<std::string>("out"));
    refuse_existing_output(out_dir, env);
    DirLock lock(out_dir);

    DistillResult result = distill(pool, ds, ipc, synth_cfg);

    save_loss_history(result.history, out_dir / "loss_history.tsv");
    json extra;
    extra["pool_checksum"] = checksum_hex(file_checksum(pool_dir / "manifest"));
    extra["config_hash"] = checksum_hex(fnv1a64(cfg.raw().dump()));
    extra["loss_history"] = "loss_history.tsv";
    save_synthetic(result.synth, out_dir, extra.dump());

    ExperimentRecord record = ExperimentRecord::create(
        "distill", cfg.raw(), {{"pool", checksum_hex(file_checksum(pool_dir / "manifest"))}});
    if (auto pid = parent_record_id(pool_dir); !pid.empty()) record.parents["pool"] = pid;
    record.outputs = {out_dir.string()};
    record.metrics = {{"iterations", synth_cfg.iterations},
                      {"initial_total", result.history.front().total},
                      {"final_total", result.history.back().total}};
    write_record(record, out_dir);
    out_stream(env) << "distill: " << result.synth.size() << " images, total "
                    << result.history.front().total << " -> " << result.history.back().total << " at "
                    << out_dir.string() << "\n";
  });
}

int cmd_relabel(const std::filesystem::path& config_path, const Env& env) {
  return run_guarded(env, [&] {
    ConfigView cfg = ConfigView::load(config_path);
    const auto seed = cfg.get<std::uint64_t>("seed");

    const auto synth_dir = resolve_out(env, cfg.get<std::string>("synth"));
    const auto pool_dir = resolve_out(env, cfg.get<std::string>("pool"));
    SyntheticDataset synth = load_synthetic(synth_dir);
    PoolManifest pool = load_pool_manifest(pool_dir);
    AugmentMode augment = parse_augment_mode(cfg.get_or<std::string>("augment", "dsa-basic"));

    const auto out_dir = resolve_out(env, cfg.get<std::string>("out"));
    refuse_existing_output(out_dir, env);
    DirLock lock(out_dir);

    SyntheticDataset labeled = relabel(synth, pool, augment, derive_seed(seed, "relabel"));

    json extra = json::parse(load_synthetic_manifest(synth_dir));
    extra.erase("checksum");
    extra["relabel_pool_checksum"] = checksum_hex(file_checksum(pool_dir / "manifest"));
    save_synthetic(labeled, out_dir, extra.dump());

    ExperimentRecord record = ExperimentRecord::create(
        "relabel", cfg.raw(), {{"synth", checksum_hex(file_checksum(synth_dir / "data.tdy"))},
                               {"pool", checksum_hex(file_checksum(pool_dir / "manifest"))}});
    if (auto pid = parent_record_id(synth_dir); !pid.empty()) record.parents["distill"] = pid;
    if (auto pid = parent_record_id(pool_dir); !pid.empty()) record.parents["pool"] = pid;
    record.outputs = {out_dir.string()};
    write_record(record, out_dir);
    out_stream(env) << "relabel: soft labels over " << pool.size() << " models at " << out_dir.string()
                    << "\n";
  });
}

// ---------------------------------------------------------------------- eval

int cmd_eval(const std::filesystem::path& config_path, const Env& env) {
  return run_guarded(env, [&] {
    ConfigView cfg = ConfigView::load(config_path);
    const auto seed = cfg.get<std::uint64_t>("seed");
    LabeledDataset test = load_data_section(env, cfg.child("data"));

    std::vector<std::uint64_t> seeds = cfg.get_or<std::vector<std::uint64_t>>(
        "seeds",
        {derive_seed(seed, "eval", 0), derive_seed(seed, "eval", 1), derive_seed(seed, "eval", 2)});
    EvalSettings hp = eval_settings_from(cfg.has("hp") ? cfg.child("hp") : cfg.empty_child("hp"));
    SoftLabelMode mode = parse_soft_label_mode(cfg.get_or<std::string>("soft_label_mode", "none"));

    std::vector<std::string> archs;
    if (cfg.has("archs")) archs = cfg.get<std::vector<std::string>>("archs");
    else archs.push_back(cfg.get_or<std::string>("arch", "convnet-3"));

    const auto out_dir = resolve_out(env, cfg.get<std::string>("out"));
    refuse_existing_output(out_dir, env);
    DirLock lock(out_dir);

    std::optional<PoolManifest> pool;
    std::filesystem::path pool_dir;
    if (cfg.has("pool")) {
      pool_dir = resolve_out(env, cfg.get<std::string>("pool"));
      pool = load_pool_manifest(pool_dir);
    }

    ExperimentRecord record = ExperimentRecord::create("eval", cfg.raw(), {});
    std::vector<EvalReport> reports;
    json metrics = json::array();

    if (cfg.has("random_baseline")) {
      ConfigView rb = cfg.child("random_baseline");
      LabeledDataset train = load_data_section(env, rb.child("data"));
      reports.push_back(random_baseline(train, rb.get<Index>("ipc"), archs.front(), test, seeds, hp));
    } else {
      const auto synth_dir = resolve_out(env, cfg.get<std::string>("synth"));
      SyntheticDataset synth = load_synthetic(synth_dir);
      record.input_checksums["synth"] = checksum_hex(file_checksum(synth_dir / "data.tdy"));
      if (auto pid = parent_record_id(synth_dir); !pid.empty()) record.parents["distill"] = pid;
      reports = cross_arch_evaluate(synth, archs, test, seeds, hp, mode, pool ? &*pool : nullptr);
    }
    if (pool) {
      record.input_checksums["pool"] = checksum_hex(file_checksum(pool_dir / "manifest"));
      if (auto pid = parent_record_id(pool_dir); !pid.empty()) record.parents["pool"] = pid;
    }

    std::ostream& os = out_stream(env);
    os << std::left << std::setw(18) << "arch" << "accuracy (mean +/- std over " << seeds.size()
       << " seeds)\n";
    for (const EvalReport& r : reports) {
      std::ofstream rf(out_dir / ("report_" + r.arch_id + ".json"));
      rf << eval_report_to_json(r) << "\n";
      os << std::left << std::setw(18) << r.arch_id << std::fixed << std::setprecision(2)
         << 100.0 * r.mean << " +/- " << 100.0 * r.std_dev << "\n";
      metrics.push_back({{"arch", r.arch_id}, {"mean", r.mean}, {"std", r.std_dev}});
    }

    record.outputs = {out_dir.string()};
    record.metrics = {{"reports", metrics}, {"soft_label_mode", soft_label_mode_name(mode)}};
    write_record(record, out_dir);
  });
}

// -------------------------------------------------------------------- verify

int cmd_verify(const std::string& selector, std::uint64_t seed, const std::filesystem::path& report_path,
               const Env& env) {
  int failures = 0;
  int matched = 0;
  try {
    auto results = run_all_checks(seed);
    std::ofstream report;
    if (!report_path.empty()) {
      if (report_path.has_parent_path()) std::filesystem::create_directories(report_path.parent_path());
      report.open(report_path);
    }
    std::ostream& os = out_stream(env);
    for (const auto& r : results) {
      if (selector != "all" && r.check_id.find(selector) == std::string::npos) continue;
      ++matched;
      if (!r.passed) ++failures;
      os << (r.passed ? "[PASS] " : "[FAIL] ") << r.check_id << "  lhs=" << r.lhs << " " << r.relation
         << " rhs=" << r.rhs << " (tol " << r.tolerance << ")\n";
      if (report.is_open()) {
        json line{{"check_id", r.check_id}, {"inputs_digest", r.inputs_digest}, {"lhs", r.lhs},
                  {"rhs", r.rhs},           {"relation", r.relation},           {"tolerance", r.tolerance},
                  {"passed", r.passed},     {"detail", r.detail}};
        report << line.dump() << "\n";
      }
    }
    if (matched == 0) {
      os << "error: no checks match selector '" << selector << "'\n";
      return kExitValidation;
    }
    os << matched - failures << "/" << matched << " checks passed\n";
  } catch (const Error& e) {
    out_stream(env) << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return failures == 0 ? kExitOk : kExitCheckFailure;
}

// -------------------------------------------------------------------- report

int cmd_report(const std::filesystem::path& artifact_dir, const Env& env) {
  return run_guarded(env, [&] {
    if (!has_record(artifact_dir)) fail(ErrorCode::missing_files, (artifact_dir / "record.json").string());
    ExperimentRecord record = read_record(artifact_dir);
    std::ostream& os = out_stream(env);
    os << "record " << record.id << "\n"
       << "  command:    " << record.command << "\n"
       << "  created_at: " << record.created_at << "\n";
    for (const auto& [phase, id] : record.parents) os << "  parent[" << phase << "]: " << id << "\n";
    for (const auto& [name, checksum] : record.input_checksums)
      os << "  input " << name << ": " << checksum << "\n";
    if (!record.metrics.empty()) os << "  metrics: " << record.metrics.dump() << "\n";
    for (const auto& out : record.outputs) os << "  output: " << out << "\n";
  });
}

}  // namespace teddy::cli
