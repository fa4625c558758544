#include "teddy/pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "teddy/container.hpp"
#include "teddy/network.hpp"
#include "teddy/rng.hpp"

namespace teddy {

using nlohmann::json;

StageUnit parse_stage_unit(const std::string& s) {
  if (s == "epoch") return StageUnit::epoch;
  if (s == "step") return StageUnit::step;
  fail(ErrorCode::unknown_mode, "stage unit must be epoch or step, got " + s);
}

std::string stage_unit_name(StageUnit u) { return u == StageUnit::epoch ? "epoch" : "step"; }

void PoolManifest::validate() const {
  require(!entries.empty(), ErrorCode::invalid_argument, "pool has no entries");
  if (strategy == "prior") {
    for (std::size_t i = 1; i < entries.size(); ++i)
      require(entries[i].stage > entries[i - 1].stage, ErrorCode::corrupt_record,
              "prior pool stages must be strictly increasing");
    if (window)
      require(static_cast<Index>(entries.size()) == window->entry_count(), ErrorCode::corrupt_record,
              "prior pool entry count does not match its window");
  }
}

// ---------------------------------------------------------------- manifest io

void save_pool_manifest(const PoolManifest& pool) {
  json j;
  j["strategy"] = pool.strategy;
  j["base_model"] = pool.base_model;
  json entries = json::array();
  for (const auto& e : pool.entries)
    entries.push_back(json{{"snapshot", e.snapshot},
                           {"stage", e.stage},
                           {"param_count", e.param_count},
                           {"flops", e.flops},
                           {"note", e.note},
                           {"checksum", e.checksum}});
  j["entries"] = entries;
  if (pool.window)
    j["window"] = json{{"T_b", pool.window->t_begin}, {"T_e", pool.window->t_end}, {"m", pool.window->stride}};
  if (pool.prune_spec)
    j["prune_spec"] = json{{"target_flops_ratio", pool.prune_spec->target_flops_ratio},
                           {"finetune_steps", pool.prune_spec->finetune_steps},
                           {"group_selection", pool.prune_spec->group_selection},
                           {"seed", pool.prune_spec->seed}};
  std::filesystem::create_directories(pool.dir);
  std::ofstream f(pool.dir / "manifest");
  require(f.good(), ErrorCode::io_failure, "cannot write pool manifest under " + pool.dir.string());
  f << j.dump(2) << "\n";
}

PoolManifest load_pool_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest");
  if (!f.good()) fail(ErrorCode::missing_files, (dir / "manifest").string());
  json j = json::parse(f);

  PoolManifest pool;
  pool.dir = dir;
  pool.strategy = j.at("strategy").get<std::string>();
  pool.base_model = j.value("base_model", "");
  for (const auto& je : j.at("entries")) {
    PoolEntry e;
    e.snapshot = je.at("snapshot").get<std::string>();
    e.stage = je.at("stage").get<Index>();
    e.param_count = je.at("param_count").get<Index>();
    e.flops = je.at("flops").get<Index>();
    e.note = je.value("note", "");
    e.checksum = je.value("checksum", "");
    pool.entries.push_back(std::move(e));
  }
  if (j.contains("window")) {
    PriorWindow w;
    w.t_begin = j["window"].at("T_b").get<Index>();
    w.t_end = j["window"].at("T_e").get<Index>();
    w.stride = j["window"].at("m").get<Index>();
    pool.window = w;
  }
  if (j.contains("prune_spec")) {
    PruneSpec spec;
    spec.target_flops_ratio = j["prune_spec"].at("target_flops_ratio").get<double>();
    spec.finetune_steps = j["prune_spec"].at("finetune_steps").get<Index>();
    spec.group_selection = j["prune_spec"].value("group_selection", "random");
    spec.seed = j["prune_spec"].at("seed").get<std::uint64_t>();
    pool.prune_spec = spec;
  }
  pool.validate();
  return pool;
}

ModelSnapshot load_pool_entry(const PoolManifest& pool, Index index) {
  require(index >= 0 && index < pool.size(), ErrorCode::invalid_argument, "pool entry index out of range");
  const PoolEntry& e = pool.entries[static_cast<std::size_t>(index)];
  const auto path = pool.dir / e.snapshot;
  if (!std::filesystem::exists(path)) fail(ErrorCode::dangling_artifact, path.string());
  if (!e.checksum.empty() && checksum_hex(file_checksum(path)) != e.checksum)
    fail(ErrorCode::checksum_failure, "pool entry checksum mismatch: " + path.string());
  return load_model(path);
}

namespace {

std::string save_entry_snapshot(const ModelSnapshot& model, const std::filesystem::path& dir,
                                const std::string& label, std::string* checksum_out) {
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (".tmp_" + label + ".tdy");
  save_model(model, tmp);
  std::string checksum = checksum_hex(file_checksum(tmp));
  std::string name = "ckpt_" + label + "_" + checksum.substr(0, 12) + ".tdy";
  std::filesystem::rename(tmp, dir / name);
  if (checksum_out) *checksum_out = checksum;
  return name;
}

}  // namespace

// -------------------------------------------------------------- prior pools

PoolManifest generate_prior_pool(const ModelSnapshot& base, const LabeledDataset& ds,
                                 const PriorWindow& window, const OptimizerSettings& hp,
                                 const std::filesystem::path& dir, const PriorPoolOptions& options) {
  require(window.t_begin >= 0 && window.t_begin <= window.t_end, ErrorCode::invalid_argument,
          "need 0 <= T_b <= T_e");
  require(window.stride >= 1, ErrorCode::invalid_argument, "stride m must be >= 1");
  require(window.t_end <= options.max_stage, ErrorCode::invalid_argument,
          "T_e = " + std::to_string(window.t_end) + " exceeds the configured maximum of " +
              std::to_string(options.max_stage) + " stages");
  require(base.stage <= window.t_begin, ErrorCode::invalid_argument,
          "base model is already past T_b");

  const Index N = ds.size();
  const Index B = std::max<Index>(2, std::min(hp.batch_size, N));
  const Index steps_per_stage = options.stage_unit == StageUnit::epoch ? std::max<Index>(1, N / B) : 1;

  PoolManifest pool;
  pool.dir = dir;
  pool.strategy = "prior";
  pool.window = window;

  std::string base_checksum;
  pool.base_model = save_entry_snapshot(base, dir, "base", &base_checksum);

  const Index total_steps = (window.t_end - base.stage) * steps_per_stage;
  OptimizerSettings run_hp = hp;
  run_hp.horizon_steps = total_steps;

  // Cache points in stage units, relative to the base stage.
  std::vector<Index> cache_stages;
  for (Index t = window.t_begin; t <= window.t_end; t += window.stride) cache_stages.push_back(t);

  std::size_t next_cache = 0;
  // Degenerate window starting at the base stage itself.
  if (!cache_stages.empty() && cache_stages[0] == base.stage) {
    ModelSnapshot snap = base;
    snap.stage = base.stage;
    PoolEntry e;
    e.stage = snap.stage;
    e.param_count = snap.param_count();
    e.flops = snap.flops();
    e.note = "stage " + std::to_string(snap.stage) + " (" + stage_unit_name(options.stage_unit) + ")";
    e.snapshot = save_entry_snapshot(snap, dir, "s" + std::to_string(snap.stage), &e.checksum);
    pool.entries.push_back(e);
    ++next_cache;
  }

  train_steps_observed(base, ds, total_steps, run_hp, [&](const ModelSnapshot& live, Index step) {
    if (next_cache >= cache_stages.size()) return;
    const Index stage_now = base.stage + step / steps_per_stage;
    if (step % steps_per_stage != 0 || stage_now != cache_stages[next_cache]) return;
    ModelSnapshot snap = live;
    snap.stage = stage_now;
    PoolEntry e;
    e.stage = stage_now;
    e.param_count = snap.param_count();
    e.flops = snap.flops();
    e.note = "stage " + std::to_string(stage_now) + " (" + stage_unit_name(options.stage_unit) + ")";
    e.snapshot = save_entry_snapshot(snap, dir, "s" + std::to_string(stage_now), &e.checksum);
    pool.entries.push_back(e);
    ++next_cache;
  });

  pool.validate();
  save_pool_manifest(pool);
  return pool;
}

// ------------------------------------------------------------------ pruning

namespace {

// Channel-dependency analysis over an architecture graph. Every conv output
// opens a channel "source"; channel-preserving layers propagate it, residual
// adds unite the sources of both branches, and consumers record which weight
// axis must be sliced alongside.
struct ChannelGroups {
  std::vector<int> parent;  // union-find over source ids

  int find(int s) {
    while (parent[static_cast<std::size_t>(s)] != s) s = parent[static_cast<std::size_t>(s)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(s)])];
    return s;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(b)] = a;
  }

  std::vector<int> node_source;  // per layer node, source id of its output (-1 = unprunable)

  struct Members {
    std::vector<std::size_t> producer_convs;   // slice weight dim 0 (+bias)
    std::vector<std::size_t> bn_users;         // slice all per-channel vectors
    std::vector<std::size_t> consumer_convs;   // slice weight dim 1
    std::vector<std::size_t> consumer_linears; // slice weight columns
  };
};

ChannelGroups analyze_channels(const ModelSnapshot& model) {
  const auto& layers = model.schema.layers;
  ChannelGroups g;
  g.node_source.assign(layers.size(), -1);

  auto src_of = [&](int node) { return node < 0 ? -1 : g.node_source[static_cast<std::size_t>(node)]; };

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& spec = layers[li];
    switch (spec.kind) {
      case LayerKind::conv2d: {
        int s = static_cast<int>(g.parent.size());
        g.parent.push_back(s);
        g.node_source[li] = spec.trainable ? s : -1;
        break;
      }
      case LayerKind::batchnorm2d:
      case LayerKind::relu:
      case LayerKind::tanh_act:
      case LayerKind::avgpool2:
      case LayerKind::global_avgpool:
        g.node_source[li] = src_of(spec.input);
        break;
      case LayerKind::flatten:
        // Slicing through a channel-by-spatial flatten is not supported; the
        // upstream source becomes unprunable.
        g.node_source[li] = -1;
        break;
      case LayerKind::linear:
        g.node_source[li] = -1;
        break;
      case LayerKind::residual_add: {
        int a = src_of(spec.input);
        int b = src_of(spec.skip);
        if (a >= 0 && b >= 0) {
          g.unite(a, b);
          g.node_source[li] = g.find(a);
        } else {
          g.node_source[li] = std::max(a, b);
        }
        break;
      }
    }
  }
  for (auto& s : g.node_source)
    if (s >= 0) s = g.find(s);
  return g;
}

struct PruneGroup {
  int source;
  Index width;
  Index original_width;
  ChannelGroups::Members members;
};

std::vector<PruneGroup> collect_groups(const ModelSnapshot& model, ChannelGroups& g) {
  const auto& layers = model.schema.layers;
  std::map<int, PruneGroup> by_source;

  auto src_of = [&](int node) { return node < 0 ? -1 : g.node_source[static_cast<std::size_t>(node)]; };

  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& spec = layers[li];
    const int out_src = g.node_source[li];
    const int in_src = src_of(spec.input);
    switch (spec.kind) {
      case LayerKind::conv2d:
        if (out_src >= 0) {
          auto& grp = by_source[out_src];
          grp.source = out_src;
          grp.width = spec.out_channels;
          grp.members.producer_convs.push_back(li);
        }
        if (in_src >= 0) by_source[in_src].members.consumer_convs.push_back(li);
        break;
      case LayerKind::batchnorm2d:
        if (in_src >= 0) by_source[in_src].members.bn_users.push_back(li);
        break;
      case LayerKind::linear:
        if (in_src >= 0) by_source[in_src].members.consumer_linears.push_back(li);
        break;
      default: break;
    }
  }

  std::vector<PruneGroup> groups;
  for (auto& [src, grp] : by_source) {
    if (grp.members.producer_convs.empty()) continue;
    grp.source = src;
    grp.original_width = grp.width;
    groups.push_back(std::move(grp));
  }
  return groups;
}

Tensor remove_dim0(const Tensor& t, Index idx) {
  Shape s = t.shape;
  const Index block = t.numel() / s[0];
  s[0] -= 1;
  Tensor out(s);
  std::copy_n(t.ptr(), static_cast<std::size_t>(idx * block), out.ptr());
  std::copy_n(t.ptr() + (idx + 1) * block, static_cast<std::size_t>((t.shape[0] - idx - 1) * block),
              out.ptr() + idx * block);
  return out;
}

Tensor conv_remove_in_channel(const Tensor& w, Index idx) {
  // [O, I, k, k] -> [O, I-1, k, k]
  const Index O = w.shape[0], I = w.shape[1], kk = w.shape[2] * w.shape[3];
  Tensor out({O, I - 1, w.shape[2], w.shape[3]});
  for (Index o = 0; o < O; ++o) {
    const double* src = w.ptr() + o * I * kk;
    double* dst = out.ptr() + o * (I - 1) * kk;
    std::copy_n(src, static_cast<std::size_t>(idx * kk), dst);
    std::copy_n(src + (idx + 1) * kk, static_cast<std::size_t>((I - idx - 1) * kk), dst + idx * kk);
  }
  return out;
}

Tensor linear_remove_column(const Tensor& w, Index idx) {
  const Index O = w.shape[0], I = w.shape[1];
  Tensor out({O, I - 1});
  for (Index o = 0; o < O; ++o) {
    const double* src = w.ptr() + o * I;
    double* dst = out.ptr() + o * (I - 1);
    std::copy_n(src, static_cast<std::size_t>(idx), dst);
    std::copy_n(src + idx + 1, static_cast<std::size_t>(I - idx - 1), dst + idx);
  }
  return out;
}

void remove_channel(ModelSnapshot& model, const PruneGroup& grp, Index channel) {
  for (std::size_t li : grp.members.producer_convs) {
    LayerState& l = model.layers[li];
    l.weight = remove_dim0(l.weight, channel);
    if (l.bias.numel()) l.bias = remove_dim0(l.bias, channel);
    model.schema.layers[li].out_channels -= 1;
  }
  for (std::size_t li : grp.members.bn_users) {
    LayerState& l = model.layers[li];
    l.gamma = remove_dim0(l.gamma, channel);
    l.beta = remove_dim0(l.beta, channel);
    l.running_mean = remove_dim0(l.running_mean, channel);
    l.running_var = remove_dim0(l.running_var, channel);
    l.in_channels -= 1;
  }
  for (std::size_t li : grp.members.consumer_convs) {
    LayerState& l = model.layers[li];
    l.weight = conv_remove_in_channel(l.weight, channel);
    l.in_channels -= 1;
  }
  for (std::size_t li : grp.members.consumer_linears) {
    LayerState& l = model.layers[li];
    l.weight = linear_remove_column(l.weight, channel);
    l.in_channels -= 1;
  }
}

}  // namespace

ModelSnapshot prune_to_ratio(const ModelSnapshot& base, double target_flops_ratio, std::uint64_t seed) {
  require(target_flops_ratio > 0.0 && target_flops_ratio < 1.0, ErrorCode::invalid_argument,
          "target_flops_ratio must lie in (0,1)");

  ModelSnapshot model = base;
  ChannelGroups graph = analyze_channels(model);
  std::vector<PruneGroup> groups = collect_groups(model, graph);
  if (groups.empty())
    fail(ErrorCode::infeasible_ratio, "architecture " + model.schema.arch_id + " has no prunable channels");

  const Index base_flops = model.flops();
  const auto target = static_cast<Index>(std::floor(target_flops_ratio * static_cast<double>(base_flops)));
  Rng rng = make_rng(derive_seed(seed, "prune:" + model.schema.arch_id));

  auto floor_width = [](Index original) { return std::max<Index>(2, original / 8); };

  while (model.flops() > target) {
    std::vector<std::size_t> eligible;
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
      if (groups[gi].width > floor_width(groups[gi].original_width)) eligible.push_back(gi);
    if (eligible.empty())
      fail(ErrorCode::infeasible_ratio,
           "dependency constraints cannot reach flops ratio " + std::to_string(target_flops_ratio));

    PruneGroup& grp = groups[eligible[uniform_index(rng, eligible.size())]];
    const Index channel = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(grp.width)));
    remove_channel(model, grp, channel);
    grp.width -= 1;
  }
  return model;
}

PoolManifest generate_post_pool(const ModelSnapshot& base, const LabeledDataset& ds,
                                const PruneSpec& spec, Index count, const OptimizerSettings& hp,
                                const std::filesystem::path& dir, bool strict) {
  require(count >= 1, ErrorCode::invalid_argument, "count must be >= 1");
  require(spec.group_selection == "random", ErrorCode::unknown_mode,
          "group_selection supports only: random");
  if (base.stage <= 0) {
    if (strict) fail(ErrorCode::untrained_base, "post generation requires a trained base (stage > 0)");
    std::cerr << "warning: post-generating from an untrained base\n";
  }

  PoolManifest pool;
  pool.dir = dir;
  pool.strategy = "post";
  pool.prune_spec = spec;
  std::string base_checksum;
  pool.base_model = save_entry_snapshot(base, dir, "base", &base_checksum);

  const Index base_flops = base.flops();
  for (Index i = 0; i < count; ++i) {
    ModelSnapshot variant = prune_to_ratio(base, spec.target_flops_ratio, spec.seed + static_cast<std::uint64_t>(i));
    // Distinct finetune lengths across the pool mirror a short accuracy curve.
    Index steps = count > 1 ? (i * spec.finetune_steps) / (count - 1) : spec.finetune_steps;
    if (steps > 0) {
      OptimizerSettings ft = hp;
      ft.seed = derive_seed(hp.seed, "finetune", static_cast<std::uint64_t>(i));
      variant = train_steps(variant, ds, steps, ft);
    }
    PoolEntry e;
    e.stage = variant.stage;
    e.param_count = variant.param_count();
    e.flops = variant.flops();
    double achieved = static_cast<double>(e.flops) / static_cast<double>(base_flops);
    e.note = "pruned x" + std::to_string(achieved).substr(0, 6) + ", finetune_steps=" + std::to_string(steps);
    e.snapshot = save_entry_snapshot(variant, dir, "v" + std::to_string(i), &e.checksum);
    pool.entries.push_back(e);
  }
  pool.validate();
  save_pool_manifest(pool);
  return pool;
}

// ----------------------------------------------------------------- sampling

std::vector<Index> sample_teacher_indices(const PoolManifest& pool, Index n, std::uint64_t seed) {
  require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
  if (n > pool.size())
    fail(ErrorCode::n_exceeds_pool,
         "requested " + std::to_string(n) + " teachers from a pool of " + std::to_string(pool.size()));
  std::vector<Index> idx(static_cast<std::size_t>(pool.size()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(derive_seed(seed, "sample-teachers"));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(n));
  return idx;
}

std::vector<ModelSnapshot> sample_teachers(const PoolManifest& pool, Index n, std::uint64_t seed) {
  std::vector<ModelSnapshot> out;
  for (Index i : sample_teacher_indices(pool, n, seed)) out.push_back(load_pool_entry(pool, i));
  return out;
}

double kl_model_distance(const ModelSnapshot& a, const ModelSnapshot& b, const LabeledDataset& probe,
                         bool symmetrized) {
  require(a.class_count == b.class_count, ErrorCode::class_count_mismatch,
          "models classify " + std::to_string(a.class_count) + " vs " + std::to_string(b.class_count) +
              " classes");
  require(probe.size() > 0, ErrorCode::invalid_argument, "probe set is empty");

  Tensor pa = softmax_rows(forward_logits(a, probe.images));
  Tensor pb = softmax_rows(forward_logits(b, probe.images));
  const Index N = pa.shape[0], C = pa.shape[1];
  double forward_kl = 0.0, reverse_kl = 0.0;
  for (Index i = 0; i < N; ++i)
    for (Index c = 0; c < C; ++c) {
      double p = std::max(pa.at2(i, c), 1e-300);
      double q = std::max(pb.at2(i, c), 1e-300);
      forward_kl += p * (std::log(p) - std::log(q));
      reverse_kl += q * (std::log(q) - std::log(p));
    }
  forward_kl /= static_cast<double>(N);
  reverse_kl /= static_cast<double>(N);
  return symmetrized ? 0.5 * (forward_kl + reverse_kl) : forward_kl;
}

}  // namespace teddy
