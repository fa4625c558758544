#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "teddy/dataset.hpp"
#include "teddy/tensor.hpp"

namespace teddy {

enum class LayerKind {
  conv2d,
  batchnorm2d,
  relu,
  tanh_act,
  avgpool2,
  global_avgpool,
  flatten,
  linear,
  residual_add,
};

enum class LossKind { cross_entropy, mse };

// One node of an architecture graph. `input` / `skip` are node indices into
// the schema's layer list; -1 refers to the image batch.
struct LayerSpec {
  std::string id;
  LayerKind kind{};
  Index out_channels = 0;  // conv2d, linear
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  bool bias = false;
  bool trainable = true;
  int input = -2;  // -2 = previous node (resolved when the schema is built)
  int skip = -3;   // residual_add only
};

struct ArchSchema {
  std::string arch_id;
  Shape input_shape;  // [C, H, W] used for flops estimates and shape checks
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::cross_entropy;

  int add(LayerSpec spec);  // appends, resolving input = previous; returns node index
  std::vector<int> bn_layer_nodes() const;
};

// Parameters and buffers bound to one schema node.
struct LayerState {
  Tensor weight;        // conv: [outC, inC, k, k]; linear: [out, in]
  Tensor bias;          // [out] when spec.bias
  Tensor gamma, beta;   // batchnorm affine, [C]
  Tensor running_mean;  // batchnorm buffers, [C]
  Tensor running_var;
  Index in_channels = 0;
};

// An immutable trained-or-not model value: schema plus parameters plus
// batch-norm running statistics. Training and pruning return new snapshots.
struct ModelSnapshot {
  ArchSchema schema;
  std::vector<LayerState> layers;
  int class_count = 0;
  Index stage = 0;

  const std::string& arch_id() const { return schema.arch_id; }

  Index param_count() const;
  Index flops() const;  // forward estimate for one image at schema.input_shape

  struct NamedParam {
    std::string name;
    Tensor* tensor;
    bool trainable;
  };
  std::vector<NamedParam> named_parameters();  // stable order
  std::vector<std::pair<std::string, const Tensor*>> named_parameters_const() const;

  struct BnStats {
    std::string layer_id;
    const Tensor* running_mean;
    const Tensor* running_var;
  };
  std::vector<BnStats> bn_stats() const;  // forward-pass order
  int bn_layer_count() const { return static_cast<int>(schema.bn_layer_nodes().size()); }

  // Flat view of all trainable parameters, in named_parameters order.
  Tensor trainable_params_flat() const;
  void set_trainable_params_flat(const Tensor& flat);
};

// Per-layer batch statistics of the pre-normalization activations at every
// batch-norm site, in forward order.
struct FeatureStatistics {
  struct LayerStats {
    std::string layer_id;
    Tensor mean;      // [C]
    Tensor variance;  // [C], biased
  };
  std::vector<LayerStats> per_layer;
  Index batch_size = 0;
};

enum class LrSchedule { constant, cosine, step };

LrSchedule parse_lr_schedule(const std::string& s);
std::string lr_schedule_name(LrSchedule s);

// SGD-with-momentum settings for model training.
struct OptimizerSettings {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  Index batch_size = 64;
  LrSchedule schedule = LrSchedule::cosine;
  Index schedule_step_size = 30;  // step schedule: steps between decays
  double schedule_gamma = 0.1;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  // Schedule horizon in steps; 0 means the horizon of the current call. Pool
  // generation trains one long trajectory in segments and sets this to the
  // trajectory total so the schedule and shuffles line up with a single run.
  Index horizon_steps = 0;
};

// ------------------------------------------------------------------ registry

std::vector<std::string> registered_architectures();
ModelSnapshot build_model(const std::string& arch_id, int class_count, std::uint64_t seed);

enum class FeatureKind { random_tanh, identity };

// Parameterized linear-head probe: a frozen feature map plus a trainable
// linear layer trained with squared error. Theory checks rely on custom
// feature dimensions; the registered "linear-head" id uses the defaults.
ModelSnapshot build_linear_head(const Shape& input_shape, Index feature_dim, FeatureKind features,
                                int class_count, std::uint64_t seed);

// ---------------------------------------------------------------- operations

struct ForwardResult {
  Tensor logits;  // [B, class_count]
  FeatureStatistics stats;
};

// Inference-mode forward (batch-norm normalizes by running statistics) that
// additionally reports the batch mean/variance of each batch-norm input.
// Never mutates the snapshot.
ForwardResult forward_with_stats(const ModelSnapshot& model, const Tensor& images);

// Plain inference logits, chunked internally for large batches.
Tensor forward_logits(const ModelSnapshot& model, const Tensor& images, Index chunk = 512);

// Feature-space embedding: the input of the final linear layer, [B, f_d].
Tensor feature_embedding(const ModelSnapshot& model, const Tensor& images);

// Advances the model by `steps` mini-batch SGD-with-momentum updates on ds.
// Batch-norm runs in batch mode and running statistics follow the standard
// exponential moving average. Returns a new snapshot with stage += steps.
ModelSnapshot train_steps(const ModelSnapshot& model, const LabeledDataset& ds, Index steps,
                          const OptimizerSettings& hp);

// Same driver with an observer invoked after every step (1-based); the
// snapshot passed to it is the live training state. Used for trajectory
// caching, where momentum must persist across cached stages.
ModelSnapshot train_steps_observed(const ModelSnapshot& model, const LabeledDataset& ds, Index steps,
                                   const OptimizerSettings& hp,
                                   const std::function<void(const ModelSnapshot&, Index)>& after_step);

// Loss (per the schema's LossKind) and flat parameter gradient on a batch,
// with batch-norm in batch mode; pure in the snapshot.
struct LossGrad {
  double loss = 0.0;
  Tensor grad;  // flat, trainable_params order
};
LossGrad loss_and_param_grad(const ModelSnapshot& model, const Tensor& images,
                             const std::vector<int>& labels);

double dataset_loss(const ModelSnapshot& model, const Tensor& images, const std::vector<int>& labels);
double accuracy(const ModelSnapshot& model, const LabeledDataset& ds, Index chunk = 512);

// ---------------------------------------------------------------- checkpoint

inline constexpr int kCheckpointFormatVersion = 2;

void save_model(const ModelSnapshot& model, const std::filesystem::path& path);
ModelSnapshot load_model(const std::filesystem::path& path);

bool models_equal(const ModelSnapshot& a, const ModelSnapshot& b);

}  // namespace teddy
