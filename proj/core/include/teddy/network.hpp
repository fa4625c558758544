#pragma once

#include <vector>

#include "teddy/model.hpp"

namespace teddy {

// Gradients for one layer, mirroring LayerState.
struct ParamGrads {
  Tensor weight, bias, gamma, beta;
};

struct PassConfig {
  // true: normalize by batch statistics (training semantics, pure function of
  // inputs); false: normalize by stored running statistics (inference).
  bool bn_batch_mode = false;
  // EMA-update running statistics from the batch (requires bn_batch_mode and
  // a mutable snapshot).
  bool update_running = false;
  double bn_momentum = 0.1;
  // Record batch mean/variance of every batch-norm input.
  bool capture_stats = false;
  // Accumulate sum_l ||mu_l - target_mean_l||_2 + sum_l ||var_l - target_var_l||_2
  // and inject the matching gradients during backward. Targets default to the
  // model's own running statistics.
  bool stat_match = false;
  const std::vector<Tensor>* target_means = nullptr;  // one per bn layer, forward order
  const std::vector<Tensor>* target_vars = nullptr;
  // Abort with the layer id when an activation goes non-finite.
  bool check_finite = false;
};

// Single-pass executor over a ModelSnapshot. Holds activation caches between
// forward() and backward(); one instance serves one model at a time and is
// not thread-safe. Distinct instances over distinct snapshots are independent.
class Network {
 public:
  explicit Network(const ModelSnapshot& model) : model_(&model), mutable_model_(nullptr) {}
  explicit Network(ModelSnapshot& model) : model_(&model), mutable_model_(&model) {}

  const Tensor& forward(const Tensor& images, const PassConfig& cfg);
  void backward(const Tensor& dlogits, bool want_input_grad, bool want_param_grads);

  const Tensor& logits() const { return acts_.back(); }
  const Tensor& input_grad() const { return input_grad_; }
  const std::vector<ParamGrads>& param_grads() const { return param_grads_; }
  FeatureStatistics captured_stats() const;
  double stat_mean_term() const { return mean_term_; }
  double stat_var_term() const { return var_term_; }
  // Input of the final linear layer, [B, f_d].
  const Tensor& features() const;

 private:
  struct BnCache {
    Tensor mu, var, inv_std;  // statistics used for normalization
    Tensor batch_mu, batch_var;  // batch statistics (always captured when needed)
  };

  const Tensor& node_act(int node, const Tensor& images) const;

  const ModelSnapshot* model_;
  ModelSnapshot* mutable_model_;
  PassConfig cfg_;
  const Tensor* images_ = nullptr;
  // Workspaces persist across passes; buffers reallocate only on shape change.
  std::vector<Tensor> acts_;
  std::vector<Tensor> cols_;  // conv patch matrices, [K x B*P]
  std::vector<BnCache> bn_cache_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
  std::vector<Tensor> dcols_;  // per conv layer; shapes differ between convs
  Tensor input_grad_;
  bool input_grad_set_ = false;
  std::vector<ParamGrads> param_grads_;
  double mean_term_ = 0.0, var_term_ = 0.0;
};

// ------------------------------------------------------------------- losses

Tensor softmax_rows(const Tensor& logits);

// Mean negative log-likelihood; optional gradient (p - onehot)/B.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits = nullptr);

// Soft-target cross entropy against probability rows.
double cross_entropy_soft(const Tensor& logits, const Tensor& targets, Tensor* dlogits = nullptr);

// (1/2N)||logits - onehot||^2, the linear-head training loss.
double mse_onehot(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits = nullptr);

double loss_by_kind(LossKind kind, const Tensor& logits, const std::vector<int>& labels,
                    Tensor* dlogits = nullptr);

}  // namespace teddy
