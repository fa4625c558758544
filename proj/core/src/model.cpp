#include "teddy/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "teddy/container.hpp"
#include "teddy/network.hpp"
#include "teddy/rng.hpp"

namespace teddy {

using nlohmann::json;

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "step") return LrSchedule::step;
  fail(ErrorCode::unknown_mode, "lr schedule must be constant, cosine, or step; got " + s);
}

std::string lr_schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::constant: return "constant";
    case LrSchedule::cosine: return "cosine";
    case LrSchedule::step: return "step";
  }
  return "?";
}

// ----------------------------------------------------------------- snapshot

Index ModelSnapshot::param_count() const {
  Index n = 0;
  for (const auto& l : layers)
    n += l.weight.numel() + l.bias.numel() + l.gamma.numel() + l.beta.numel();
  return n;
}

Index ModelSnapshot::flops() const {
  // MAC-based forward estimate for one image at the schema input shape.
  Index total = 0;
  Shape cur = {1, schema.input_shape[0], schema.input_shape[1], schema.input_shape[2]};
  std::vector<Shape> shapes(schema.layers.size());
  for (std::size_t li = 0; li < schema.layers.size(); ++li) {
    const LayerSpec& spec = schema.layers[li];
    const Shape& in = spec.input < 0 ? cur : shapes[static_cast<std::size_t>(spec.input)];
    Shape out = in;
    switch (spec.kind) {
      case LayerKind::conv2d: {
        Index oh = (in[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
        Index ow = (in[3] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
        out = {in[0], spec.out_channels, oh, ow};
        total += 2 * spec.out_channels * layers[li].in_channels * spec.kernel * spec.kernel * oh * ow;
        break;
      }
      case LayerKind::linear:
        total += 2 * spec.out_channels * layers[li].in_channels;
        out = {in[0], spec.out_channels};
        break;
      case LayerKind::avgpool2: out = {in[0], in[1], in[2] / 2, in[3] / 2}; break;
      case LayerKind::global_avgpool: out = {in[0], in[1]}; break;
      case LayerKind::flatten: out = {in[0], shape_numel(in) / in[0]}; break;
      default: break;  // elementwise
    }
    shapes[li] = out;
  }
  return total;
}

std::vector<ModelSnapshot::NamedParam> ModelSnapshot::named_parameters() {
  std::vector<NamedParam> out;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& spec = schema.layers[li];
    LayerState& l = layers[li];
    auto push = [&](const char* field, Tensor& t) {
      if (t.numel() > 0) out.push_back({spec.id + "." + field, &t, spec.trainable});
    };
    push("weight", l.weight);
    push("bias", l.bias);
    push("gamma", l.gamma);
    push("beta", l.beta);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelSnapshot::named_parameters_const() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& p : const_cast<ModelSnapshot*>(this)->named_parameters()) out.emplace_back(p.name, p.tensor);
  return out;
}

std::vector<ModelSnapshot::BnStats> ModelSnapshot::bn_stats() const {
  std::vector<BnStats> out;
  for (std::size_t li = 0; li < layers.size(); ++li)
    if (schema.layers[li].kind == LayerKind::batchnorm2d)
      out.push_back({schema.layers[li].id, &layers[li].running_mean, &layers[li].running_var});
  return out;
}

Tensor ModelSnapshot::trainable_params_flat() const {
  Index total = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (!schema.layers[li].trainable) continue;
    const LayerState& l = layers[li];
    total += l.weight.numel() + l.bias.numel() + l.gamma.numel() + l.beta.numel();
  }
  Tensor flat({total});
  Index off = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (!schema.layers[li].trainable) continue;
    const LayerState& l = layers[li];
    for (const Tensor* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) {
      std::copy(t->data.begin(), t->data.end(), flat.data.begin() + off);
      off += t->numel();
    }
  }
  return flat;
}

void ModelSnapshot::set_trainable_params_flat(const Tensor& flat) {
  Index off = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    if (!schema.layers[li].trainable) continue;
    LayerState& l = layers[li];
    for (Tensor* t : {&l.weight, &l.bias, &l.gamma, &l.beta}) {
      require(off + t->numel() <= flat.numel(), ErrorCode::shape_mismatch, "flat parameter size mismatch");
      std::copy_n(flat.data.begin() + off, static_cast<std::size_t>(t->numel()), t->data.begin());
      off += t->numel();
    }
  }
  require(off == flat.numel(), ErrorCode::shape_mismatch, "flat parameter size mismatch");
}

// ----------------------------------------------------------------- registry

namespace {

struct ConvBlockIds {
  int conv, bn, out;
};

int add_conv_bn_relu(ArchSchema& schema, const std::string& prefix, Index out_channels, Index stride,
                     int input) {
  schema.add({prefix + ".conv", LayerKind::conv2d, out_channels, 3, stride, 1, false, true, input});
  schema.add({prefix + ".bn", LayerKind::batchnorm2d});
  return schema.add({prefix + ".relu", LayerKind::relu});
}

ArchSchema make_convnet3_schema() {
  ArchSchema s;
  s.arch_id = "convnet-3";
  s.input_shape = {3, 32, 32};
  const Index widths[3] = {32, 64, 64};
  int node = -1;
  for (int b = 0; b < 3; ++b) {
    node = add_conv_bn_relu(s, "block" + std::to_string(b + 1), widths[b], 1, node);
    node = s.add({"block" + std::to_string(b + 1) + ".pool", LayerKind::avgpool2});
  }
  s.add({"gap", LayerKind::global_avgpool});
  s.add({"head", LayerKind::linear, 0, 0, 0, 0, true});
  return s;
}

ArchSchema make_toy_bn1_schema() {
  ArchSchema s;
  s.arch_id = "toy-bn-1";
  s.input_shape = {3, 32, 32};
  s.add({"stem.conv", LayerKind::conv2d, 8, 3, 1, 1});
  s.add({"stem.bn", LayerKind::batchnorm2d});
  s.add({"stem.relu", LayerKind::relu});
  s.add({"gap", LayerKind::global_avgpool});
  s.add({"head", LayerKind::linear, 0, 0, 0, 0, true});
  return s;
}

ArchSchema make_resnet_lite_schema() {
  ArchSchema s;
  s.arch_id = "resnet-lite-18";
  s.input_shape = {3, 32, 32};
  const Index widths[4] = {16, 32, 64, 128};
  int node = add_conv_bn_relu(s, "stem", widths[0], 1, -1);
  Index in_width = widths[0];
  for (int stage = 0; stage < 4; ++stage) {
    for (int block = 0; block < 2; ++block) {
      std::string p = "s" + std::to_string(stage + 1) + "b" + std::to_string(block + 1);
      const Index w = widths[stage];
      const Index stride = (stage > 0 && block == 0) ? 2 : 1;
      const int entry = node;
      s.add({p + ".conv1", LayerKind::conv2d, w, 3, stride, 1, false, true, entry});
      s.add({p + ".bn1", LayerKind::batchnorm2d});
      s.add({p + ".relu1", LayerKind::relu});
      s.add({p + ".conv2", LayerKind::conv2d, w, 3, 1, 1});
      int main_end = s.add({p + ".bn2", LayerKind::batchnorm2d});
      int skip_end = entry;
      if (stride != 1 || in_width != w) {
        s.add({p + ".proj", LayerKind::conv2d, w, 1, stride, 0, false, true, entry});
        skip_end = s.add({p + ".proj_bn", LayerKind::batchnorm2d});
      }
      LayerSpec add_spec{p + ".add", LayerKind::residual_add};
      add_spec.input = main_end;
      add_spec.skip = skip_end;
      s.add(add_spec);
      node = s.add({p + ".relu2", LayerKind::relu});
      in_width = w;
    }
  }
  s.add({"gap", LayerKind::global_avgpool});
  s.add({"head", LayerKind::linear, 0, 0, 0, 0, true});
  return s;
}

ArchSchema make_linear_head_schema(const Shape& input_shape, Index feature_dim, FeatureKind features) {
  ArchSchema s;
  s.arch_id = features == FeatureKind::identity ? "linear-head-id" : "linear-head";
  s.input_shape = input_shape;
  s.loss = LossKind::mse;
  s.add({"flatten", LayerKind::flatten});
  if (features == FeatureKind::random_tanh) {
    LayerSpec fmap{"feature_map", LayerKind::linear, feature_dim, 0, 0, 0, false, false};
    s.add(fmap);
    s.add({"feature_tanh", LayerKind::tanh_act});
  }
  s.add({"head", LayerKind::linear, 0, 0, 0, 0, true, true});
  return s;
}

// Binds parameter tensors and channel counts to a schema and initializes them
// from the seed.
ModelSnapshot instantiate(ArchSchema schema, int class_count, std::uint64_t seed) {
  ModelSnapshot model;
  model.class_count = class_count;
  model.stage = 0;

  // Resolve the head's output width.
  for (auto& spec : schema.layers)
    if (spec.kind == LayerKind::linear && spec.out_channels == 0) spec.out_channels = class_count;

  Rng rng = make_rng(derive_seed(seed, "init:" + schema.arch_id));
  std::vector<Index> out_channels(schema.layers.size());
  std::vector<Shape> shapes(schema.layers.size());
  Shape input = {1, schema.input_shape[0], schema.input_shape[1], schema.input_shape[2]};

  model.schema = schema;
  model.layers.resize(schema.layers.size());

  for (std::size_t li = 0; li < schema.layers.size(); ++li) {
    const LayerSpec& spec = schema.layers[li];
    const Shape& in = spec.input < 0 ? input : shapes[static_cast<std::size_t>(spec.input)];
    LayerState& state = model.layers[li];
    Shape out = in;
    switch (spec.kind) {
      case LayerKind::conv2d: {
        state.in_channels = in[1];
        Index k = spec.kernel;
        state.weight = Tensor({spec.out_channels, state.in_channels, k, k});
        double std_dev = std::sqrt(2.0 / static_cast<double>(state.in_channels * k * k));
        for (double& v : state.weight.data) v = normal(rng, 0.0, std_dev);
        if (spec.bias) state.bias = Tensor({spec.out_channels});
        Index oh = (in[2] + 2 * spec.pad - k) / spec.stride + 1;
        Index ow = (in[3] + 2 * spec.pad - k) / spec.stride + 1;
        out = {in[0], spec.out_channels, oh, ow};
        break;
      }
      case LayerKind::batchnorm2d: {
        state.in_channels = in[1];
        state.gamma = Tensor({in[1]}, 1.0);
        state.beta = Tensor({in[1]});
        state.running_mean = Tensor({in[1]});
        state.running_var = Tensor({in[1]}, 1.0);
        break;
      }
      case LayerKind::linear: {
        state.in_channels = in[1];
        state.weight = Tensor({spec.out_channels, state.in_channels});
        // The frozen feature map gets unit-variance random projections; heads
        // start near zero.
        const double std_dev =
            spec.id == "feature_map" ? std::sqrt(1.0 / static_cast<double>(state.in_channels)) : 0.01;
        for (double& v : state.weight.data) v = normal(rng, 0.0, std_dev);
        if (spec.bias) state.bias = Tensor({spec.out_channels});
        out = {in[0], spec.out_channels};
        break;
      }
      case LayerKind::avgpool2: out = {in[0], in[1], in[2] / 2, in[3] / 2}; break;
      case LayerKind::global_avgpool: out = {in[0], in[1]}; break;
      case LayerKind::flatten: out = {in[0], shape_numel(in) / in[0]}; break;
      case LayerKind::relu:
      case LayerKind::tanh_act:
      case LayerKind::residual_add: break;
    }
    shapes[li] = out;
    out_channels[li] = out.size() > 1 ? out[1] : 0;
  }
  return model;
}

}  // namespace

std::vector<std::string> registered_architectures() {
  return {"convnet-3", "toy-bn-1", "resnet-lite-18", "linear-head", "linear-head-id"};
}

ModelSnapshot build_model(const std::string& arch_id, int class_count, std::uint64_t seed) {
  require(class_count >= 2, ErrorCode::invalid_argument, "class_count must be >= 2");
  if (arch_id == "convnet-3") return instantiate(make_convnet3_schema(), class_count, seed);
  if (arch_id == "toy-bn-1") return instantiate(make_toy_bn1_schema(), class_count, seed);
  if (arch_id == "resnet-lite-18") return instantiate(make_resnet_lite_schema(), class_count, seed);
  if (arch_id == "linear-head")
    return build_linear_head({3, 32, 32}, 64, FeatureKind::random_tanh, class_count, seed);
  if (arch_id == "linear-head-id")
    return build_linear_head({3, 32, 32}, 0, FeatureKind::identity, class_count, seed);
  std::string known;
  for (const auto& id : registered_architectures()) known += (known.empty() ? "" : ", ") + id;
  fail(ErrorCode::unknown_architecture, arch_id + " (registered: " + known + ")");
}

ModelSnapshot build_linear_head(const Shape& input_shape, Index feature_dim, FeatureKind features,
                                int class_count, std::uint64_t seed) {
  return instantiate(make_linear_head_schema(input_shape, feature_dim, features), class_count, seed);
}

// --------------------------------------------------------------- operations

ForwardResult forward_with_stats(const ModelSnapshot& model, const Tensor& images) {
  require(images.rank() == 4 && images.shape[0] >= 2, ErrorCode::invalid_argument,
          "forward_with_stats needs a batch of at least 2 images");
  Network net(model);
  PassConfig cfg;
  cfg.bn_batch_mode = false;
  cfg.capture_stats = true;
  ForwardResult result;
  result.logits = net.forward(images, cfg);
  result.stats = net.captured_stats();
  return result;
}

Tensor forward_logits(const ModelSnapshot& model, const Tensor& images, Index chunk) {
  const Index B = images.shape[0];
  Tensor logits({B, model.class_count});
  Network net(model);
  PassConfig cfg;  // inference defaults
  const Index C = images.shape[1], H = images.shape[2], W = images.shape[3];
  for (Index start = 0; start < B; start += chunk) {
    Index n = std::min(chunk, B - start);
    Tensor part({n, C, H, W});
    std::copy_n(images.ptr() + start * C * H * W, static_cast<std::size_t>(n * C * H * W), part.ptr());
    const Tensor& out = net.forward(part, cfg);
    std::copy_n(out.ptr(), static_cast<std::size_t>(n * model.class_count),
                logits.ptr() + start * model.class_count);
  }
  return logits;
}

Tensor feature_embedding(const ModelSnapshot& model, const Tensor& images) {
  Network net(model);
  PassConfig cfg;
  net.forward(images, cfg);
  return net.features();
}

ModelSnapshot train_steps_observed(const ModelSnapshot& model, const LabeledDataset& ds, Index steps,
                                   const OptimizerSettings& hp,
                                   const std::function<void(const ModelSnapshot&, Index)>& after_step) {
  require(steps >= 0, ErrorCode::invalid_argument, "steps must be >= 0");
  if (steps == 0) return model;
  ds.validate();

  ModelSnapshot out = model;
  const Index N = ds.size();
  const Index B = std::max<Index>(2, std::min(hp.batch_size, N));
  const Index steps_per_epoch = std::max<Index>(1, N / B);
  const Index horizon = hp.horizon_steps > 0 ? hp.horizon_steps : steps;
  const Index C = ds.images.shape[1], H = ds.images.shape[2], W = ds.images.shape[3];

  // Momentum buffers aligned with the trainable flat parameter vector.
  Tensor velocity({out.trainable_params_flat().numel()});

  std::vector<Index> order(static_cast<std::size_t>(N));

  Network net(out);
  PassConfig cfg;
  cfg.bn_batch_mode = true;
  cfg.update_running = true;
  cfg.bn_momentum = hp.bn_momentum;

  Tensor batch({B, C, H, W});
  std::vector<int> batch_labels(static_cast<std::size_t>(B));

  for (Index step = 0; step < steps; ++step) {
    const Index epoch = step / steps_per_epoch;
    const Index pos = step % steps_per_epoch;
    if (pos == 0 || step == 0) {
      Rng rng = make_rng(derive_seed(hp.seed, "epoch-shuffle", static_cast<std::uint64_t>(epoch)));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }

    for (Index i = 0; i < B; ++i) {
      Index src = order[static_cast<std::size_t>((pos * B + i) % N)];
      std::copy_n(ds.images.ptr() + src * C * H * W, static_cast<std::size_t>(C * H * W),
                  batch.ptr() + i * C * H * W);
      batch_labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
    }

    const Tensor& logits = net.forward(batch, cfg);
    Tensor dlogits;
    loss_by_kind(out.schema.loss, logits, batch_labels, &dlogits);
    net.backward(dlogits, false, true);

    double lr = hp.lr;
    switch (hp.schedule) {
      case LrSchedule::cosine:
        lr = hp.lr * 0.5 * (1.0 + std::cos(3.14159265358979 * static_cast<double>(step) /
                                           static_cast<double>(horizon)));
        break;
      case LrSchedule::step:
        lr = hp.lr * std::pow(hp.schedule_gamma,
                              static_cast<double>(step / std::max<Index>(1, hp.schedule_step_size)));
        break;
      case LrSchedule::constant: break;
    }

    // SGD with momentum over the flat trainable parameter order.
    Index off = 0;
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
      if (!out.schema.layers[li].trainable) continue;
      LayerState& l = out.layers[li];
      const ParamGrads& pg = net.param_grads()[li];
      auto update = [&](Tensor& param, const Tensor& grad) {
        if (param.numel() == 0) return;
        for (Index i = 0; i < param.numel(); ++i) {
          double g = (grad.numel() ? grad[i] : 0.0) + hp.weight_decay * param[i];
          double& v = velocity[off + i];
          v = hp.momentum * v + g;
          param[i] -= lr * v;
        }
        off += param.numel();
      };
      update(l.weight, pg.weight);
      update(l.bias, pg.bias);
      update(l.gamma, pg.gamma);
      update(l.beta, pg.beta);
    }

    out.stage = model.stage + step + 1;
    if (after_step) after_step(out, step + 1);
  }

  return out;
}

ModelSnapshot train_steps(const ModelSnapshot& model, const LabeledDataset& ds, Index steps,
                          const OptimizerSettings& hp) {
  return train_steps_observed(model, ds, steps, hp, nullptr);
}

LossGrad loss_and_param_grad(const ModelSnapshot& model, const Tensor& images,
                             const std::vector<int>& labels) {
  ModelSnapshot scratch = model;  // batch-mode pass never touches running stats
  Network net(scratch);
  PassConfig cfg;
  cfg.bn_batch_mode = model.bn_layer_count() > 0;
  const Tensor& logits = net.forward(images, cfg);
  Tensor dlogits;
  LossGrad result;
  result.loss = loss_by_kind(model.schema.loss, logits, labels, &dlogits);
  net.backward(dlogits, false, true);

  Index total = model.trainable_params_flat().numel();
  result.grad = Tensor({total});
  Index off = 0;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    if (!model.schema.layers[li].trainable) continue;
    const LayerState& l = model.layers[li];
    const ParamGrads& pg = net.param_grads()[li];
    auto emit = [&](const Tensor& param, const Tensor& grad) {
      for (Index i = 0; i < param.numel(); ++i) result.grad[off + i] = grad.numel() ? grad[i] : 0.0;
      off += param.numel();
    };
    emit(l.weight, pg.weight);
    emit(l.bias, pg.bias);
    emit(l.gamma, pg.gamma);
    emit(l.beta, pg.beta);
  }
  return result;
}

double dataset_loss(const ModelSnapshot& model, const Tensor& images, const std::vector<int>& labels) {
  ModelSnapshot scratch = model;
  Network net(scratch);
  PassConfig cfg;
  cfg.bn_batch_mode = model.bn_layer_count() > 0;
  const Tensor& logits = net.forward(images, cfg);
  return loss_by_kind(model.schema.loss, logits, labels);
}

double accuracy(const ModelSnapshot& model, const LabeledDataset& ds, Index chunk) {
  Tensor logits = forward_logits(model, ds.images, chunk);
  Index correct = 0;
  for (Index b = 0; b < ds.size(); ++b) {
    Index best = 0;
    for (Index c = 1; c < model.class_count; ++c)
      if (logits.at2(b, c) > logits.at2(b, best)) best = c;
    if (static_cast<int>(best) == ds.labels[static_cast<std::size_t>(b)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// --------------------------------------------------------------- checkpoint

namespace {

json spec_to_json(const LayerSpec& spec) {
  return json{{"id", spec.id},
              {"kind", static_cast<int>(spec.kind)},
              {"out_channels", spec.out_channels},
              {"kernel", spec.kernel},
              {"stride", spec.stride},
              {"pad", spec.pad},
              {"bias", spec.bias},
              {"trainable", spec.trainable},
              {"input", spec.input},
              {"skip", spec.skip}};
}

LayerSpec spec_from_json(const json& j) {
  LayerSpec spec;
  spec.id = j.at("id").get<std::string>();
  spec.kind = static_cast<LayerKind>(j.at("kind").get<int>());
  spec.out_channels = j.at("out_channels").get<Index>();
  spec.kernel = j.at("kernel").get<Index>();
  spec.stride = j.at("stride").get<Index>();
  spec.pad = j.at("pad").get<Index>();
  spec.bias = j.at("bias").get<bool>();
  spec.trainable = j.at("trainable").get<bool>();
  spec.input = j.at("input").get<int>();
  spec.skip = j.at("skip").get<int>();
  return spec;
}

}  // namespace

void save_model(const ModelSnapshot& model, const std::filesystem::path& path) {
  ArrayContainer c;
  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["arch_id"] = model.schema.arch_id;
  manifest["class_count"] = model.class_count;
  manifest["stage"] = model.stage;
  manifest["input_shape"] = model.schema.input_shape;
  manifest["loss"] = model.schema.loss == LossKind::mse ? "mse" : "cross_entropy";
  json layers = json::array();
  for (const auto& spec : model.schema.layers) layers.push_back(spec_to_json(spec));
  manifest["layers"] = layers;
  c.put_text("__manifest__", manifest.dump());

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const std::string prefix = "p/" + model.schema.layers[li].id + "/";
    const LayerState& l = model.layers[li];
    if (l.weight.numel()) c.put_f64(prefix + "weight", l.weight);
    if (l.bias.numel()) c.put_f64(prefix + "bias", l.bias);
    if (l.gamma.numel()) c.put_f64(prefix + "gamma", l.gamma);
    if (l.beta.numel()) c.put_f64(prefix + "beta", l.beta);
    if (l.running_mean.numel()) c.put_f64(prefix + "running_mean", l.running_mean);
    if (l.running_var.numel()) c.put_f64(prefix + "running_var", l.running_var);
  }
  c.save(path);
}

ModelSnapshot load_model(const std::filesystem::path& path) {
  ArrayContainer c = ArrayContainer::load(path);
  json manifest = json::parse(c.get_text("__manifest__"));

  int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    fail(ErrorCode::version_mismatch, "checkpoint " + path.string() + " has format_version " +
                                          std::to_string(version) + ", this build reads " +
                                          std::to_string(kCheckpointFormatVersion));

  ModelSnapshot model;
  model.schema.arch_id = manifest.at("arch_id").get<std::string>();
  model.class_count = manifest.at("class_count").get<int>();
  model.stage = manifest.at("stage").get<Index>();
  model.schema.input_shape = manifest.at("input_shape").get<Shape>();
  model.schema.loss = manifest.value("loss", "cross_entropy") == "mse" ? LossKind::mse
                                                                       : LossKind::cross_entropy;
  for (const auto& j : manifest.at("layers")) model.schema.layers.push_back(spec_from_json(j));

  model.layers.resize(model.schema.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const std::string prefix = "p/" + model.schema.layers[li].id + "/";
    LayerState& l = model.layers[li];
    if (c.has(prefix + "weight")) l.weight = c.get_f64(prefix + "weight");
    if (c.has(prefix + "bias")) l.bias = c.get_f64(prefix + "bias");
    if (c.has(prefix + "gamma")) l.gamma = c.get_f64(prefix + "gamma");
    if (c.has(prefix + "beta")) l.beta = c.get_f64(prefix + "beta");
    if (c.has(prefix + "running_mean")) l.running_mean = c.get_f64(prefix + "running_mean");
    if (c.has(prefix + "running_var")) l.running_var = c.get_f64(prefix + "running_var");
    switch (model.schema.layers[li].kind) {
      case LayerKind::conv2d: l.in_channels = l.weight.shape[1]; break;
      case LayerKind::linear: l.in_channels = l.weight.shape[1]; break;
      case LayerKind::batchnorm2d: l.in_channels = l.gamma.shape[0]; break;
      default: break;
    }
    for (const Tensor* t : {&l.running_var}) {
      for (double v : t->data)
        require(v >= 0.0, ErrorCode::corrupt_record, "negative running variance in checkpoint");
    }
  }
  return model;
}

bool models_equal(const ModelSnapshot& a, const ModelSnapshot& b) {
  if (a.schema.arch_id != b.schema.arch_id || a.class_count != b.class_count || a.stage != b.stage)
    return false;
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t li = 0; li < a.layers.size(); ++li) {
    const LayerState& x = a.layers[li];
    const LayerState& y = b.layers[li];
    if (!bitwise_equal(x.weight, y.weight) || !bitwise_equal(x.bias, y.bias) ||
        !bitwise_equal(x.gamma, y.gamma) || !bitwise_equal(x.beta, y.beta) ||
        !bitwise_equal(x.running_mean, y.running_mean) || !bitwise_equal(x.running_var, y.running_var))
      return false;
  }
  return true;
}

}  // namespace teddy
