#include "teddy/network.hpp"

#include <cmath>
#include <cstring>

namespace teddy {

namespace {

constexpr double kBnEps = 1e-5;

Shape conv_out_shape(const LayerSpec& spec, const Shape& in) {
  Index oh = (in[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
  Index ow = (in[3] + 2 * spec.pad - spec.kernel) / spec.stride + 1;
  return {in[0], spec.out_channels, oh, ow};
}

// Reuses storage across passes; contents are only preserved when the shape
// is unchanged, which every kernel below fully overwrites anyway.
void ensure_shape(Tensor& t, const Shape& shape) {
  if (t.shape != shape) t = Tensor(shape);
}

// Patch matrix in [K x B*P] layout: row per kernel element, column per output
// position, per-image column blocks contiguous. Inner x-runs copy contiguous
// input spans.
void im2col(const Tensor& in, const LayerSpec& spec, Index oh, Index ow, Tensor& cols) {
  const Index B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Index k = spec.kernel, stride = spec.stride, pad = spec.pad;
  const Index K = C * k * k;
  const Index P = oh * ow;
  ensure_shape(cols, {K, B * P});
  const Index M = B * P;

  for (Index c = 0; c < C; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double* row = cols.ptr() + ((c * k + ky) * k + kx) * M;
        for (Index b = 0; b < B; ++b) {
          const double* plane = in.ptr() + (b * C + c) * H * W;
          double* dst = row + b * P;
          for (Index y = 0; y < oh; ++y, dst += ow) {
            const Index iy = y * stride + ky - pad;
            if (iy < 0 || iy >= H) {
              std::memset(dst, 0, sizeof(double) * static_cast<std::size_t>(ow));
              continue;
            }
            const double* src_row = plane + iy * W;
            if (stride == 1) {
              const Index x0 = std::max<Index>(0, pad - kx);
              const Index x1 = std::min<Index>(ow, W + pad - kx);
              if (x0 > 0) std::memset(dst, 0, sizeof(double) * static_cast<std::size_t>(x0));
              if (x1 > x0)
                std::memcpy(dst + x0, src_row + x0 + kx - pad,
                            sizeof(double) * static_cast<std::size_t>(x1 - x0));
              if (x1 < ow) std::memset(dst + x1, 0, sizeof(double) * static_cast<std::size_t>(ow - x1));
            } else {
              for (Index x = 0; x < ow; ++x) {
                const Index ix = x * stride + kx - pad;
                dst[x] = (ix < 0 || ix >= W) ? 0.0 : src_row[ix];
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the [K x B*P] gradient back into image
// layout. The destination must be pre-zeroed or hold a prior gradient to
// accumulate into.
void col2im_add(const Tensor& dcols, const LayerSpec& spec, const Shape& in_shape, Index oh, Index ow,
                Tensor& din) {
  const Index B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
  const Index k = spec.kernel, stride = spec.stride, pad = spec.pad;
  const Index P = oh * ow;
  const Index M = B * P;

  for (Index c = 0; c < C; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const double* row = dcols.ptr() + ((c * k + ky) * k + kx) * M;
        for (Index b = 0; b < B; ++b) {
          double* plane = din.ptr() + (b * C + c) * H * W;
          const double* src = row + b * P;
          for (Index y = 0; y < oh; ++y, src += ow) {
            const Index iy = y * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            double* dst_row = plane + iy * W;
            if (stride == 1) {
              const Index x0 = std::max<Index>(0, pad - kx);
              const Index x1 = std::min<Index>(ow, W + pad - kx);
              const double* s = src + x0;
              double* d = dst_row + x0 + kx - pad;
              for (Index x = x0; x < x1; ++x) *d++ += *s++;
            } else {
              for (Index x = 0; x < ow; ++x) {
                const Index ix = x * stride + kx - pad;
                if (ix >= 0 && ix < W) dst_row[ix] += src[x];
              }
            }
          }
        }
      }
    }
  }
}

void channel_moments(const Tensor& x, Tensor& mu, Tensor& var) {
  const Index B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
  ensure_shape(mu, {C});
  ensure_shape(var, {C});
  const double inv_m = 1.0 / static_cast<double>(B * HW);
  for (Index c = 0; c < C; ++c) {
    double s = 0.0, s2 = 0.0;
    for (Index b = 0; b < B; ++b) {
      const double* p = x.ptr() + (b * C + c) * HW;
      for (Index i = 0; i < HW; ++i) {
        s += p[i];
        s2 += p[i] * p[i];
      }
    }
    double m = s * inv_m;
    mu[c] = m;
    var[c] = std::max(0.0, s2 * inv_m - m * m);
  }
}

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

int ArchSchema::add(LayerSpec spec) {
  if (spec.input == -2) spec.input = static_cast<int>(layers.size()) - 1;
  layers.push_back(std::move(spec));
  return static_cast<int>(layers.size()) - 1;
}

std::vector<int> ArchSchema::bn_layer_nodes() const {
  std::vector<int> nodes;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::batchnorm2d) nodes.push_back(static_cast<int>(i));
  return nodes;
}

const Tensor& Network::node_act(int node, const Tensor& images) const {
  return node < 0 ? images : acts_[static_cast<std::size_t>(node)];
}

const Tensor& Network::forward(const Tensor& images, const PassConfig& cfg) {
  const auto& schema = model_->schema;
  require(images.rank() == 4, ErrorCode::shape_mismatch, "expected [B,C,H,W] image batch");
  if (images.shape[1] != schema.input_shape[0] || images.shape[2] != schema.input_shape[1] ||
      images.shape[3] != schema.input_shape[2])
    fail(ErrorCode::shape_mismatch,
         "model " + schema.arch_id + " expects [B, " + std::to_string(schema.input_shape[0]) + ", " +
             std::to_string(schema.input_shape[1]) + ", " + std::to_string(schema.input_shape[2]) +
             "], given " + shape_to_string(images.shape));
  if (cfg.update_running)
    require(mutable_model_ != nullptr && cfg.bn_batch_mode, ErrorCode::invalid_argument,
            "running-stat update requires a mutable snapshot in batch mode");

  cfg_ = cfg;
  images_ = &images;
  const std::size_t L = schema.layers.size();
  acts_.resize(L);
  cols_.resize(L);
  bn_cache_.resize(L);
  mean_term_ = 0.0;
  var_term_ = 0.0;

  int bn_index = 0;
  for (std::size_t li = 0; li < L; ++li) {
    const LayerSpec& spec = schema.layers[li];
    const LayerState& state = model_->layers[li];
    const Tensor& in = node_act(spec.input, images);
    Tensor& out = acts_[li];

    switch (spec.kind) {
      case LayerKind::conv2d: {
        const Shape os = conv_out_shape(spec, in.shape);
        const Index B = os[0], P = os[2] * os[3], K = state.in_channels * spec.kernel * spec.kernel;
        im2col(in, spec, os[2], os[3], cols_[li]);
        ensure_shape(out, os);
        ConstMatrixMap w(state.weight.ptr(), spec.out_channels, K);
        // Per-image product lands directly in the [C_out x P] block.
        for (Index b = 0; b < B; ++b) {
          ConstMatrixMap cols_b(cols_[li].ptr(), K, B * P);
          MatrixMap out_b(out.ptr() + b * spec.out_channels * P, spec.out_channels, P);
          out_b.noalias() = w * cols_b.middleCols(b * P, P);
        }
        if (spec.bias)
          for (Index b = 0; b < B; ++b)
            for (Index oc = 0; oc < spec.out_channels; ++oc) {
              double* dst = out.ptr() + (b * spec.out_channels + oc) * P;
              const double bias = state.bias[oc];
              for (Index p = 0; p < P; ++p) dst[p] += bias;
            }
        break;
      }
      case LayerKind::batchnorm2d: {
        const Index B = in.shape[0], C = in.shape[1], HW = in.shape[2] * in.shape[3];
        BnCache& cache = bn_cache_[li];
        const bool need_batch_stats =
            cfg.bn_batch_mode || cfg.capture_stats || cfg.stat_match || cfg.update_running;
        if (need_batch_stats) {
          require(B >= 2, ErrorCode::invalid_argument,
                  "batch statistics need a batch of at least 2 images");
          channel_moments(in, cache.batch_mu, cache.batch_var);
        }
        if (cfg.bn_batch_mode) {
          cache.mu = cache.batch_mu;
          cache.var = cache.batch_var;
        } else {
          cache.mu = state.running_mean;
          cache.var = state.running_var;
        }
        ensure_shape(cache.inv_std, {C});
        for (Index c = 0; c < C; ++c) cache.inv_std[c] = 1.0 / std::sqrt(cache.var[c] + kBnEps);

        if (cfg.update_running) {
          LayerState& mut = mutable_model_->layers[li];
          const double m = cfg.bn_momentum;
          for (Index c = 0; c < C; ++c) {
            mut.running_mean[c] = (1.0 - m) * mut.running_mean[c] + m * cache.batch_mu[c];
            mut.running_var[c] = (1.0 - m) * mut.running_var[c] + m * cache.batch_var[c];
          }
        }
        if (cfg.stat_match) {
          const Tensor& tm = cfg.target_means
                                 ? (*cfg.target_means)[static_cast<std::size_t>(bn_index)]
                                 : state.running_mean;
          const Tensor& tv = cfg.target_vars ? (*cfg.target_vars)[static_cast<std::size_t>(bn_index)]
                                             : state.running_var;
          mean_term_ += (cache.batch_mu.vec() - tm.vec()).norm();
          var_term_ += (cache.batch_var.vec() - tv.vec()).norm();
        }
        ensure_shape(out, in.shape);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const double g = state.gamma[c] * cache.inv_std[c];
            const double shift = state.beta[c] - cache.mu[c] * g;
            const double* src = in.ptr() + (b * C + c) * HW;
            double* dst = out.ptr() + (b * C + c) * HW;
            for (Index i = 0; i < HW; ++i) dst[i] = src[i] * g + shift;
          }
        ++bn_index;
        break;
      }
      case LayerKind::relu: {
        ensure_shape(out, in.shape);
        const double* src = in.ptr();
        double* dst = out.ptr();
        for (Index i = 0; i < in.numel(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
        break;
      }
      case LayerKind::tanh_act: {
        ensure_shape(out, in.shape);
        for (Index i = 0; i < in.numel(); ++i) out[i] = std::tanh(in[i]);
        break;
      }
      case LayerKind::avgpool2: {
        const Index B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        require(H % 2 == 0 && W % 2 == 0, ErrorCode::shape_mismatch,
                "avgpool2 requires even spatial dims, given " + shape_to_string(in.shape));
        ensure_shape(out, {B, C, H / 2, W / 2});
        for (Index bc = 0; bc < B * C; ++bc) {
          const double* src = in.ptr() + bc * H * W;
          double* dst = out.ptr() + bc * (H / 2) * (W / 2);
          for (Index y = 0; y < H / 2; ++y)
            for (Index x = 0; x < W / 2; ++x)
              dst[y * (W / 2) + x] = 0.25 * (src[2 * y * W + 2 * x] + src[2 * y * W + 2 * x + 1] +
                                             src[(2 * y + 1) * W + 2 * x] +
                                             src[(2 * y + 1) * W + 2 * x + 1]);
        }
        break;
      }
      case LayerKind::global_avgpool: {
        const Index B = in.shape[0], C = in.shape[1], HW = in.shape[2] * in.shape[3];
        ensure_shape(out, {B, C});
        for (Index bc = 0; bc < B * C; ++bc) {
          const double* src = in.ptr() + bc * HW;
          double s = 0.0;
          for (Index i = 0; i < HW; ++i) s += src[i];
          out[bc] = s / static_cast<double>(HW);
        }
        break;
      }
      case LayerKind::flatten: {
        ensure_shape(out, {in.shape[0], in.numel() / in.shape[0]});
        std::memcpy(out.ptr(), in.ptr(), sizeof(double) * in.data.size());
        break;
      }
      case LayerKind::linear: {
        const Index B = in.shape[0], IN = in.shape[1], OUT = spec.out_channels;
        ensure_shape(out, {B, OUT});
        out.mat2d().noalias() = in.mat2d() * state.weight.mat(OUT, IN).transpose();
        if (spec.bias) out.mat2d().rowwise() += state.bias.vec().transpose();
        break;
      }
      case LayerKind::residual_add: {
        const Tensor& skip = node_act(spec.skip, images);
        require(in.shape == skip.shape, ErrorCode::shape_mismatch,
                "residual branches disagree: " + shape_to_string(in.shape) + " vs " +
                    shape_to_string(skip.shape));
        ensure_shape(out, in.shape);
        out.vec() = in.vec() + skip.vec();
        break;
      }
    }

    if (cfg.check_finite && !out.all_finite())
      fail(ErrorCode::nan_in_activation, "non-finite activation after layer " + spec.id);
  }
  return acts_.back();
}

void Network::backward(const Tensor& dlogits, bool want_input_grad, bool want_param_grads) {
  const auto& schema = model_->schema;
  const std::size_t L = schema.layers.size();
  require(acts_.size() == L && images_ != nullptr, ErrorCode::invalid_argument,
          "backward without a forward pass");

  grads_.resize(L);
  grad_set_.assign(L, false);
  input_grad_set_ = false;
  if (want_param_grads) param_grads_.resize(L);

  // Zeroed gradient slot of the right shape, reusing storage.
  auto grad_slot = [&](int node) -> Tensor* {
    if (node < 0) {
      if (!want_input_grad) return nullptr;
      if (!input_grad_set_) {
        ensure_shape(input_grad_, images_->shape);
        input_grad_.fill(0.0);
        input_grad_set_ = true;
      }
      return &input_grad_;
    }
    auto idx = static_cast<std::size_t>(node);
    if (!grad_set_[idx]) {
      ensure_shape(grads_[idx], acts_[idx].shape);
      grads_[idx].fill(0.0);
      grad_set_[idx] = true;
    }
    return &grads_[idx];
  };

  ensure_shape(grads_[L - 1], dlogits.shape);
  grads_[L - 1].data = dlogits.data;
  grad_set_[L - 1] = true;

  for (std::size_t liu = L; liu-- > 0;) {
    const LayerSpec& spec = schema.layers[liu];
    const LayerState& state = model_->layers[liu];
    const Tensor& in = node_act(spec.input, *images_);
    const Tensor& out = acts_[liu];

    const bool reached = grad_set_[liu];
    if (!reached && !(cfg_.stat_match && spec.kind == LayerKind::batchnorm2d)) continue;
    if (!reached) {
      ensure_shape(grads_[liu], out.shape);
      grads_[liu].fill(0.0);
      grad_set_[liu] = true;
    }
    const Tensor& dout = grads_[liu];

    switch (spec.kind) {
      case LayerKind::conv2d: {
        const Index B = out.shape[0], P = out.shape[2] * out.shape[3];
        const Index K = state.in_channels * spec.kernel * spec.kernel;
        ConstMatrixMap cols(cols_[liu].ptr(), K, B * P);
        if (want_param_grads) {
          ParamGrads& pg = param_grads_[liu];
          ensure_shape(pg.weight, state.weight.shape);
          MatrixMap dw(pg.weight.ptr(), spec.out_channels, K);
          dw.setZero();
          for (Index b = 0; b < B; ++b) {
            ConstMatrixMap dout_b(dout.ptr() + b * spec.out_channels * P, spec.out_channels, P);
            dw.noalias() += dout_b * cols.middleCols(b * P, P).transpose();
          }
          if (spec.bias) {
            ensure_shape(pg.bias, {spec.out_channels});
            for (Index oc = 0; oc < spec.out_channels; ++oc) {
              double s = 0.0;
              for (Index b = 0; b < B; ++b) {
                const double* src = dout.ptr() + (b * spec.out_channels + oc) * P;
                for (Index p = 0; p < P; ++p) s += src[p];
              }
              pg.bias[oc] = s;
            }
          }
        }
        if (spec.input >= 0 || want_input_grad) {
          Tensor& dcols = dcols_scratch_;
          ensure_shape(dcols, {K, B * P});
          MatrixMap dc(dcols.ptr(), K, B * P);
          ConstMatrixMap w(state.weight.ptr(), spec.out_channels, K);
          for (Index b = 0; b < B; ++b) {
            ConstMatrixMap dout_b(dout.ptr() + b * spec.out_channels * P, spec.out_channels, P);
            dc.middleCols(b * P, P).noalias() = w.transpose() * dout_b;
          }
          if (Tensor* slot = grad_slot(spec.input))
            col2im_add(dcols, spec, in.shape, out.shape[2], out.shape[3], *slot);
        }
        break;
      }
      case LayerKind::batchnorm2d: {
        const Index B = in.shape[0], C = in.shape[1], HW = in.shape[2] * in.shape[3];
        const double M = static_cast<double>(B * HW);
        const BnCache& cache = bn_cache_[liu];
        Tensor* slot = grad_slot(spec.input);

        Tensor dgamma({C}), dbeta({C});
        for (Index c = 0; c < C; ++c) {
          double sg = 0.0, sb = 0.0;
          for (Index b = 0; b < B; ++b) {
            const double* x = in.ptr() + (b * C + c) * HW;
            const double* dy = dout.ptr() + (b * C + c) * HW;
            for (Index i = 0; i < HW; ++i) {
              sg += dy[i] * (x[i] - cache.mu[c]) * cache.inv_std[c];
              sb += dy[i];
            }
          }
          dgamma[c] = sg;
          dbeta[c] = sb;
        }
        if (want_param_grads) {
          param_grads_[liu].gamma = dgamma;
          param_grads_[liu].beta = dbeta;
        }

        if (slot) {
          if (cfg_.bn_batch_mode) {
            for (Index c = 0; c < C; ++c) {
              const double gis = state.gamma[c] * cache.inv_std[c] / M;
              for (Index b = 0; b < B; ++b) {
                const double* x = in.ptr() + (b * C + c) * HW;
                const double* dy = dout.ptr() + (b * C + c) * HW;
                double* dx = slot->ptr() + (b * C + c) * HW;
                for (Index i = 0; i < HW; ++i) {
                  double xhat = (x[i] - cache.mu[c]) * cache.inv_std[c];
                  dx[i] += gis * (M * dy[i] - dbeta[c] - xhat * dgamma[c]);
                }
              }
            }
          } else {
            for (Index c = 0; c < C; ++c) {
              const double gis = state.gamma[c] * cache.inv_std[c];
              for (Index b = 0; b < B; ++b) {
                const double* dy = dout.ptr() + (b * C + c) * HW;
                double* dx = slot->ptr() + (b * C + c) * HW;
                for (Index i = 0; i < HW; ++i) dx[i] += dy[i] * gis;
              }
            }
          }

          if (cfg_.stat_match) {
            int bn_index = 0;
            for (std::size_t j = 0; j < liu; ++j)
              if (schema.layers[j].kind == LayerKind::batchnorm2d) ++bn_index;
            const Tensor& tm = cfg_.target_means
                                   ? (*cfg_.target_means)[static_cast<std::size_t>(bn_index)]
                                   : state.running_mean;
            const Tensor& tv = cfg_.target_vars
                                   ? (*cfg_.target_vars)[static_cast<std::size_t>(bn_index)]
                                   : state.running_var;
            const double mean_norm = (cache.batch_mu.vec() - tm.vec()).norm();
            const double var_norm = (cache.batch_var.vec() - tv.vec()).norm();
            for (Index c = 0; c < C; ++c) {
              const double dmu =
                  mean_norm > 1e-12 ? (cache.batch_mu[c] - tm[c]) / (mean_norm * M) : 0.0;
              const double rho = var_norm > 1e-12 ? (cache.batch_var[c] - tv[c]) / var_norm : 0.0;
              for (Index b = 0; b < B; ++b) {
                const double* x = in.ptr() + (b * C + c) * HW;
                double* dx = slot->ptr() + (b * C + c) * HW;
                for (Index i = 0; i < HW; ++i)
                  dx[i] += dmu + rho * 2.0 * (x[i] - cache.batch_mu[c]) / M;
              }
            }
          }
        }
        break;
      }
      case LayerKind::relu: {
        if (Tensor* slot = grad_slot(spec.input)) {
          for (Index i = 0; i < in.numel(); ++i)
            if (out[i] > 0.0) (*slot)[i] += dout[i];
        }
        break;
      }
      case LayerKind::tanh_act: {
        if (Tensor* slot = grad_slot(spec.input))
          for (Index i = 0; i < in.numel(); ++i) (*slot)[i] += dout[i] * (1.0 - out[i] * out[i]);
        break;
      }
      case LayerKind::avgpool2: {
        if (Tensor* slot = grad_slot(spec.input)) {
          const Index B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
          for (Index bc = 0; bc < B * C; ++bc) {
            const double* dy = dout.ptr() + bc * (H / 2) * (W / 2);
            double* dx = slot->ptr() + bc * H * W;
            for (Index y = 0; y < H / 2; ++y)
              for (Index x = 0; x < W / 2; ++x) {
                double g = 0.25 * dy[y * (W / 2) + x];
                dx[2 * y * W + 2 * x] += g;
                dx[2 * y * W + 2 * x + 1] += g;
                dx[(2 * y + 1) * W + 2 * x] += g;
                dx[(2 * y + 1) * W + 2 * x + 1] += g;
              }
          }
        }
        break;
      }
      case LayerKind::global_avgpool: {
        if (Tensor* slot = grad_slot(spec.input)) {
          const Index B = in.shape[0], C = in.shape[1], HW = in.shape[2] * in.shape[3];
          for (Index bc = 0; bc < B * C; ++bc) {
            double g = dout[bc] / static_cast<double>(HW);
            double* dx = slot->ptr() + bc * HW;
            for (Index i = 0; i < HW; ++i) dx[i] += g;
          }
        }
        break;
      }
      case LayerKind::flatten: {
        if (Tensor* slot = grad_slot(spec.input))
          for (Index i = 0; i < in.numel(); ++i) (*slot)[i] += dout[i];
        break;
      }
      case LayerKind::linear: {
        const Index OUT = spec.out_channels, IN = in.shape[1];
        if (want_param_grads) {
          ParamGrads& pg = param_grads_[liu];
          ensure_shape(pg.weight, state.weight.shape);
          pg.weight.mat(OUT, IN).noalias() = dout.mat2d().transpose() * in.mat2d();
          if (spec.bias) {
            ensure_shape(pg.bias, {OUT});
            pg.bias.vec() = dout.mat2d().colwise().sum();
          }
        }
        if (Tensor* slot = grad_slot(spec.input))
          slot->mat2d().noalias() += dout.mat2d() * state.weight.mat(OUT, IN);
        break;
      }
      case LayerKind::residual_add: {
        if (Tensor* slot = grad_slot(spec.input)) slot->vec() += dout.vec();
        if (Tensor* slot = grad_slot(spec.skip)) slot->vec() += dout.vec();
        break;
      }
    }
  }

  if (want_input_grad && !input_grad_set_) {
    ensure_shape(input_grad_, images_->shape);
    input_grad_.fill(0.0);
  }
}

FeatureStatistics Network::captured_stats() const {
  FeatureStatistics stats;
  stats.batch_size = images_ ? images_->shape[0] : 0;
  const auto& schema = model_->schema;
  for (std::size_t li = 0; li < schema.layers.size(); ++li) {
    if (schema.layers[li].kind != LayerKind::batchnorm2d) continue;
    FeatureStatistics::LayerStats ls;
    ls.layer_id = schema.layers[li].id;
    ls.mean = bn_cache_[li].batch_mu;
    ls.variance = bn_cache_[li].batch_var;
    stats.per_layer.push_back(std::move(ls));
  }
  return stats;
}

const Tensor& Network::features() const {
  const auto& schema = model_->schema;
  for (std::size_t li = schema.layers.size(); li-- > 0;)
    if (schema.layers[li].kind == LayerKind::linear) {
      int input = schema.layers[li].input;
      require(input >= 0, ErrorCode::invalid_argument, "linear layer fed directly by images");
      return acts_[static_cast<std::size_t>(input)];
    }
  fail(ErrorCode::invalid_argument, "model has no linear layer");
}

// -------------------------------------------------------------------- losses

Tensor softmax_rows(const Tensor& logits) {
  const Index B = logits.shape[0], C = logits.shape[1];
  Tensor p(logits.shape);
  for (Index b = 0; b < B; ++b) {
    double mx = logits.at2(b, 0);
    for (Index c = 1; c < C; ++c) mx = std::max(mx, logits.at2(b, c));
    double z = 0.0;
    for (Index c = 0; c < C; ++c) z += std::exp(logits.at2(b, c) - mx);
    for (Index c = 0; c < C; ++c) p.at2(b, c) = std::exp(logits.at2(b, c) - mx) / z;
  }
  return p;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const Index B = logits.shape[0], C = logits.shape[1];
  require(static_cast<Index>(labels.size()) == B, ErrorCode::shape_mismatch,
          "label count does not match batch");
  Tensor p = softmax_rows(logits);
  double loss = 0.0;
  for (Index b = 0; b < B; ++b)
    loss -= std::log(std::max(p.at2(b, labels[static_cast<std::size_t>(b)]), 1e-300));
  loss /= static_cast<double>(B);
  if (dlogits) {
    *dlogits = p;
    for (Index b = 0; b < B; ++b) {
      for (Index c = 0; c < C; ++c) dlogits->at2(b, c) /= static_cast<double>(B);
      dlogits->at2(b, labels[static_cast<std::size_t>(b)]) -= 1.0 / static_cast<double>(B);
    }
  }
  return loss;
}

double cross_entropy_soft(const Tensor& logits, const Tensor& targets, Tensor* dlogits) {
  const Index B = logits.shape[0], C = logits.shape[1];
  require(targets.shape == logits.shape, ErrorCode::shape_mismatch, "soft targets must match logits");
  Tensor p = softmax_rows(logits);
  double loss = 0.0;
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) loss -= targets.at2(b, c) * std::log(std::max(p.at2(b, c), 1e-300));
  loss /= static_cast<double>(B);
  if (dlogits) {
    *dlogits = Tensor(logits.shape);
    for (Index b = 0; b < B; ++b)
      for (Index c = 0; c < C; ++c)
        dlogits->at2(b, c) = (p.at2(b, c) - targets.at2(b, c)) / static_cast<double>(B);
  }
  return loss;
}

double mse_onehot(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const Index B = logits.shape[0], C = logits.shape[1];
  require(static_cast<Index>(labels.size()) == B, ErrorCode::shape_mismatch,
          "label count does not match batch");
  double loss = 0.0;
  if (dlogits) *dlogits = Tensor(logits.shape);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      double r = logits.at2(b, c) - (labels[static_cast<std::size_t>(b)] == c ? 1.0 : 0.0);
      loss += 0.5 * r * r;
      if (dlogits) dlogits->at2(b, c) = r / static_cast<double>(B);
    }
  return loss / static_cast<double>(B);
}

double loss_by_kind(LossKind kind, const Tensor& logits, const std::vector<int>& labels,
                    Tensor* dlogits) {
  return kind == LossKind::cross_entropy ? cross_entropy(logits, labels, dlogits)
                                         : mse_onehot(logits, labels, dlogits);
}

}  // namespace teddy
