#include "strokenet/layers.hpp"

#include <algorithm>
#include <cmath>

#include "strokenet/errors.hpp"

namespace strokenet {

namespace {

void require_rank5(const Tensor& x, const char* what) {
  if (x.rank() != 5) {
    throw ShapeError(std::string(what) + " expects (N,C,D,H,W), got " + shape_to_string(x.shape()));
  }
}

// Valid output index range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t out_len, std::size_t in_len, std::size_t stride,
                        std::size_t pad, std::size_t k, std::size_t& lo, std::size_t& hi) {
  // in = o*stride + k - pad must satisfy 0 <= in < in_len.
  lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  const long long last = static_cast<long long>(in_len) - 1 + static_cast<long long>(pad) -
                         static_cast<long long>(k);
  if (last < 0) {
    hi = 0;
    return;
  }
  hi = std::min(out_len, static_cast<std::size_t>(last) / stride + 1);
  if (hi < lo) hi = lo;
}

inline double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

std::array<std::size_t, 3> conv3d_output_dims(const std::array<std::size_t, 3>& input,
                                              const std::array<std::size_t, 3>& kernel,
                                              const ConvSpec& spec) {
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (spec.stride[a] == 0) throw ShapeError("conv3d stride must be >= 1");
    const long long span = static_cast<long long>(input[a]) + 2LL * spec.padding[a] -
                           static_cast<long long>(kernel[a]);
    if (span < 0) {
      throw ShapeError("conv3d output dim < 1 on spatial axis " + std::to_string(a) +
                       " (input " + std::to_string(input[a]) + ", kernel " +
                       std::to_string(kernel[a]) + ")");
    }
    out[a] = static_cast<std::size_t>(span) / spec.stride[a] + 1;
  }
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  require_rank5(x, "conv3d input");
  require_rank5(weight, "conv3d weight");
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv3d weight " + shape_to_string(weight.shape()) + " does not match input " +
                     shape_to_string(x.shape()));
  }
  if (bias.size() != cout) throw ShapeError("conv3d bias must have Cout entries");
  const std::array<std::size_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<std::size_t, 3> k{weight.dim(2), weight.dim(3), weight.dim(4)};
  const auto o = conv3d_output_dims(in, k, spec);
  const auto [sd, sh, sw] = spec.stride;
  const auto [pd, ph, pw] = spec.padding;

  Tensor out({n, cout, o[0], o[1], o[2]});
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = o[0] * o[1] * o[2];
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.mutable_data().data();

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* oslice = od + (b * cout + co) * out_vol;
      std::fill_n(oslice, out_vol, bias[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* islice = xd + (b * cin + ci) * in_vol;
        const double* wk = wd + (co * cin + ci) * k[0] * k[1] * k[2];
        for (std::size_t kd = 0; kd < k[0]; ++kd) {
          std::size_t d0, d1;
          valid_range(o[0], in[0], sd, pd, kd, d0, d1);
          for (std::size_t kh = 0; kh < k[1]; ++kh) {
            std::size_t h0, h1;
            valid_range(o[1], in[1], sh, ph, kh, h0, h1);
            for (std::size_t kw = 0; kw < k[2]; ++kw) {
              std::size_t w0, w1;
              valid_range(o[2], in[2], sw, pw, kw, w0, w1);
              const double wv = wk[(kd * k[1] + kh) * k[2] + kw];
              if (wv == 0.0) continue;
              for (std::size_t od_ = d0; od_ < d1; ++od_) {
                const std::size_t id = od_ * sd + kd - pd;
                for (std::size_t oh = h0; oh < h1; ++oh) {
                  const std::size_t ih = oh * sh + kh - ph;
                  double* orow = oslice + (od_ * o[1] + oh) * o[2];
                  const double* irow = islice + (id * in[1] + ih) * in[2];
                  if (sw == 1) {
                    for (std::size_t ow = w0; ow < w1; ++ow) orow[ow] += wv * irow[ow + kw - pw];
                  } else {
                    for (std::size_t ow = w0; ow < w1; ++ow) {
                      orow[ow] += wv * irow[ow * sw + kw - pw];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                            const Tensor& grad_out) {
  require_rank5(x, "conv3d input");
  const std::size_t n = x.dim(0), cin = x.dim(1);
  const std::size_t cout = weight.dim(0);
  const std::array<std::size_t, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<std::size_t, 3> k{weight.dim(2), weight.dim(3), weight.dim(4)};
  const auto o = conv3d_output_dims(in, k, spec);
  const Shape expected{n, cout, o[0], o[1], o[2]};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d grad_out " + shape_to_string(grad_out.shape()) + " expected " +
                     shape_to_string(expected));
  }
  const auto [sd, sh, sw] = spec.stride;
  const auto [pd, ph, pw] = spec.padding;

  Conv3dGrads g{Tensor::zeros_like(x), Tensor::zeros_like(weight), Tensor({cout}, 0.0)};
  const std::size_t in_vol = in[0] * in[1] * in[2];
  const std::size_t out_vol = o[0] * o[1] * o[2];
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  const double* gd = grad_out.data().data();
  double* gx = g.input.mutable_data().data();
  double* gw = g.weight.mutable_data().data();

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* gslice = gd + (b * cout + co) * out_vol;
      double bsum = 0.0;
      for (std::size_t i = 0; i < out_vol; ++i) bsum += gslice[i];
      g.bias[co] += bsum;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* islice = xd + (b * cin + ci) * in_vol;
        double* gislice = gx + (b * cin + ci) * in_vol;
        const std::size_t woff = (co * cin + ci) * k[0] * k[1] * k[2];
        for (std::size_t kd = 0; kd < k[0]; ++kd) {
          std::size_t d0, d1;
          valid_range(o[0], in[0], sd, pd, kd, d0, d1);
          for (std::size_t kh = 0; kh < k[1]; ++kh) {
            std::size_t h0, h1;
            valid_range(o[1], in[1], sh, ph, kh, h0, h1);
            for (std::size_t kw = 0; kw < k[2]; ++kw) {
              std::size_t w0, w1;
              valid_range(o[2], in[2], sw, pw, kw, w0, w1);
              const std::size_t widx = woff + (kd * k[1] + kh) * k[2] + kw;
              const double wv = wd[widx];
              double wacc = 0.0;
              for (std::size_t od_ = d0; od_ < d1; ++od_) {
                const std::size_t id = od_ * sd + kd - pd;
                for (std::size_t oh = h0; oh < h1; ++oh) {
                  const std::size_t ih = oh * sh + kh - ph;
                  const double* grow = gslice + (od_ * o[1] + oh) * o[2];
                  const std::size_t ibase = (id * in[1] + ih) * in[2];
                  const double* irow = islice + ibase;
                  double* girow = gislice + ibase;
                  for (std::size_t ow = w0; ow < w1; ++ow) {
                    const std::size_t iw = ow * sw + kw - pw;
                    wacc += grow[ow] * irow[iw];
                    girow[iw] += wv * grow[ow];
                  }
                }
              }
              gw[widx] += wacc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor instance_norm3d(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps,
                       InstanceNormCache* cache) {
  require_rank5(x, "instance_norm3d");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3) * x.dim(4);
  if (m < 2) {
    throw DegenerateInputError("instance_norm3d needs at least 2 spatial voxels, got shape " +
                               shape_to_string(x.shape()));
  }
  if (scale.size() != c || shift.size() != c) {
    throw ShapeError("instance_norm3d scale/shift must have C=" + std::to_string(c) + " entries");
  }
  Tensor out(x.shape());
  Tensor normalized(x.shape());
  std::vector<double> inv_std(n * c);
  const double* xd = x.data().data();
  double* yd = out.mutable_data().data();
  double* nd = normalized.mutable_data().data();
  for (std::size_t s = 0; s < n * c; ++s) {
    const double* xs = xd + s * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[s] = is;
    const double g = scale[s % c], b = shift[s % c];
    for (std::size_t i = 0; i < m; ++i) {
      const double xh = (xs[i] - mean) * is;
      nd[s * m + i] = xh;
      yd[s * m + i] = g * xh + b;
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

InstanceNormGrads instance_norm3d_backward(const InstanceNormCache& cache, const Tensor& scale,
                                           const Tensor& grad_out) {
  const Tensor& xh = cache.normalized;
  if (grad_out.shape() != xh.shape()) throw ShapeError("instance_norm3d grad_out shape mismatch");
  const std::size_t n = xh.dim(0), c = xh.dim(1);
  const std::size_t m = xh.dim(2) * xh.dim(3) * xh.dim(4);
  InstanceNormGrads g{Tensor(xh.shape()), Tensor({c}, 0.0), Tensor({c}, 0.0)};
  const double* gd = grad_out.data().data();
  const double* hd = xh.data().data();
  double* gx = g.input.mutable_data().data();
  const double md = static_cast<double>(m);
  for (std::size_t s = 0; s < n * c; ++s) {
    const std::size_t ch = s % c;
    const double* gs = gd + s * m;
    const double* hs = hd + s * m;
    double sum_g = 0.0, sum_gh = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sum_g += gs[i];
      sum_gh += gs[i] * hs[i];
    }
    g.shift[ch] += sum_g;
    g.scale[ch] += sum_gh;
    const double gamma = scale[ch];
    // d(xhat) = g * gamma; dx = inv_std/M * (M*dxh - sum(dxh) - xhat*sum(dxh*xhat))
    const double k = gamma * cache.inv_std[s] / md;
    for (std::size_t i = 0; i < m; ++i) {
      gx[s * m + i] = k * (md * gs[i] - sum_g - hs[i] * sum_gh);
    }
  }
  return g;
}

double activate(double v, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::leaky_relu: return v >= 0 ? v : act.slope * v;
    case ActivationKind::relu: return v > 0 ? v : 0.0;
    case ActivationKind::sigmoid: return sigmoid(v);
  }
  return v;
}

Tensor activation(const Tensor& x, const Activation& act) {
  Tensor y(x.shape());
  auto yd = y.mutable_data();
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = activate(xd[i], act);
  return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& y, const Activation& act,
                           const Tensor& grad_out) {
  if (grad_out.shape() != x.shape()) throw ShapeError("activation grad_out shape mismatch");
  Tensor g(x.shape());
  auto gd = g.mutable_data();
  auto go = grad_out.data();
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    switch (act.kind) {
      case ActivationKind::leaky_relu: gd[i] = xd[i] >= 0 ? go[i] : act.slope * go[i]; break;
      case ActivationKind::relu: gd[i] = xd[i] > 0 ? go[i] : 0.0; break;
      case ActivationKind::sigmoid: gd[i] = go[i] * yd[i] * (1.0 - yd[i]); break;
    }
  }
  return g;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (bias.size() != out) throw ShapeError("linear: bias must have " + std::to_string(out) + " entries");
  Tensor y({n, out});
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      const double* xr = xd + i * in;
      const double* wr = wd + o * in;
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      y[i * out + o] = acc;
    }
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (grad_out.shape() != Shape{n, out}) throw ShapeError("linear grad_out shape mismatch");
  LinearGrads g{matmul(grad_out, weight), matmul(transpose(grad_out), x), Tensor({out}, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += grad_out[i * out + o];
  (void)in;
  return g;
}

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
}

Tensor Dropout::forward(const Tensor& x, bool training, Rng& rng) {
  masked_ = training && rate_ > 0.0;
  if (!masked_) return x;
  mask_ = Tensor(x.shape());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate_);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = uniform(rng) < rate_ ? 0.0 : keep_scale;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) const {
  if (!masked_) return grad_out;
  return mul(grad_out, mask_);
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax expects (N,C), got " + shape_to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = x[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[i * c + j] = std::exp(x[i * c + j] - mx);
      sum += y[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] /= sum;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad_out) {
  if (grad_out.shape() != y.shape()) throw ShapeError("softmax grad_out shape mismatch");
  const std::size_t n = y.dim(0), c = y.dim(1);
  Tensor g(y.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += grad_out[i * c + j] * y[i * c + j];
    for (std::size_t j = 0; j < c; ++j) g[i * c + j] = y[i * c + j] * (grad_out[i * c + j] - dot);
  }
  return g;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank5(x, "global_avg_pool");
  return reduce(x, {2, 3, 4}, ReduceOp::mean);
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 5 || grad_out.shape() != Shape{input_shape[0], input_shape[1]}) {
    throw ShapeError("global_avg_pool grad_out shape mismatch");
  }
  const std::size_t m = input_shape[2] * input_shape[3] * input_shape[4];
  Tensor g(input_shape);
  auto gd = g.mutable_data();
  for (std::size_t s = 0; s < grad_out.size(); ++s) {
    const double v = grad_out[s] / static_cast<double>(m);
    std::fill_n(gd.begin() + s * m, m, v);
  }
  return g;
}

std::size_t cse_hidden_width(std::size_t channels, std::size_t ratio) {
  if (channels == 0 || ratio == 0) throw ParameterError("cSE needs C >= 1 and r >= 1");
  return (channels + ratio - 1) / ratio;
}

namespace {

// x (N,C,M...) scaled by gate (N,C): per-channel.
Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t m = x.size() / (n * c);
  Tensor y(x.shape());
  for (std::size_t s = 0; s < n * c; ++s) {
    const double g = gate[s];
    for (std::size_t i = 0; i < m; ++i) y[s * m + i] = x[s * m + i] * g;
  }
  return y;
}

}  // namespace

Tensor cse_block(const Tensor& x, const CseWeights& w, CseCache* cache) {
  require_rank5(x, "cse_block");
  Tensor pooled = global_avg_pool(x);
  Tensor hidden_pre = linear(pooled, w.squeeze_weight, w.squeeze_bias);
  Tensor hidden = activation(hidden_pre, Activation::relu());
  Tensor gate = activation(linear(hidden, w.excite_weight, w.excite_bias), Activation::sigmoid());
  Tensor y = scale_channels(x, gate);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->gate = std::move(gate);
  }
  return y;
}

CseGrads cse_block_backward(const Tensor& x, const CseWeights& w, const CseCache& cache,
                            const Tensor& grad_out) {
  if (grad_out.shape() != x.shape()) throw ShapeError("cse_block grad_out shape mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t m = x.size() / (n * c);
  // Direct path through the multiplication, and d(gate).
  Tensor dx = scale_channels(grad_out, cache.gate);
  Tensor dgate({n, c}, 0.0);
  for (std::size_t s = 0; s < n * c; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += grad_out[s * m + i] * x[s * m + i];
    dgate[s] = acc;
  }
  Tensor dexcite_pre(dgate.shape());
  for (std::size_t s = 0; s < dgate.size(); ++s) {
    const double g = cache.gate[s];
    dexcite_pre[s] = dgate[s] * g * (1.0 - g);
  }
  LinearGrads excite = linear_backward(cache.hidden, w.excite_weight, dexcite_pre);
  Tensor dhidden_pre =
      activation_backward(cache.hidden_pre, cache.hidden, Activation::relu(), excite.input);
  LinearGrads squeeze = linear_backward(cache.pooled, w.squeeze_weight, dhidden_pre);
  Tensor dpool = global_avg_pool_backward(x.shape(), squeeze.input);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dpool[i];
  return {std::move(dx), std::move(squeeze.weight), std::move(squeeze.bias),
          std::move(excite.weight), std::move(excite.bias)};
}

Tensor sse_block(const Tensor& x, const Tensor& weight, const Tensor& bias, SseCache* cache) {
  require_rank5(x, "sse_block");
  const ConvSpec pointwise{{1, 1, 1}, {0, 0, 0}};
  Tensor gate = activation(conv3d(x, weight, bias, pointwise), Activation::sigmoid());
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t m = x.size() / (n * c);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < m; ++i)
        y[(b * c + ch) * m + i] = x[(b * c + ch) * m + i] * gate[b * m + i];
  if (cache) cache->gate = std::move(gate);
  return y;
}

SseGrads sse_block_backward(const Tensor& x, const Tensor& weight, const SseCache& cache,
                            const Tensor& grad_out) {
  if (grad_out.shape() != x.shape()) throw ShapeError("sse_block grad_out shape mismatch");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t m = x.size() / (n * c);
  Tensor dx(x.shape());
  Tensor dpre(cache.gate.shape(), 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t idx = (b * c + ch) * m + i;
        dx[idx] = grad_out[idx] * cache.gate[b * m + i];
        dpre[b * m + i] += grad_out[idx] * x[idx];
      }
    }
  }
  for (std::size_t i = 0; i < dpre.size(); ++i) {
    const double q = cache.gate[i];
    dpre[i] *= q * (1.0 - q);
  }
  const ConvSpec pointwise{{1, 1, 1}, {0, 0, 0}};
  Conv3dGrads conv = conv3d_backward(x, weight, pointwise, dpre);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += conv.input[i];
  return {std::move(dx), std::move(conv.weight), std::move(conv.bias)};
}

namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(base) ^ a) ^ b);
}

Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ParameterError("he_normal fan_in must be >= 1");
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = normal(rng);
  return t;
}

}  // namespace strokenet
