#pragma once

// Forward and hand-derived backward passes for the layers of the outcome network.
// Volumetric tensors are laid out (N, C, D, H, W). Every backward returns the
// gradient w.r.t. the layer input plus one gradient per parameter tensor, each
// shaped like the tensor it differentiates.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "strokenet/tensor.hpp"

namespace strokenet {

using Rng = std::mt19937_64;

// Independent stream seed for (base, a, b), e.g. (run seed, epoch, sample index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

inline constexpr double kDefaultLeakySlope = 0.01;
inline constexpr double kDefaultNormEps = 1e-5;

struct ConvSpec {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{1, 1, 1};
};

// Output spatial extent for a given input extent and kernel. Throws ShapeError when < 1.
std::array<std::size_t, 3> conv3d_output_dims(const std::array<std::size_t, 3>& input,
                                              const std::array<std::size_t, 3>& kernel,
                                              const ConvSpec& spec);

struct Conv3dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// Zero-padded cross-correlation. weight is (Cout, Cin, kd, kh, kw), bias is (Cout).
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);
Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& weight, const ConvSpec& spec,
                            const Tensor& grad_out);

struct InstanceNormCache {
  Tensor normalized;           // (x - mean) * inv_std, same shape as x
  std::vector<double> inv_std;  // one per (n, c)
};

struct InstanceNormGrads {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

// Per-(n, c) standardisation over D*H*W followed by a per-channel affine map.
// No running statistics. Throws DegenerateInputError when D*H*W < 2.
Tensor instance_norm3d(const Tensor& x, const Tensor& scale, const Tensor& shift,
                       double eps = kDefaultNormEps, InstanceNormCache* cache = nullptr);
InstanceNormGrads instance_norm3d_backward(const InstanceNormCache& cache, const Tensor& scale,
                                           const Tensor& grad_out);

enum class ActivationKind { leaky_relu, relu, sigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double slope = kDefaultLeakySlope;  // leaky_relu only

  static Activation leaky_relu(double slope = kDefaultLeakySlope) {
    return {ActivationKind::leaky_relu, slope};
  }
  static Activation relu() { return {ActivationKind::relu, 0.0}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
};

double activate(double v, const Activation& act);
Tensor activation(const Tensor& x, const Activation& act);
// x is the forward input, y the forward output.
Tensor activation_backward(const Tensor& x, const Tensor& y, const Activation& act,
                           const Tensor& grad_out);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// y = x * W^T + b with x (N, in), W (out, in), b (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

// Inverted dropout. The mask drawn in a training-mode forward is reused by the
// matching backward, so a forward/backward pair must stay on one thread.
class Dropout {
 public:
  explicit Dropout(double rate);

  double rate() const noexcept { return rate_; }
  Tensor forward(const Tensor& x, bool training, Rng& rng);
  Tensor backward(const Tensor& grad_out) const;

 private:
  double rate_;
  bool masked_ = false;
  Tensor mask_;  // 0 or 1/(1-rate) per element
};

// Row-wise, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& grad_out);

// (N, C, D, H, W) -> (N, C)
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

// Channel squeeze-and-excitation: s = sigmoid(W2 relu(W1 GAP(x) + b1) + b2),
// out = x * s per channel. W1 is (ceil(C/r), C), W2 is (C, ceil(C/r)).
struct CseWeights {
  const Tensor& squeeze_weight;
  const Tensor& squeeze_bias;
  const Tensor& excite_weight;
  const Tensor& excite_bias;
};

struct CseCache {
  Tensor pooled;        // (N, C)
  Tensor hidden_pre;    // (N, C/r)
  Tensor hidden;        // (N, C/r)
  Tensor gate;          // (N, C)
};

struct CseGrads {
  Tensor input;
  Tensor squeeze_weight;
  Tensor squeeze_bias;
  Tensor excite_weight;
  Tensor excite_bias;
};

std::size_t cse_hidden_width(std::size_t channels, std::size_t ratio);
Tensor cse_block(const Tensor& x, const CseWeights& w, CseCache* cache = nullptr);
CseGrads cse_block_backward(const Tensor& x, const CseWeights& w, const CseCache& cache,
                            const Tensor& grad_out);

// Spatial squeeze-and-excitation: q = sigmoid(conv1x1x1(x)), out = x * q per voxel.
// weight is (1, C, 1, 1, 1), bias is (1).
struct SseCache {
  Tensor gate;  // (N, 1, D, H, W)
};

struct SseGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

Tensor sse_block(const Tensor& x, const Tensor& weight, const Tensor& bias,
                 SseCache* cache = nullptr);
SseGrads sse_block_backward(const Tensor& x, const Tensor& weight, const SseCache& cache,
                            const Tensor& grad_out);

// He-normal (fan-in) initialisation: N(0, 2 / fan_in).
Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace strokenet
