#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "strokenet/layers.hpp"
#include "strokenet/tensor.hpp"

namespace strokenet {

enum class Mode { image_only, metadata_only, multimodal };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct ModelConfig {
  std::array<std::size_t, 3> conv_channels{16, 32, 64};
  std::array<std::array<std::size_t, 3>, 3> block_strides{{{2, 2, 2}, {2, 2, 2}, {1, 1, 1}}};
  std::size_t image_feature_size = 64;     // J
  std::size_t metadata_feature_size = 32;  // L, must be <= J
  std::size_t metadata_dim = 2;            // V: 2 (treatment one-hot) or 52 (clinical layout)
  std::size_t num_classes = 2;             // C: 2 (dichotomised) or 7 (individual mRS)
  bool attention_enabled = true;
  std::size_t se_ratio = 2;
  double dropout_rate = 0.5;
  double leaky_slope = kDefaultLeakySlope;
  double norm_eps = kDefaultNormEps;
  std::size_t clinic_hidden = 128;
  Mode mode = Mode::image_only;

  // Throws ConfigError naming every violated invariant.
  void validate() const;
  bool uses_image() const { return mode != Mode::metadata_only; }

  // Flat key=value form used by checkpoints and run configs.
  std::map<std::string, std::string> to_key_values() const;
  // Applies recognised keys; unknown keys are left for the caller. Returns keys consumed.
  std::vector<std::string> apply_key_values(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Ordered, named parameter tensors. Iteration follows insertion order, which is
// the layer order of the network.
class ModelParams {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;
  const NamedTensor& entry(std::size_t i) const { return entries_.at(i); }
  NamedTensor& entry(std::size_t i) { return entries_.at(i); }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  ModelParams zeros_like() const;
  // Same names in the same order with the same shapes.
  bool same_layout(const ModelParams& other) const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

// Allocates and initialises every tensor for config.mode: the imaging network
// (conv blocks, optional cSE/sSE, FC_image, FC_meta, head) or ClinicDNN (fc1, fc2).
ModelParams build_model(const ModelConfig& config, Rng& rng);

// Intermediate shapes of the three conv blocks for an (N,1,D,H,W) input.
std::array<Shape, 3> ife_block_shapes(const ModelConfig& config, const Shape& input_shape);

struct ConvBlockCache {
  Tensor input;
  Tensor conv_out;
  InstanceNormCache norm;
  Tensor norm_out;
  Tensor output;
};

struct IfeCache {
  std::array<ConvBlockCache, 3> blocks;
  CseCache cse;
  SseCache sse;
  Shape fused_shape;
};

// X~ = GAP(F) with F = B3 + cSE(B3) + sSE(B3) (attention) or F = B3.
Tensor ife_forward(const Tensor& x, const ModelParams& params, const ModelConfig& config,
                   IfeCache* cache = nullptr);
// Accumulates parameter gradients into grads; returns d(loss)/d(x).
Tensor ife_backward(const IfeCache& cache, const Tensor& grad_features, const ModelParams& params,
                    const ModelConfig& config, ModelParams& grads);

struct ImfCache {
  Tensor image_features;
  Tensor image_pre;
  Tensor image_out;
  Tensor meta;
  Tensor meta_pre;
  Tensor meta_out;
};

// concat(ReLU(FC_image(x_feat)), ReLU(FC_meta(meta))) -> (N, J + L)
Tensor imf_forward(const Tensor& image_features, const Tensor& meta, const ModelParams& params,
                   const ModelConfig& config, ImfCache* cache = nullptr);
// Returns d(loss)/d(image_features).
Tensor imf_backward(const ImfCache& cache, const Tensor& grad_fused, const ModelParams& params,
                    const ModelConfig& config, ModelParams& grads);

struct Prediction {
  Tensor probs;           // (N, C)
  std::vector<int> mrs;   // argmax per row, ties to the lowest class
};

std::vector<int> argmax_rows(const Tensor& probs);

// Imaging network inference (image_only or multimodal).
Prediction predict(const Tensor& x, const Tensor& meta, const ModelParams& params,
                   const ModelConfig& config);

struct ClinicCache {
  Tensor meta;
  Tensor hidden_pre;
  Tensor hidden;
  Tensor dropped;
  Dropout dropout{0.0};
};

// softmax(FC2(dropout(ReLU(FC1(meta))))).
Tensor clinic_dnn_forward(const Tensor& meta, const ModelParams& params, const ModelConfig& config,
                          bool training, Rng& rng);

// Unified training-time interface over both network kinds.
struct ForwardCache {
  IfeCache ife;
  ImfCache imf;
  Tensor fused;
  ClinicCache clinic;
  Tensor logits;
};

// images may be empty (rank-1 placeholder) in metadata_only mode.
Tensor forward_logits(const Tensor& images, const Tensor& meta, const ModelParams& params,
                      const ModelConfig& config, bool training, Rng& rng,
                      ForwardCache* cache = nullptr);
void backward_logits(const ForwardCache& cache, const Tensor& grad_logits,
                     const ModelParams& params, const ModelConfig& config, ModelParams& grads);

}  // namespace strokenet
