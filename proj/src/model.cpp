#include "strokenet/model.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "strokenet/errors.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::image_only: return "image_only";
    case Mode::metadata_only: return "metadata_only";
    case Mode::multimodal: return "multimodal";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  if (text == "image_only") return Mode::image_only;
  if (text == "metadata_only") return Mode::metadata_only;
  if (text == "multimodal") return Mode::multimodal;
  throw ConfigError("unknown mode '" + text + "' (expected image_only, metadata_only, multimodal)");
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (metadata_feature_size > image_feature_size) problems.push_back("L <= J");
  if (metadata_feature_size == 0 || image_feature_size == 0) problems.push_back("J, L >= 1");
  if (num_classes != 2 && num_classes != 7) problems.push_back("C in {2,7}");
  if (metadata_dim != 2 && metadata_dim != 52) problems.push_back("V in {2,52}");
  if (mode == Mode::image_only && metadata_dim != 2) problems.push_back("image_only requires V=2");
  if (mode != Mode::image_only && metadata_dim != 52) {
    problems.push_back(to_string(mode) + " requires V=52");
  }
  for (auto c : conv_channels)
    if (c == 0) problems.push_back("conv_channels >= 1");
  for (const auto& s : block_strides)
    for (auto v : s)
      if (v == 0) problems.push_back("block_strides >= 1");
  if (se_ratio == 0) problems.push_back("se_ratio >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) problems.push_back("dropout_rate in [0,1)");
  if (!(norm_eps > 0.0)) problems.push_back("norm_eps > 0");
  if (clinic_hidden == 0) problems.push_back("clinic_hidden >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid model config, violated:";
    for (const auto& p : problems) msg += " [" + p + "]";
    throw ConfigError(msg);
  }
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
  std::map<std::string, std::string> kv;
  kv["model.conv_channels"] = join_sizes({conv_channels.begin(), conv_channels.end()}, ',');
  std::string strides;
  for (std::size_t b = 0; b < 3; ++b) {
    if (b) strides += ';';
    strides += join_sizes({block_strides[b].begin(), block_strides[b].end()}, 'x');
  }
  kv["model.block_strides"] = strides;
  kv["model.image_feature_size"] = std::to_string(image_feature_size);
  kv["model.metadata_feature_size"] = std::to_string(metadata_feature_size);
  kv["model.metadata_dim"] = std::to_string(metadata_dim);
  kv["model.num_classes"] = std::to_string(num_classes);
  kv["model.attention_enabled"] = attention_enabled ? "true" : "false";
  kv["model.se_ratio"] = std::to_string(se_ratio);
  kv["model.dropout_rate"] = format_double(dropout_rate);
  kv["model.leaky_slope"] = format_double(leaky_slope);
  kv["model.norm_eps"] = format_double(norm_eps);
  kv["model.clinic_hidden"] = std::to_string(clinic_hidden);
  kv["model.mode"] = to_string(mode);
  return kv;
}

std::vector<std::string> ModelConfig::apply_key_values(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> used;
  auto take = [&](const std::string& key, auto&& fn) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    fn(it->second);
    used.push_back(key);
  };
  take("model.conv_channels", [&](const std::string& v) {
    auto parts = parse_sizes(v, ',');
    if (parts.size() != 3) throw ConfigError("model.conv_channels needs 3 values");
    std::copy(parts.begin(), parts.end(), conv_channels.begin());
  });
  take("model.block_strides", [&](const std::string& v) {
    auto blocks = split(v, ';');
    if (blocks.size() != 3) throw ConfigError("model.block_strides needs 3 triples");
    for (std::size_t b = 0; b < 3; ++b) {
      auto parts = parse_sizes(blocks[b], 'x');
      if (parts.size() != 3) throw ConfigError("model.block_strides triple needs 3 values");
      std::copy(parts.begin(), parts.end(), block_strides[b].begin());
    }
  });
  take("model.image_feature_size", [&](const std::string& v) { image_feature_size = parse_size(v); });
  take("model.metadata_feature_size",
       [&](const std::string& v) { metadata_feature_size = parse_size(v); });
  take("model.metadata_dim", [&](const std::string& v) { metadata_dim = parse_size(v); });
  take("model.num_classes", [&](const std::string& v) { num_classes = parse_size(v); });
  take("model.attention_enabled", [&](const std::string& v) { attention_enabled = parse_bool(v); });
  take("model.se_ratio", [&](const std::string& v) { se_ratio = parse_size(v); });
  take("model.dropout_rate", [&](const std::string& v) { dropout_rate = parse_double(v); });
  take("model.leaky_slope", [&](const std::string& v) { leaky_slope = parse_double(v); });
  take("model.norm_eps", [&](const std::string& v) { norm_eps = parse_double(v); });
  take("model.clinic_hidden", [&](const std::string& v) { clinic_hidden = parse_size(v); });
  take("model.mode", [&](const std::string& v) { mode = parse_mode(v); });
  return used;
}

void ModelParams::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ModelParams::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z;
  for (const auto& e : entries_) z.add(e.name, Tensor::zeros_like(e.value));
  return z;
}

bool ModelParams::same_layout(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.shape() != other.entries_[i].value.shape()) return false;
  }
  return true;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name) return false;
    if (!(a.entries_[i].value == b.entries_[i].value)) return false;
  }
  return true;
}

namespace {

constexpr std::size_t kKernel = 3;

std::string block_name(std::size_t b) { return "block" + std::to_string(b + 1); }

void add_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p.add(name + ".weight", he_normal({out, in}, in, rng));
  p.add(name + ".bias", Tensor({out}, 0.0));
}

void accumulate(ModelParams& grads, const std::string& name, const Tensor& g) {
  Tensor& dst = grads.at(name);
  if (dst.shape() != g.shape()) {
    throw ShapeError("gradient for '" + name + "' has shape " + shape_to_string(g.shape()) +
                     ", parameter has " + shape_to_string(dst.shape()));
  }
  auto d = dst.mutable_data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

ConvSpec block_spec(const ModelConfig& config, std::size_t b) {
  return ConvSpec{config.block_strides[b], {1, 1, 1}};
}

CseWeights cse_weights(const ModelParams& p) {
  return {p.at("cse.squeeze.weight"), p.at("cse.squeeze.bias"), p.at("cse.excite.weight"),
          p.at("cse.excite.bias")};
}

}  // namespace

ModelParams build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  if (config.mode == Mode::metadata_only) {
    add_linear(p, "fc1", config.metadata_dim, config.clinic_hidden, rng);
    add_linear(p, "fc2", config.clinic_hidden, config.num_classes, rng);
    return p;
  }
  std::size_t cin = 1;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t cout = config.conv_channels[b];
    const std::string name = block_name(b);
    const std::size_t fan_in = cin * kKernel * kKernel * kKernel;
    p.add(name + ".conv.weight", he_normal({cout, cin, kKernel, kKernel, kKernel}, fan_in, rng));
    p.add(name + ".conv.bias", Tensor({cout}, 0.0));
    p.add(name + ".norm.scale", Tensor({cout}, 1.0));
    p.add(name + ".norm.shift", Tensor({cout}, 0.0));
    cin = cout;
  }
  const std::size_t c3 = config.conv_channels[2];
  if (config.attention_enabled) {
    const std::size_t hidden = cse_hidden_width(c3, config.se_ratio);
    add_linear(p, "cse.squeeze", c3, hidden, rng);
    add_linear(p, "cse.excite", hidden, c3, rng);
    p.add("sse.conv.weight", he_normal({1, c3, 1, 1, 1}, c3, rng));
    p.add("sse.conv.bias", Tensor({1}, 0.0));
  }
  add_linear(p, "fc_image", c3, config.image_feature_size, rng);
  add_linear(p, "fc_meta", config.metadata_dim, config.metadata_feature_size, rng);
  add_linear(p, "head", config.image_feature_size + config.metadata_feature_size,
             config.num_classes, rng);
  return p;
}

std::array<Shape, 3> ife_block_shapes(const ModelConfig& config, const Shape& input_shape) {
  if (input_shape.size() != 5 || input_shape[1] != 1) {
    throw ShapeError("IFE expects (N,1,D,H,W), got " + shape_to_string(input_shape));
  }
  std::array<Shape, 3> shapes;
  std::array<std::size_t, 3> spatial{input_shape[2], input_shape[3], input_shape[4]};
  for (std::size_t b = 0; b < 3; ++b) {
    try {
      spatial = conv3d_output_dims(spatial, {kKernel, kKernel, kKernel}, block_spec(config, b));
    } catch (const ShapeError& e) {
      throw ShapeError(block_name(b) + ": spatial dims collapse below 1 (" + e.what() + ")");
    }
    if (spatial[0] * spatial[1] * spatial[2] < 2) {
      throw ShapeError(block_name(b) + ": output spatial size " +
                       shape_to_string({spatial[0], spatial[1], spatial[2]}) +
                       " too small for instance normalisation");
    }
    shapes[b] = {input_shape[0], config.conv_channels[b], spatial[0], spatial[1], spatial[2]};
  }
  return shapes;
}

Tensor ife_forward(const Tensor& x, const ModelParams& params, const ModelConfig& config,
                   IfeCache* cache) {
  ife_block_shapes(config, x.shape());
  const Activation leaky = Activation::leaky_relu(config.leaky_slope);
  Tensor h = x;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string name = block_name(b);
    Tensor conv_out = conv3d(h, params.at(name + ".conv.weight"), params.at(name + ".conv.bias"),
                             block_spec(config, b));
    InstanceNormCache norm_cache;
    Tensor norm_out = instance_norm3d(conv_out, params.at(name + ".norm.scale"),
                                      params.at(name + ".norm.shift"), config.norm_eps,
                                      cache ? &norm_cache : nullptr);
    Tensor out = activation(norm_out, leaky);
    if (cache) {
      auto& bc = cache->blocks[b];
      bc.input = std::move(h);
      bc.conv_out = std::move(conv_out);
      bc.norm = std::move(norm_cache);
      bc.norm_out = std::move(norm_out);
      bc.output = out;
    }
    h = std::move(out);
  }
  if (config.attention_enabled) {
    Tensor channel = cse_block(h, cse_weights(params), cache ? &cache->cse : nullptr);
    Tensor spatial = sse_block(h, params.at("sse.conv.weight"), params.at("sse.conv.bias"),
                               cache ? &cache->sse : nullptr);
    auto hd = h.mutable_data();
    for (std::size_t i = 0; i < hd.size(); ++i) hd[i] += channel[i] + spatial[i];
  }
  if (cache) cache->fused_shape = h.shape();
  return global_avg_pool(h);
}

Tensor ife_backward(const IfeCache& cache, const Tensor& grad_features, const ModelParams& params,
                    const ModelConfig& config, ModelParams& grads) {
  const Activation leaky = Activation::leaky_relu(config.leaky_slope);
  Tensor grad = global_avg_pool_backward(cache.fused_shape, grad_features);
  if (config.attention_enabled) {
    const Tensor& b3 = cache.blocks[2].output;
    CseGrads cg = cse_block_backward(b3, cse_weights(params), cache.cse, grad);
    SseGrads sg = sse_block_backward(b3, params.at("sse.conv.weight"), cache.sse, grad);
    accumulate(grads, "cse.squeeze.weight", cg.squeeze_weight);
    accumulate(grads, "cse.squeeze.bias", cg.squeeze_bias);
    accumulate(grads, "cse.excite.weight", cg.excite_weight);
    accumulate(grads, "cse.excite.bias", cg.excite_bias);
    accumulate(grads, "sse.conv.weight", sg.weight);
    accumulate(grads, "sse.conv.bias", sg.bias);
    auto gd = grad.mutable_data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += cg.input[i] + sg.input[i];
  }
  for (std::size_t b = 3; b-- > 0;) {
    const std::string name = block_name(b);
    const auto& bc = cache.blocks[b];
    Tensor d_norm = activation_backward(bc.norm_out, bc.output, leaky, grad);
    InstanceNormGrads ng = instance_norm3d_backward(bc.norm, params.at(name + ".norm.scale"), d_norm);
    accumulate(grads, name + ".norm.scale", ng.scale);
    accumulate(grads, name + ".norm.shift", ng.shift);
    Conv3dGrads cg = conv3d_backward(bc.input, params.at(name + ".conv.weight"),
                                     block_spec(config, b), ng.input);
    accumulate(grads, name + ".conv.weight", cg.weight);
    accumulate(grads, name + ".conv.bias", cg.bias);
    grad = std::move(cg.input);
  }
  return grad;
}

Tensor imf_forward(const Tensor& image_features, const Tensor& meta, const ModelParams& params,
                   const ModelConfig& config, ImfCache* cache) {
  if (meta.rank() != 2 || meta.dim(1) != config.metadata_dim) {
    throw ShapeError("metadata width must be V=" + std::to_string(config.metadata_dim) + ", got " +
                     shape_to_string(meta.shape()));
  }
  if (image_features.rank() != 2 || image_features.dim(0) != meta.dim(0)) {
    throw ShapeError("image features " + shape_to_string(image_features.shape()) +
                     " do not pair with metadata " + shape_to_string(meta.shape()));
  }
  const Activation relu = Activation::relu();
  Tensor image_pre = linear(image_features, params.at("fc_image.weight"), params.at("fc_image.bias"));
  Tensor image_out = activation(image_pre, relu);
  Tensor meta_pre = linear(meta, params.at("fc_meta.weight"), params.at("fc_meta.bias"));
  Tensor meta_out = activation(meta_pre, relu);
  Tensor fused = concat_columns(image_out, meta_out);
  if (cache) {
    cache->image_features = image_features;
    cache->image_pre = std::move(image_pre);
    cache->image_out = std::move(image_out);
    cache->meta = meta;
    cache->meta_pre = std::move(meta_pre);
    cache->meta_out = std::move(meta_out);
  }
  return fused;
}

Tensor imf_backward(const ImfCache& cache, const Tensor& grad_fused, const ModelParams& params,
                    const ModelConfig& config, ModelParams& grads) {
  const std::size_t j = config.image_feature_size;
  const std::size_t l = config.metadata_feature_size;
  const Activation relu = Activation::relu();
  Tensor d_image = activation_backward(cache.image_pre, cache.image_out, relu,
                                       slice_columns(grad_fused, 0, j));
  Tensor d_meta = activation_backward(cache.meta_pre, cache.meta_out, relu,
                                      slice_columns(grad_fused, j, j + l));
  LinearGrads gi = linear_backward(cache.image_features, params.at("fc_image.weight"), d_image);
  LinearGrads gm = linear_backward(cache.meta, params.at("fc_meta.weight"), d_meta);
  accumulate(grads, "fc_image.weight", gi.weight);
  accumulate(grads, "fc_image.bias", gi.bias);
  accumulate(grads, "fc_meta.weight", gm.weight);
  accumulate(grads, "fc_meta.bias", gm.bias);
  return std::move(gi.input);
}

std::vector<int> argmax_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw ShapeError("argmax_rows expects (N,C)");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (probs[i * c + k] > probs[i * c + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Prediction predict(const Tensor& x, const Tensor& meta, const ModelParams& params,
                   const ModelConfig& config) {
  if (config.mode == Mode::metadata_only) {
    throw ConfigError("predict serves the imaging network; use clinic_dnn_forward for metadata_only");
  }
  Rng unused(0);
  Tensor probs = softmax(forward_logits(x, meta, params, config, false, unused));
  std::vector<int> mrs = argmax_rows(probs);
  return {std::move(probs), std::move(mrs)};
}

Tensor clinic_dnn_forward(const Tensor& meta, const ModelParams& params, const ModelConfig& config,
                          bool training, Rng& rng) {
  ModelConfig clinic = config;
  clinic.mode = Mode::metadata_only;
  return softmax(forward_logits(Tensor(), meta, params, clinic, training, rng));
}

Tensor forward_logits(const Tensor& images, const Tensor& meta, const ModelParams& params,
                      const ModelConfig& config, bool training, Rng& rng, ForwardCache* cache) {
  if (config.mode == Mode::metadata_only) {
    if (meta.rank() != 2 || meta.dim(1) != params.at("fc1.weight").dim(1)) {
      throw ShapeError("ClinicDNN metadata width must be " +
                       std::to_string(params.at("fc1.weight").dim(1)) + ", got " +
                       shape_to_string(meta.shape()));
    }
    Tensor hidden_pre = linear(meta, params.at("fc1.weight"), params.at("fc1.bias"));
    Tensor hidden = activation(hidden_pre, Activation::relu());
    Dropout dropout(config.dropout_rate);
    Tensor dropped = dropout.forward(hidden, training, rng);
    Tensor logits = linear(dropped, params.at("fc2.weight"), params.at("fc2.bias"));
    if (cache) {
      cache->clinic.meta = meta;
      cache->clinic.hidden_pre = std::move(hidden_pre);
      cache->clinic.hidden = std::move(hidden);
      cache->clinic.dropped = std::move(dropped);
      cache->clinic.dropout = std::move(dropout);
      cache->logits = logits;
    }
    return logits;
  }
  Tensor features = ife_forward(images, params, config, cache ? &cache->ife : nullptr);
  Tensor fused = imf_forward(features, meta, params, config, cache ? &cache->imf : nullptr);
  Tensor logits = linear(fused, params.at("head.weight"), params.at("head.bias"));
  if (cache) {
    cache->fused = std::move(fused);
    cache->logits = logits;
  }
  return logits;
}

void backward_logits(const ForwardCache& cache, const Tensor& grad_logits,
                     const ModelParams& params, const ModelConfig& config, ModelParams& grads) {
  if (config.mode == Mode::metadata_only) {
    const auto& c = cache.clinic;
    LinearGrads g2 = linear_backward(c.dropped, params.at("fc2.weight"), grad_logits);
    accumulate(grads, "fc2.weight", g2.weight);
    accumulate(grads, "fc2.bias", g2.bias);
    Tensor d_hidden = c.dropout.backward(g2.input);
    Tensor d_pre = activation_backward(c.hidden_pre, c.hidden, Activation::relu(), d_hidden);
    LinearGrads g1 = linear_backward(c.meta, params.at("fc1.weight"), d_pre);
    accumulate(grads, "fc1.weight", g1.weight);
    accumulate(grads, "fc1.bias", g1.bias);
    return;
  }
  LinearGrads gh = linear_backward(cache.fused, params.at("head.weight"), grad_logits);
  accumulate(grads, "head.weight", gh.weight);
  accumulate(grads, "head.bias", gh.bias);
  Tensor d_features = imf_backward(cache.imf, gh.input, params, config, grads);
  ife_backward(cache.ife, d_features, params, config, grads);
}

}  // namespace strokenet
