#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mmtl/kernels.hpp"
#include "mmtl/tensor.hpp"

namespace mmtl {

// One inverted-residual bottleneck: expand pointwise -> depthwise -> optional
// SE -> project pointwise, residual when stride 1 and channels match.
struct BneckSpec {
  int expand_channels = 16;
  int out_channels = 16;
  int kernel_size = 5;
  int stride = 1;
  bool use_se = false;
  Activation act = Activation::swish;
};

struct ModelConfig {
  int input_channels = 9;
  int input_length = 128;
  int stem_channels = 16;
  std::vector<BneckSpec> blocks;
  int feature_dim = 96;
  int num_classes = 6;
  float dropout_rate = 0.5f;
  int se_reduction = 4;
  float loss_alpha = 1.0f;
  float loss_beta = 1.0f;
  // Ablation switches.
  bool enable_se = true;
  bool enable_swish = true;
  bool enable_mtl = true;
  std::string single_task = "activity";  // active task when enable_mtl == false
  bool plain_backbone = false;           // standard-conv stack instead of bottlenecks
  int plain_channels = 64;

  static ModelConfig default_desk();
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Insertion-ordered named tensor map; order defines checkpoint layout.
class NamedTensors {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  std::size_t element_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelParams = NamedTensors;

// Running statistics live in the parameter set but are not optimized.
bool is_trainable_param(const std::string& name);
// Biases and BN gamma/beta are exempt from weight decay.
bool is_decay_exempt(const std::string& name);

struct Prediction {
  Tensor activity_probs;
  float resistance = 0.0f;
  bool has_resistance = true;
  float resistance_clamped() const { return std::min(1.0f, std::max(0.0f, resistance)); }
};

struct FlopsReport {
  std::uint64_t mul_adds = 0;
  std::uint64_t param_count = 0;
};

ModelParams build_model(const ModelConfig& config, int seed);
FlopsReport flops_estimate(const ModelConfig& config);

// SE gate: sigmoid(W_ex relu(W_sq GAP(x) + b_sq) + b_ex) rescaling each channel.
Tensor se_block(const Tensor& x, const Tensor& w_sq, const Tensor& b_sq, const Tensor& w_ex,
                const Tensor& b_ex);

Tensor extract_features(const Tensor& window, ModelParams& params, const ModelConfig& config,
                        Mode mode);
Prediction predict(const Tensor& window, ModelParams& params, const ModelConfig& config,
                   Mode mode, std::mt19937& dropout_rng);

float cross_entropy(const Tensor& probs, int label);
float mse(const Tensor& preds, const Tensor& targets);

struct MtlLoss {
  float total = 0.0f;
  float activity_part = 0.0f;
  float resistance_part = 0.0f;
};
MtlLoss mtl_loss(const Tensor& activity_probs, int label, float resistance_pred,
                 float resistance_target, float alpha, float beta);

// ---- batched training path ----

struct BatchSample {
  Tensor window;  // [C,T]
  int label = 0;
  float resistance = 0.0f;
};

struct ForwardCache;  // opaque to callers

struct BatchOutput {
  std::vector<Tensor> activity_probs;
  std::vector<float> resistance;
  MtlLoss loss;  // averaged over the batch
};

BatchOutput forward_batch(const std::vector<BatchSample>& batch, ModelParams& params,
                          const ModelConfig& config, Mode mode, std::mt19937& dropout_rng,
                          ForwardCache* cache);
// Gradients of the averaged batch loss w.r.t. every trainable parameter.
NamedTensors backward_batch(const std::vector<BatchSample>& batch, const BatchOutput& out,
                            const ModelParams& params, const ModelConfig& config,
                            const ForwardCache& cache);

ForwardCache* new_forward_cache();
void free_forward_cache(ForwardCache*);

struct ForwardCachePtr {
  ForwardCache* p;
  ForwardCachePtr() : p(new_forward_cache()) {}
  ~ForwardCachePtr() { free_forward_cache(p); }
  ForwardCachePtr(const ForwardCachePtr&) = delete;
  ForwardCachePtr& operator=(const ForwardCachePtr&) = delete;
};

// Chooses the plain-backbone width whose parameter count is closest to the
// reference config's.
int match_plain_channels(const ModelConfig& reference);

}  // namespace mmtl
