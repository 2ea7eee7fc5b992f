#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>

#include "mmtl/tensor.hpp"

namespace mmtl {

enum class Mode { train, eval };
enum class Activation { identity, relu, sigmoid, swish };

Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

// Gradient carrier for one layer: gradient w.r.t. the layer input plus one
// tensor per named parameter.
struct LayerGrads {
  Tensor input_grad;
  std::map<std::string, Tensor> param_grads;
};

struct BatchNormState {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.1f;
  float epsilon = 1e-5f;

  static BatchNormState identity(int channels);
  int channels() const { return gamma.extent(0); }
};

// Cache of what batch_norm's backward pass needs.
struct BatchNormCache {
  Tensor xhat;              // normalized input, same shape as x
  std::vector<float> mean;  // per channel
  std::vector<float> inv_std;
  Mode mode = Mode::train;
};

int conv_out_length(int in_len, int kernel, int stride, int padding);
inline int same_padding(int kernel) { return kernel / 2; }

// x: [C,T], kernels: [C,K]. One filter per input channel, zero padding.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernels, int stride, int padding);
LayerGrads conv1d_depthwise_backward(const Tensor& x, const Tensor& kernels, int stride,
                                     int padding, const Tensor& upstream);

// x: [C_in,T], weights: [C_out,C_in], optional bias: [C_out].
Tensor conv1d_pointwise(const Tensor& x, const Tensor& weights, const Tensor* bias = nullptr);
LayerGrads conv1d_pointwise_backward(const Tensor& x, const Tensor& weights, bool has_bias,
                                     const Tensor& upstream);

// x: [C_out,C_in,K] standard cross-channel convolution (plain-backbone ablation).
Tensor conv1d_standard(const Tensor& x, const Tensor& weights, int stride, int padding);
LayerGrads conv1d_standard_backward(const Tensor& x, const Tensor& weights, int stride,
                                    int padding, const Tensor& upstream);

// x: [B,C,T]. Train mode normalizes over (B,T) per channel and updates the
// running statistics in `state`; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode,
                  BatchNormCache* cache = nullptr);
LayerGrads batch_norm_backward(const Tensor& upstream, const BatchNormState& state,
                               const BatchNormCache& cache);

Tensor activation(const Tensor& x, Activation kind);
// Input gradient given the activation's forward input.
Tensor activation_backward(const Tensor& forward_input, Activation kind, const Tensor& upstream);

float sigmoid_scalar(float v);
float swish_scalar(float v);
float activation_scalar(float v, Activation kind);
float activation_deriv_scalar(float v, Activation kind);

// x: [C,T] -> [C], mean over time (64-bit accumulation).
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(int time_len, const Tensor& upstream);

// x: [D_in], W: [D_out,D_in], b: [D_out] -> Wx + b.
Tensor fully_connected(const Tensor& x, const Tensor& W, const Tensor& b);
LayerGrads fully_connected_backward(const Tensor& x, const Tensor& W, const Tensor& upstream);

// Stable softmax over a rank-1 logits vector.
Tensor softmax(const Tensor& logits);
// upstream is dL/dprobs; returns dL/dlogits.
Tensor softmax_backward(const Tensor& probs, const Tensor& upstream);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity. If `mask_out` is
// non-null it receives the per-element multiplier actually applied.
Tensor dropout(const Tensor& x, float rate, Mode mode, std::mt19937& rng,
               Tensor* mask_out = nullptr);

}  // namespace mmtl
