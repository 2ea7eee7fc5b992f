#include "mmtl/kernels.hpp"

#include <cmath>
#include <cstring>

namespace mmtl {

void check_finite(const Tensor& t, const char* where) {
  for (float v : t.data) {
    if (!std::isfinite(v)) throw NumericError(std::string(where) + ": non-finite value");
  }
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "swish") return Activation::swish;
  throw std::invalid_argument("unknown activation: " + s);
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::swish: return "swish";
  }
  return "?";
}

BatchNormState BatchNormState::identity(int channels) {
  BatchNormState st;
  st.gamma = Tensor::full({channels}, 1.0f);
  st.beta = Tensor::zeros({channels});
  st.running_mean = Tensor::zeros({channels});
  st.running_var = Tensor::full({channels}, 1.0f);
  return st;
}

int conv_out_length(int in_len, int kernel, int stride, int padding) {
  if (stride < 1) throw ShapeError("conv: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv: negative padding");
  if (kernel > in_len + 2 * padding) throw ShapeError("conv: kernel exceeds padded length");
  return (in_len + 2 * padding - kernel) / stride + 1;
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernels, int stride, int padding) {
  if (x.rank() != 2 || kernels.rank() != 2) throw ShapeError("depthwise: rank-2 inputs required");
  const int C = x.extent(0), T = x.extent(1), K = kernels.extent(1);
  if (kernels.extent(0) != C)
    throw ShapeError("depthwise: kernel channels " + std::to_string(kernels.extent(0)) +
                     " != input channels " + std::to_string(C));
  const int To = conv_out_length(T, K, stride, padding);
  Tensor out({C, To});
  for (int c = 0; c < C; ++c) {
    const float* xi = x.row(c);
    const float* kc = kernels.row(c);
    float* oc = out.row(c);
    for (int to = 0; to < To; ++to) {
      const int start = to * stride - padding;
      float acc = 0.0f;
      for (int k = 0; k < K; ++k) {
        const int t = start + k;
        if (t >= 0 && t < T) acc += kc[k] * xi[t];
      }
      oc[to] = acc;
    }
  }
  check_finite(out, "conv1d_depthwise");
  return out;
}

LayerGrads conv1d_depthwise_backward(const Tensor& x, const Tensor& kernels, int stride,
                                     int padding, const Tensor& upstream) {
  const int C = x.extent(0), T = x.extent(1), K = kernels.extent(1);
  const int To = conv_out_length(T, K, stride, padding);
  if (upstream.shape != std::vector<int>{C, To})
    throw ShapeError("depthwise backward: upstream shape mismatch");
  LayerGrads g;
  g.input_grad = Tensor::zeros({C, T});
  Tensor dk = Tensor::zeros({C, K});
  for (int c = 0; c < C; ++c) {
    const float* xi = x.row(c);
    const float* kc = kernels.row(c);
    const float* up = upstream.row(c);
    float* dxi = g.input_grad.row(c);
    float* dkc = dk.row(c);
    for (int to = 0; to < To; ++to) {
      const int start = to * stride - padding;
      const float u = up[to];
      for (int k = 0; k < K; ++k) {
        const int t = start + k;
        if (t >= 0 && t < T) {
          dkc[k] += u * xi[t];
          dxi[t] += u * kc[k];
        }
      }
    }
  }
  g.param_grads["kernels"] = std::move(dk);
  return g;
}

Tensor conv1d_pointwise(const Tensor& x, const Tensor& weights, const Tensor* bias) {
  if (x.rank() != 2 || weights.rank() != 2) throw ShapeError("pointwise: rank-2 inputs required");
  const int Cin = x.extent(0), T = x.extent(1), Cout = weights.extent(0);
  if (weights.extent(1) != Cin)
    throw ShapeError("pointwise: weight columns " + std::to_string(weights.extent(1)) +
                     " != input channels " + std::to_string(Cin));
  if (bias && bias->extent(0) != Cout) throw ShapeError("pointwise: bias length mismatch");
  Tensor out({Cout, T});
  for (int co = 0; co < Cout; ++co) {
    float* oc = out.row(co);
    if (bias) {
      const float b = (*bias)(co);
      for (int t = 0; t < T; ++t) oc[t] = b;
    }
    const float* wr = weights.row(co);
    for (int ci = 0; ci < Cin; ++ci) {
      const float w = wr[ci];
      if (w == 0.0f) continue;
      const float* xi = x.row(ci);
      for (int t = 0; t < T; ++t) oc[t] += w * xi[t];
    }
  }
  check_finite(out, "conv1d_pointwise");
  return out;
}

LayerGrads conv1d_pointwise_backward(const Tensor& x, const Tensor& weights, bool has_bias,
                                     const Tensor& upstream) {
  const int Cin = x.extent(0), T = x.extent(1), Cout = weights.extent(0);
  if (upstream.shape != std::vector<int>{Cout, T})
    throw ShapeError("pointwise backward: upstream shape mismatch");
  LayerGrads g;
  g.input_grad = Tensor::zeros({Cin, T});
  Tensor dw = Tensor::zeros({Cout, Cin});
  for (int co = 0; co < Cout; ++co) {
    const float* up = upstream.row(co);
    const float* wr = weights.row(co);
    float* dwr = dw.row(co);
    for (int ci = 0; ci < Cin; ++ci) {
      const float* xi = x.row(ci);
      float* dxi = g.input_grad.row(ci);
      const float w = wr[ci];
      double acc = 0.0;
      for (int t = 0; t < T; ++t) {
        acc += static_cast<double>(up[t]) * xi[t];
        dxi[t] += up[t] * w;
      }
      dwr[ci] = static_cast<float>(acc);
    }
  }
  g.param_grads["weights"] = std::move(dw);
  if (has_bias) {
    Tensor db = Tensor::zeros({Cout});
    for (int co = 0; co < Cout; ++co) {
      double acc = 0.0;
      const float* up = upstream.row(co);
      for (int t = 0; t < T; ++t) acc += up[t];
      db(co) = static_cast<float>(acc);
    }
    g.param_grads["bias"] = std::move(db);
  }
  return g;
}

Tensor conv1d_standard(const Tensor& x, const Tensor& weights, int stride, int padding) {
  if (x.rank() != 2 || weights.rank() != 3) throw ShapeError("conv1d: bad ranks");
  const int Cin = x.extent(0), T = x.extent(1);
  const int Cout = weights.extent(0), K = weights.extent(2);
  if (weights.extent(1) != Cin) throw ShapeError("conv1d: weight/input channel mismatch");
  const int To = conv_out_length(T, K, stride, padding);
  Tensor out({Cout, To});
  for (int co = 0; co < Cout; ++co) {
    float* oc = out.row(co);
    for (int ci = 0; ci < Cin; ++ci) {
      const float* wr = &weights.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
      const float* xi = x.row(ci);
      for (int to = 0; to < To; ++to) {
        const int start = to * stride - padding;
        float acc = 0.0f;
        for (int k = 0; k < K; ++k) {
          const int t = start + k;
          if (t >= 0 && t < T) acc += wr[k] * xi[t];
        }
        oc[to] += acc;
      }
    }
  }
  check_finite(out, "conv1d_standard");
  return out;
}

LayerGrads conv1d_standard_backward(const Tensor& x, const Tensor& weights, int stride,
                                    int padding, const Tensor& upstream) {
  const int Cin = x.extent(0), T = x.extent(1);
  const int Cout = weights.extent(0), K = weights.extent(2);
  const int To = conv_out_length(T, K, stride, padding);
  if (upstream.shape != std::vector<int>{Cout, To})
    throw ShapeError("conv1d backward: upstream shape mismatch");
  LayerGrads g;
  g.input_grad = Tensor::zeros({Cin, T});
  Tensor dw = Tensor::zeros({Cout, Cin, K});
  for (int co = 0; co < Cout; ++co) {
    const float* up = upstream.row(co);
    for (int ci = 0; ci < Cin; ++ci) {
      const float* wr = &weights.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
      float* dwr = &dw.data[(static_cast<std::size_t>(co) * Cin + ci) * K];
      const float* xi = x.row(ci);
      float* dxi = g.input_grad.row(ci);
      for (int to = 0; to < To; ++to) {
        const int start = to * stride - padding;
        const float u = up[to];
        for (int k = 0; k < K; ++k) {
          const int t = start + k;
          if (t >= 0 && t < T) {
            dwr[k] += u * xi[t];
            dxi[t] += u * wr[k];
          }
        }
      }
    }
  }
  g.param_grads["weights"] = std::move(dw);
  return g;
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode, BatchNormCache* cache) {
  if (x.rank() != 3) throw ShapeError("batch_norm: expected [B,C,T]");
  const int B = x.extent(0), C = x.extent(1), T = x.extent(2);
  if (state.channels() != C) throw ShapeError("batch_norm: channel count mismatch");
  if (state.epsilon <= 0.0f) throw std::invalid_argument("batch_norm: epsilon must be > 0");

  Tensor out(x.shape);
  std::vector<float> mean(C), inv_std(C);
  const std::size_t n = static_cast<std::size_t>(B) * T;

  if (mode == Mode::train) {
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
          const double v = x(b, c, t);
          sum += v;
          sq += v * v;
        }
      const double m = sum / static_cast<double>(n);
      double var = sq / static_cast<double>(n) - m * m;
      if (var < 0.0) var = 0.0;  // rounding guard
      mean[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + state.epsilon));
      state.running_mean(c) = (1.0f - state.momentum) * state.running_mean(c) +
                              state.momentum * static_cast<float>(m);
      state.running_var(c) = (1.0f - state.momentum) * state.running_var(c) +
                             state.momentum * static_cast<float>(var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean(c);
      inv_std[c] = 1.0f / std::sqrt(state.running_var(c) + state.epsilon);
    }
  }

  Tensor xhat;
  if (cache) xhat = Tensor(x.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float m = mean[c], is = inv_std[c];
      const float ga = state.gamma(c), be = state.beta(c);
      for (int t = 0; t < T; ++t) {
        const float h = (x(b, c, t) - m) * is;
        if (cache) xhat(b, c, t) = h;
        out(b, c, t) = ga * h + be;
      }
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  check_finite(out, "batch_norm");
  return out;
}

LayerGrads batch_norm_backward(const Tensor& upstream, const BatchNormState& state,
                               const BatchNormCache& cache) {
  const int B = upstream.extent(0), C = upstream.extent(1), T = upstream.extent(2);
  if (cache.xhat.shape != upstream.shape)
    throw ShapeError("batch_norm backward: cache/upstream shape mismatch");
  LayerGrads g;
  g.input_grad = Tensor(upstream.shape);
  Tensor dgamma = Tensor::zeros({C}), dbeta = Tensor::zeros({C});
  const double n = static_cast<double>(B) * T;

  for (int c = 0; c < C; ++c) {
    double sum_up = 0.0, sum_up_xhat = 0.0;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t) {
        const double u = upstream(b, c, t);
        sum_up += u;
        sum_up_xhat += u * cache.xhat(b, c, t);
      }
    dgamma(c) = static_cast<float>(sum_up_xhat);
    dbeta(c) = static_cast<float>(sum_up);
    const float ga = state.gamma(c), is = cache.inv_std[c];
    if (cache.mode == Mode::train) {
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
          const double u = upstream(b, c, t);
          const double h = cache.xhat(b, c, t);
          g.input_grad(b, c, t) =
              static_cast<float>(ga * is * (u - sum_up / n - h * sum_up_xhat / n));
        }
    } else {
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) g.input_grad(b, c, t) = upstream(b, c, t) * ga * is;
    }
  }
  g.param_grads["gamma"] = std::move(dgamma);
  g.param_grads["beta"] = std::move(dbeta);
  return g;
}

float sigmoid_scalar(float v) { return 1.0f / (1.0f + std::exp(-v)); }
float swish_scalar(float v) { return v * sigmoid_scalar(v); }

float activation_scalar(float v, Activation kind) {
  switch (kind) {
    case Activation::identity: return v;
    case Activation::relu: return v > 0.0f ? v : 0.0f;
    case Activation::sigmoid: return sigmoid_scalar(v);
    case Activation::swish: return swish_scalar(v);
  }
  return v;
}

float activation_deriv_scalar(float v, Activation kind) {
  switch (kind) {
    case Activation::identity: return 1.0f;
    case Activation::relu: return v > 0.0f ? 1.0f : 0.0f;
    case Activation::sigmoid: {
      const float s = sigmoid_scalar(v);
      return s * (1.0f - s);
    }
    case Activation::swish: {
      const float s = sigmoid_scalar(v);
      return s + v * s * (1.0f - s);
    }
  }
  return 1.0f;
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = activation_scalar(x.data[i], kind);
  check_finite(out, "activation");
  return out;
}

Tensor activation_backward(const Tensor& forward_input, Activation kind, const Tensor& upstream) {
  if (!forward_input.same_shape(upstream))
    throw ShapeError("activation backward: shape mismatch");
  Tensor out(upstream.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = upstream.data[i] * activation_deriv_scalar(forward_input.data[i], kind);
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("gap: expected [C,T]");
  const int C = x.extent(0), T = x.extent(1);
  if (T == 0) throw ShapeError("gap: empty time axis");
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    const float* xi = x.row(c);
    for (int t = 0; t < T; ++t) acc += xi[t];
    out(c) = static_cast<float>(acc / T);
  }
  return out;
}

Tensor global_avg_pool_backward(int time_len, const Tensor& upstream) {
  const int C = upstream.extent(0);
  Tensor out({C, time_len});
  for (int c = 0; c < C; ++c) {
    const float g = upstream(c) / static_cast<float>(time_len);
    float* oc = out.row(c);
    for (int t = 0; t < time_len; ++t) oc[t] = g;
  }
  return out;
}

Tensor fully_connected(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1) throw ShapeError("fc: bad ranks");
  const int Din = x.extent(0), Dout = W.extent(0);
  if (W.extent(1) != Din || b.extent(0) != Dout) throw ShapeError("fc: shape mismatch");
  Tensor out({Dout});
  for (int o = 0; o < Dout; ++o) {
    double acc = b(o);
    const float* wr = W.row(o);
    for (int i = 0; i < Din; ++i) acc += static_cast<double>(wr[i]) * x(i);
    out(o) = static_cast<float>(acc);
  }
  check_finite(out, "fully_connected");
  return out;
}

LayerGrads fully_connected_backward(const Tensor& x, const Tensor& W, const Tensor& upstream) {
  const int Din = x.extent(0), Dout = W.extent(0);
  if (upstream.extent(0) != Dout) throw ShapeError("fc backward: upstream mismatch");
  LayerGrads g;
  g.input_grad = Tensor::zeros({Din});
  Tensor dW = Tensor::zeros({Dout, Din});
  Tensor db = Tensor::zeros({Dout});
  for (int o = 0; o < Dout; ++o) {
    const float u = upstream(o);
    db(o) = u;
    const float* wr = W.row(o);
    float* dwr = dW.row(o);
    for (int i = 0; i < Din; ++i) {
      dwr[i] = u * x(i);
      g.input_grad(i) += u * wr[i];
    }
  }
  g.param_grads["W"] = std::move(dW);
  g.param_grads["b"] = std::move(db);
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1 || logits.extent(0) < 1) throw ShapeError("softmax: rank-1 nonempty");
  const int C = logits.extent(0);
  float mx = logits(0);
  for (int i = 1; i < C; ++i) mx = std::max(mx, logits(i));
  Tensor out({C});
  double denom = 0.0;
  for (int i = 0; i < C; ++i) {
    const double e = std::exp(static_cast<double>(logits(i)) - mx);
    out(i) = static_cast<float>(e);
    denom += e;
  }
  for (int i = 0; i < C; ++i) out(i) = static_cast<float>(out(i) / denom);
  return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& upstream) {
  const int C = probs.extent(0);
  if (upstream.extent(0) != C) throw ShapeError("softmax backward: shape mismatch");
  double dot = 0.0;
  for (int i = 0; i < C; ++i) dot += static_cast<double>(upstream(i)) * probs(i);
  Tensor out({C});
  for (int i = 0; i < C; ++i)
    out(i) = static_cast<float>(probs(i) * (upstream(i) - dot));
  return out;
}

Tensor dropout(const Tensor& x, float rate, Mode mode, std::mt19937& rng, Tensor* mask_out) {
  if (rate < 0.0f || rate >= 1.0f) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (mode == Mode::eval || rate == 0.0f) {
    if (mask_out) *mask_out = Tensor::full(x.shape, 1.0f);
    return x;
  }
  const float scale = 1.0f / (1.0f - rate);
  Tensor out(x.shape);
  Tensor mask = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (uniform01(rng) >= rate) {
      mask.data[i] = scale;
      out.data[i] = x.data[i] * scale;
    }
  }
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

}  // namespace mmtl
