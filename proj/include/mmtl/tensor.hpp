#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmtl {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major float32 tensor, rank 1-3.
// Convention: [channels, time] for feature maps, [batch, channels, time] for batches.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0f);
  }
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size()) throw ShapeError("tensor: shape/data size mismatch");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
      if (e < 0) throw ShapeError("tensor: negative extent");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
  float operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
  float& operator()(int c, int t) { return data[static_cast<std::size_t>(c) * shape[1] + t]; }
  float operator()(int c, int t) const { return data[static_cast<std::size_t>(c) * shape[1] + t]; }
  float& operator()(int b, int c, int t) {
    return data[(static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + t];
  }
  float operator()(int b, int c, int t) const {
    return data[(static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + t];
  }

  float* row(int c) { return data.data() + static_cast<std::size_t>(c) * shape[1]; }
  const float* row(int c) const { return data.data() + static_cast<std::size_t>(c) * shape[1]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Uniform in [0,1) from a mt19937 draw; avoids distribution objects so the
// bit stream is identical across standard library implementations.
inline float uniform01(std::mt19937& rng) {
  return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

inline float uniform_symmetric(std::mt19937& rng, float bound) {
  return bound * (2.0f * uniform01(rng) - 1.0f);
}

void check_finite(const Tensor& t, const char* where);

}  // namespace mmtl
