#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ofalab/errors.hpp"

namespace ofalab {

// Dense row-major float tensor. Activations are N,C,H,W; conv kernels are
// Cout,Cin/groups,Kh,Kw.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
  Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ConfigError("Tensor: non-positive dimension " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  float at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  // Debug check: all values finite. Throws NumericError naming the context.
  void check_finite(const char* what) const {
    for (float v : data) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value in ") + what + " shape " + shape_str());
      }
    }
  }
};

inline void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
  if (t.shape != shape) {
    Tensor want;
    want.shape = shape;
    throw ConfigError(std::string(what) + ": expected shape " + want.shape_str() + ", got " +
                      t.shape_str());
  }
}

}  // namespace ofalab
