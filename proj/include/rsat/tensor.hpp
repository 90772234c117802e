// Dense row-major tensor of doubles. Shapes are explicit and checked by the
// ops that consume them; no broadcasting.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsat {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {}

  static Tensor zeros(std::vector<int> s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor vec(std::vector<double> data) {
    int n = static_cast<int>(data.size());
    return Tensor({n}, std::move(data));
  }

  int size() const { return static_cast<int>(v.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int i) { return v[static_cast<std::size_t>(i)]; }
  double at(int i) const { return v[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace rsat
