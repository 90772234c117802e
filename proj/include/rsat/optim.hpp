// Adam optimizer with bias-corrected moments, plus the finite-difference
// gradient checker used throughout the test suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rsat/graph.hpp"
#include "rsat/rng.hpp"

namespace rsat {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg) : cfg_(cfg) {
    for (auto& p : params) {
      Slot s;
      s.m = Tensor::zeros(p->value.shape);
      s.v = Tensor::zeros(p->value.shape);
      slots_.push_back(std::move(s));
    }
  }

  long long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Applies one update from the accumulated gradients and clears them.
  void step(ParamStore& params) {
    ++t_;
    if (cfg_.clip_norm > 0.0) clip(params);
    double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Parameter& p = params[pi];
      Slot& s = slots_[pi];
      for (int i = 0; i < p.value.size(); ++i) {
        double g = p.grad.at(i);
        s.m.at(i) = cfg_.beta1 * s.m.at(i) + (1.0 - cfg_.beta1) * g;
        s.v.at(i) = cfg_.beta2 * s.v.at(i) + (1.0 - cfg_.beta2) * g * g;
        double mhat = s.m.at(i) / c1;
        double vhat = s.v.at(i) / c2;
        p.value.at(i) -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p.zero_grad();
    }
  }

 private:
  void clip(ParamStore& params) {
    double sq = 0.0;
    for (auto& p : params)
      for (int i = 0; i < p->grad.size(); ++i) sq += p->grad.at(i) * p->grad.at(i);
    double norm = std::sqrt(sq);
    if (norm <= cfg_.clip_norm) return;
    double f = cfg_.clip_norm / norm;
    for (auto& p : params)
      for (int i = 0; i < p->grad.size(); ++i) p->grad.at(i) *= f;
  }

  struct Slot {
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  long long t_ = 0;
};

// Central finite differences against the analytic gradient.
//
// loss_fn must be deterministic, return the loss, and leave the analytic
// gradient in each Parameter's grad (a build + backward pass). Coordinates
// are subsampled per parameter when the tensor is large. Returns
// max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<double()>& loss_fn,
                         ParamStore& params, double eps = 1e-5,
                         int max_coords_per_param = 16,
                         std::uint64_t seed = 0xC0FFEE) {
  params.zero_grads();
  loss_fn();
  std::vector<Tensor> analytic;
  for (auto& p : params) analytic.push_back(p->grad);

  Rng rng(seed);
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    int n = p.value.size();
    std::vector<int> coords;
    if (n <= max_coords_per_param) {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < max_coords_per_param; ++c)
        coords.push_back(rng.uniform_int(n));
    }
    for (int i : coords) {
      double orig = p.value.at(i);
      p.value.at(i) = orig + eps;
      params.zero_grads();
      double lp = loss_fn();
      p.value.at(i) = orig - eps;
      params.zero_grads();
      double lm = loss_fn();
      p.value.at(i) = orig;
      double numeric = (lp - lm) / (2.0 * eps);
      double a = analytic[pi].at(i);
      double rel = std::fabs(a - numeric) /
                   std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  params.zero_grads();
  return max_rel;
}

}  // namespace rsat
