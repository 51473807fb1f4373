#pragma once

#include <vector>

#include "neurodyn/tensor.hpp"

namespace neurodyn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamWState {
  Tensor m;
  Tensor v;
  int64_t t = 0;
};

AdamWState make_adamw_state(const Tensor& param);

// Decoupled weight decay: the parameter is scaled by (1 - lr*wd) before the
// bias-corrected moment update.
void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state, const AdamWConfig& cfg);

// Same update on a flat buffer, for training loops that bypass Tensor.
struct AdamWStateVec {
  std::vector<double> m;
  std::vector<double> v;
  int64_t t = 0;
};

AdamWStateVec make_adamw_state(const std::vector<double>& param);

void adamw_step(std::vector<double>& param, const std::vector<double>& grad,
                AdamWStateVec& state, const AdamWConfig& cfg);

// Global-norm gradient clip applied across a parameter group; returns the
// pre-clip norm.
double clip_global_norm(std::vector<Tensor*> grads, double max_norm);

}  // namespace neurodyn
