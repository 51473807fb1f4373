#include "neurodyn/optim.hpp"

#include <cmath>

#include "neurodyn/errors.hpp"

namespace neurodyn {

AdamWState make_adamw_state(const Tensor& param) {
  AdamWState s;
  s.m = Tensor(param.dims());
  s.v = Tensor(param.dims());
  s.t = 0;
  return s;
}

void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state, const AdamWConfig& cfg) {
  if (!param.same_dims(grad) || !param.same_dims(state.m))
    throw DimensionError("adamw_step: param/grad/state dims differ");
  if (!grad.all_finite()) throw TrainingError("adamw_step: non-finite gradient");

  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  double decay = 1.0 - cfg.lr * cfg.weight_decay;

  double* p = param.data();
  const double* g = grad.data();
  double* m = state.m.data();
  double* v = state.v.data();
  int64_t n = param.numel();
  for (int64_t i = 0; i < n; ++i) {
    p[i] *= decay;
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  if (!param.all_finite()) throw TrainingError("adamw_step: parameter became non-finite");
}

AdamWStateVec make_adamw_state(const std::vector<double>& param) {
  AdamWStateVec s;
  s.m.assign(param.size(), 0.0);
  s.v.assign(param.size(), 0.0);
  s.t = 0;
  return s;
}

void adamw_step(std::vector<double>& param, const std::vector<double>& grad,
                AdamWStateVec& state, const AdamWConfig& cfg) {
  if (param.size() != grad.size() || param.size() != state.m.size())
    throw DimensionError("adamw_step: param/grad/state sizes differ");
  for (double g : grad)
    if (!std::isfinite(g)) throw TrainingError("adamw_step: non-finite gradient");

  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  double decay = 1.0 - cfg.lr * cfg.weight_decay;

  for (size_t i = 0; i < param.size(); ++i) {
    param[i] *= decay;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    if (!std::isfinite(param[i])) throw TrainingError("adamw_step: parameter became non-finite");
  }
}

double clip_global_norm(std::vector<Tensor*> grads, double max_norm) {
  double sq = 0.0;
  for (Tensor* g : grads)
    for (double x : g->vec()) sq += x * x;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (Tensor* g : grads)
      for (double& x : g->vec()) x *= scale;
  }
  return norm;
}

}  // namespace neurodyn
