#include "neurodyn/plrnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "neurodyn/linalg.hpp"
#include "neurodyn/optim.hpp"

namespace neurodyn {

std::string variant_name(PlrnnVariant v) {
  switch (v) {
    case PlrnnVariant::vanilla: return "vanilla";
    case PlrnnVariant::dendritic: return "dendritic";
    case PlrnnVariant::shallow: return "shallow";
    case PlrnnVariant::clipped_shallow: return "clipped_shallow";
  }
  throw ContractError("unknown variant");
}

PlrnnVariant variant_from_name(const std::string& name) {
  if (name == "vanilla") return PlrnnVariant::vanilla;
  if (name == "dendritic") return PlrnnVariant::dendritic;
  if (name == "shallow") return PlrnnVariant::shallow;
  if (name == "clipped_shallow") return PlrnnVariant::clipped_shallow;
  throw ParameterError("unknown model variant: " + name);
}

void PlrnnParams::validate() const {
  const size_t m = static_cast<size_t>(latent_dim);
  const size_t h = static_cast<size_t>(hidden_dim);
  const size_t n = static_cast<size_t>(obs_dim);
  if (latent_dim < 1) throw ContractError("latent dim must be positive");
  if (A.size() != m || b0.size() != m) throw ContractError("A/b0 must be length M");
  const bool is_shallow =
      variant == PlrnnVariant::shallow || variant == PlrnnVariant::clipped_shallow;
  if (is_shallow) {
    if (hidden_dim < 1) throw ContractError("hidden dim must be positive");
    if (W2.size() != m * h) throw ContractError("W2 must be M x H");
    if (W3.size() != h * m) throw ContractError("W3 must be H x M");
    if (b1.size() != h) throw ContractError("b1 must be length H");
  } else {
    if (hidden_dim != latent_dim)
      throw ContractError("hidden dim must equal latent dim for this variant");
    if (W2.size() != m * m) throw ContractError("W2 must be M x M");
  }
  if (variant == PlrnnVariant::dendritic) {
    if (slopes.empty() || slopes.size() != thresholds.size())
      throw ContractError("dendritic variant needs matching slopes/thresholds, J >= 1");
  }
  if (!Wx.empty() && Wx.size() != m * n) throw ContractError("Wx must be M x N");
  if (obs_dim > 0 && B_obs.size() != n * m) throw ContractError("B_obs must be N x M");
}

PlrnnParams init_plrnn(PlrnnVariant variant, int64_t latent_dim, int64_t hidden_dim,
                       int64_t obs_dim, Rng& rng, int64_t bases) {
  const bool is_shallow =
      variant == PlrnnVariant::shallow || variant == PlrnnVariant::clipped_shallow;
  if (!is_shallow) hidden_dim = latent_dim;

  PlrnnParams p;
  p.variant = variant;
  p.latent_dim = latent_dim;
  p.hidden_dim = hidden_dim;
  p.obs_dim = obs_dim;

  p.A.resize(static_cast<size_t>(latent_dim));
  for (double& a : p.A) a = rng.uniform(0.5, 0.9);
  const double std_w = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  p.W2.resize(static_cast<size_t>(latent_dim * hidden_dim));
  for (double& w : p.W2) w = rng.gaussian(0.0, std_w);
  p.b0.assign(static_cast<size_t>(latent_dim), 0.0);
  if (is_shallow) {
    p.W3.resize(static_cast<size_t>(hidden_dim * latent_dim));
    for (double& w : p.W3) w = rng.gaussian(0.0, std_w);
    p.b1.assign(static_cast<size_t>(hidden_dim), 0.0);
  }
  if (variant == PlrnnVariant::dendritic) {
    if (bases < 1) throw ParameterError("dendritic variant needs at least one basis");
    p.slopes.assign(static_cast<size_t>(bases), 1.0 / static_cast<double>(bases));
    p.thresholds.resize(static_cast<size_t>(bases));
    for (double& t : p.thresholds) t = rng.uniform(-1.0, 1.0);
  }
  if (obs_dim > 0) {
    if (obs_dim > latent_dim)
      throw ParameterError("observation dim must not exceed latent dim");
    p.B_obs.assign(static_cast<size_t>(obs_dim * latent_dim), 0.0);
    for (int64_t i = 0; i < obs_dim; ++i)
      p.B_obs[static_cast<size_t>(i * latent_dim + i)] = 1.0;
  }
  p.validate();
  return p;
}

namespace {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

void check_state_dims(const PlrnnParams& p, const std::vector<double>& z,
                      const std::vector<double>* input) {
  if (static_cast<int64_t>(z.size()) != p.latent_dim)
    throw ContractError("state length does not match latent dim");
  if (input != nullptr) {
    if (p.Wx.empty()) throw ContractError("model has no input map");
    if (static_cast<int64_t>(input->size()) != p.obs_dim)
      throw ContractError("input length does not match input map");
  }
}

// Nonlinear hidden activation phi(z) of length H for each variant.
std::vector<double> hidden_activation(const PlrnnParams& p, const std::vector<double>& z) {
  const int64_t m = p.latent_dim, h = p.hidden_dim;
  std::vector<double> phi(static_cast<size_t>(h), 0.0);
  switch (p.variant) {
    case PlrnnVariant::vanilla:
      for (int64_t i = 0; i < m; ++i) phi[static_cast<size_t>(i)] = relu(z[static_cast<size_t>(i)]);
      break;
    case PlrnnVariant::dendritic:
      for (int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < p.slopes.size(); ++j)
          acc += p.slopes[j] * relu(z[static_cast<size_t>(i)] - p.thresholds[j]);
        phi[static_cast<size_t>(i)] = acc;
      }
      break;
    case PlrnnVariant::shallow:
    case PlrnnVariant::clipped_shallow:
      for (int64_t k = 0; k < h; ++k) {
        double a = p.b1[static_cast<size_t>(k)];
        double a0 = 0.0;
        const double* w3row = p.W3.data() + k * m;
        for (int64_t i = 0; i < m; ++i) a0 += w3row[i] * z[static_cast<size_t>(i)];
        a += a0;
        phi[static_cast<size_t>(k)] = (p.variant == PlrnnVariant::shallow)
                                          ? relu(a)
                                          : relu(a) - relu(a0);
      }
      break;
  }
  return phi;
}

}  // namespace

std::vector<double> step(const PlrnnParams& params, const std::vector<double>& z,
                         const std::vector<double>* input) {
  check_state_dims(params, z, input);
  const int64_t m = params.latent_dim, h = params.hidden_dim;
  const std::vector<double> phi = hidden_activation(params, z);
  std::vector<double> out(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    double acc = params.A[static_cast<size_t>(i)] * z[static_cast<size_t>(i)] +
                 params.b0[static_cast<size_t>(i)];
    const double* w2row = params.W2.data() + i * h;
    for (int64_t k = 0; k < h; ++k) acc += w2row[k] * phi[static_cast<size_t>(k)];
    if (input != nullptr) {
      const double* wxrow = params.Wx.data() + i * params.obs_dim;
      for (int64_t n = 0; n < params.obs_dim; ++n) acc += wxrow[n] * (*input)[static_cast<size_t>(n)];
    }
    out[static_cast<size_t>(i)] = acc;
  }
  return out;
}

std::vector<double> jacobian(const PlrnnParams& params, const std::vector<double>& z) {
  check_state_dims(params, z, nullptr);
  const int64_t m = params.latent_dim, h = params.hidden_dim;
  std::vector<double> jac(static_cast<size_t>(m * m), 0.0);

  switch (params.variant) {
    case PlrnnVariant::vanilla:
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < m; ++j)
          jac[static_cast<size_t>(i * m + j)] =
              params.W2[static_cast<size_t>(i * m + j)] * (z[static_cast<size_t>(j)] > 0.0 ? 1.0 : 0.0);
      break;
    case PlrnnVariant::dendritic:
      for (int64_t j = 0; j < m; ++j) {
        double d = 0.0;
        for (size_t k = 0; k < params.slopes.size(); ++k)
          if (z[static_cast<size_t>(j)] - params.thresholds[k] > 0.0) d += params.slopes[k];
        for (int64_t i = 0; i < m; ++i)
          jac[static_cast<size_t>(i * m + j)] = params.W2[static_cast<size_t>(i * m + j)] * d;
      }
      break;
    case PlrnnVariant::shallow:
    case PlrnnVariant::clipped_shallow: {
      // Effective hidden gate: 1[W3 z + b1 > 0], minus 1[W3 z > 0] when clipped.
      std::vector<double> gate(static_cast<size_t>(h), 0.0);
      for (int64_t k = 0; k < h; ++k) {
        double a0 = 0.0;
        const double* w3row = params.W3.data() + k * m;
        for (int64_t i = 0; i < m; ++i) a0 += w3row[i] * z[static_cast<size_t>(i)];
        double g = (a0 + params.b1[static_cast<size_t>(k)] > 0.0) ? 1.0 : 0.0;
        if (params.variant == PlrnnVariant::clipped_shallow && a0 > 0.0) g -= 1.0;
        gate[static_cast<size_t>(k)] = g;
      }
      for (int64_t i = 0; i < m; ++i) {
        const double* w2row = params.W2.data() + i * h;
        double* jrow = jac.data() + i * m;
        for (int64_t k = 0; k < h; ++k) {
          const double g = w2row[k] * gate[static_cast<size_t>(k)];
          if (g == 0.0) continue;
          const double* w3row = params.W3.data() + k * m;
          for (int64_t j = 0; j < m; ++j) jrow[j] += g * w3row[j];
        }
      }
      break;
    }
  }
  for (int64_t i = 0; i < m; ++i) jac[static_cast<size_t>(i * m + i)] += params.A[static_cast<size_t>(i)];
  return jac;
}

std::vector<double> observe(const PlrnnParams& params, const std::vector<double>& z) {
  if (params.B_obs.empty()) throw ContractError("model has no observation matrix");
  const int64_t m = params.latent_dim, n = params.obs_dim;
  std::vector<double> x(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* row = params.B_obs.data() + i * m;
    double acc = 0.0;
    for (int64_t j = 0; j < m; ++j) acc += row[j] * z[static_cast<size_t>(j)];
    x[static_cast<size_t>(i)] = acc;
  }
  return x;
}

Trajectory simulate(const PlrnnParams& params, const std::vector<double>& z0, int64_t T,
                    int64_t burn_in, const std::vector<std::vector<double>>* inputs) {
  params.validate();
  if (T < 1) throw ParameterError("simulation length must be at least 1");
  if (burn_in < 0 || burn_in >= T) throw ParameterError("burn_in must lie in [0, T)");
  if (inputs != nullptr && static_cast<int64_t>(inputs->size()) < T)
    throw ParameterError("inputs must cover every simulated step");

  Trajectory traj;
  traj.dim = params.latent_dim;
  traj.steps = T - burn_in;
  traj.states.resize(static_cast<size_t>(traj.steps * traj.dim));

  std::vector<double> z = z0;
  for (int64_t t = 0; t < T; ++t) {
    const std::vector<double>* in = inputs ? &(*inputs)[static_cast<size_t>(t)] : nullptr;
    z = step(params, z, in);
    for (double v : z)
      if (!std::isfinite(v)) throw DivergenceError("trajectory became non-finite", t);
    if (t >= burn_in)
      std::copy(z.begin(), z.end(), traj.row(t - burn_in));
  }
  return traj;
}

std::vector<double> estimate_forcing_state(const PlrnnParams& params,
                                           const std::vector<double>& x,
                                           const std::vector<double>& z_current,
                                           double gamma) {
  if (params.B_obs.empty()) throw ContractError("model has no observation matrix");
  const int64_t m = params.latent_dim, n = params.obs_dim;
  if (static_cast<int64_t>(x.size()) != n) throw ContractError("observation length mismatch");
  if (static_cast<int64_t>(z_current.size()) != m) throw ContractError("state length mismatch");

  // Gram matrix B B^T + gamma I, then z + B^T (.)^{-1} (x - B z).
  std::vector<double> gram(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* bi = params.B_obs.data() + i * m;
    for (int64_t j = 0; j <= i; ++j) {
      const double* bj = params.B_obs.data() + j * m;
      double acc = 0.0;
      for (int64_t k = 0; k < m; ++k) acc += bi[k] * bj[k];
      gram[static_cast<size_t>(i * n + j)] = acc;
      gram[static_cast<size_t>(j * n + i)] = acc;
    }
    gram[static_cast<size_t>(i * n + i)] += gamma;
  }
  std::vector<double> resid(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* bi = params.B_obs.data() + i * m;
    double acc = 0.0;
    for (int64_t k = 0; k < m; ++k) acc += bi[k] * z_current[static_cast<size_t>(k)];
    resid[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] - acc;
  }
  const std::vector<double> a = cholesky_solve(gram, static_cast<int>(n), resid);
  std::vector<double> out = z_current;
  for (int64_t i = 0; i < n; ++i) {
    const double* bi = params.B_obs.data() + i * m;
    for (int64_t k = 0; k < m; ++k) out[static_cast<size_t>(k)] += bi[k] * a[static_cast<size_t>(i)];
  }
  return out;
}

void GtfConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
  if (interval < 1) throw ParameterError("interval must be positive");
  if (seq_len < 2) throw ParameterError("sequence length must be at least 2");
  if (batch_size < 1 || batches_per_epoch < 1) throw ParameterError("batch counts must be positive");
  if (epochs < 0) throw ParameterError("epochs must be non-negative");
  if (latent_dim < 1 || hidden_dim < 1) throw ParameterError("model dims must be positive");
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (variant != PlrnnVariant::shallow && variant != PlrnnVariant::clipped_shallow)
    throw ParameterError("sequence training supports the shallow variants only");
}

namespace {

// Batched training workspace; all buffers time-major, rows contiguous.
struct GtfWorkspace {
  int64_t L, B, M, H, N;
  std::vector<double> X;      // L x B x N observations
  std::vector<double> Zin;    // L x B x M state entering each step (post-mix)
  std::vector<double> Zpre;   // L x B x M raw step output (pre-mix), rows 1..L-1
  std::vector<double> A1;     // L x B x H hidden pre-activation per step
  std::vector<double> Phi;    // B x H scratch
  std::vector<double> E;      // B x N scratch residual
  std::vector<double> U;      // B x H scratch backward
  std::vector<double> Gpre;   // B x M
  std::vector<double> Gin;    // B x M
  // Transposed weights, refreshed per batch: axpy-form products keep the
  // destination contiguous so the inner loops vectorize.
  std::vector<double> W3T;    // M x H
  std::vector<double> W2T;    // H x M

  GtfWorkspace(int64_t l, int64_t b, int64_t m, int64_t h, int64_t n)
      : L(l), B(b), M(m), H(h), N(n),
        X(static_cast<size_t>(l * b * n)),
        Zin(static_cast<size_t>(l * b * m)),
        Zpre(static_cast<size_t>(l * b * m)),
        A1(static_cast<size_t>(l * b * h)),
        Phi(static_cast<size_t>(b * h)),
        E(static_cast<size_t>(b * n)),
        U(static_cast<size_t>(b * h)),
        Gpre(static_cast<size_t>(b * m)),
        Gin(static_cast<size_t>(b * m)),
        W3T(static_cast<size_t>(m * h)),
        W2T(static_cast<size_t>(h * m)) {}

  void refresh_transposes(const PlrnnParams& p) {
    for (int64_t h = 0; h < H; ++h)
      for (int64_t m = 0; m < M; ++m) {
        W3T[static_cast<size_t>(m * H + h)] = p.W3[static_cast<size_t>(h * M + m)];
        W2T[static_cast<size_t>(h * M + m)] = p.W2[static_cast<size_t>(m * H + h)];
      }
  }

  double* x(int64_t t) { return X.data() + t * B * N; }
  double* zin(int64_t t) { return Zin.data() + t * B * M; }
  double* zpre(int64_t t) { return Zpre.data() + t * B * M; }
  double* a1(int64_t t) { return A1.data() + t * B * H; }
};

struct GtfGrads {
  std::vector<double> A, W2, W3, b0, b1, B_obs;
  void zero() {
    std::fill(A.begin(), A.end(), 0.0);
    std::fill(W2.begin(), W2.end(), 0.0);
    std::fill(W3.begin(), W3.end(), 0.0);
    std::fill(b0.begin(), b0.end(), 0.0);
    std::fill(b1.begin(), b1.end(), 0.0);
    std::fill(B_obs.begin(), B_obs.end(), 0.0);
  }
};

// Residual E = Zrow * B^T - Xrow and its squared sum.
double obs_residual(const PlrnnParams& p, const double* zrow, const double* xrow,
                    int64_t B, double* e) {
  const int64_t m = p.latent_dim, n = p.obs_dim;
  double sq = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double* z = zrow + b * m;
    const double* x = xrow + b * n;
    double* eb = e + b * n;
    for (int64_t i = 0; i < n; ++i) {
      const double* brow = p.B_obs.data() + i * m;
      double acc = 0.0;
      for (int64_t k = 0; k < m; ++k) acc += brow[k] * z[k];
      const double r = acc - x[i];
      eb[i] = r;
      sq += r * r;
    }
  }
  return sq;
}

// Accumulates gB += coef * E^T Z and writes Gout += coef * E B.
void obs_backward(const PlrnnParams& p, const double* zrow, const double* e, int64_t B,
                  double coef, double* gB, double* gout) {
  const int64_t m = p.latent_dim, n = p.obs_dim;
  for (int64_t b = 0; b < B; ++b) {
    const double* z = zrow + b * m;
    const double* eb = e + b * n;
    double* g = gout + b * m;
    for (int64_t i = 0; i < n; ++i) {
      const double ce = coef * eb[i];
      if (ce == 0.0) continue;
      const double* brow = p.B_obs.data() + i * m;
      double* gbrow = gB + i * m;
      for (int64_t k = 0; k < m; ++k) {
        gbrow[k] += ce * z[k];
        g[k] += ce * brow[k];
      }
    }
  }
}

}  // namespace

GtfResult gtf_train(const std::vector<Recording>& windows, const GtfConfig& cfg) {
  cfg.validate();
  if (windows.empty()) throw ParameterError("no training windows supplied");
  const int64_t N = windows.front().channels();
  for (const Recording& w : windows) {
    w.validate();
    if (w.channels() != N) throw ParameterError("windows disagree on channel count");
    if (w.samples < cfg.seq_len)
      throw ParameterError("window shorter than the training sequence length");
  }

  const auto t_start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  PlrnnParams p = init_plrnn(cfg.variant, cfg.latent_dim, cfg.hidden_dim, N, rng);
  const bool clipped = cfg.variant == PlrnnVariant::clipped_shallow;

  const int64_t L = cfg.seq_len, B = cfg.batch_size, M = cfg.latent_dim, H = cfg.hidden_dim;
  GtfWorkspace ws(L, B, M, H, N);
  GtfGrads g;
  g.A.assign(p.A.size(), 0.0);
  g.W2.assign(p.W2.size(), 0.0);
  g.W3.assign(p.W3.size(), 0.0);
  g.b0.assign(p.b0.size(), 0.0);
  g.b1.assign(p.b1.size(), 0.0);
  g.B_obs.assign(p.B_obs.size(), 0.0);

  AdamWConfig opt;
  opt.lr = cfg.lr;
  AdamWStateVec sA = make_adamw_state(p.A), sW2 = make_adamw_state(p.W2),
                sW3 = make_adamw_state(p.W3), sb0 = make_adamw_state(p.b0),
                sb1 = make_adamw_state(p.b1), sB = make_adamw_state(p.B_obs);

  const double gamma = 1e-2;
  const int64_t t_pred = L - 1;
  const double coef = 2.0 / static_cast<double>(B * t_pred * N);
  const bool forcing_on = cfg.alpha > 0.0;

  TrainReport report;
  report.seed = cfg.seed;

  std::vector<double> zscratch(static_cast<size_t>(M));
  std::vector<double> xscratch(static_cast<size_t>(N));

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int64_t batch = 0; batch < cfg.batches_per_epoch; ++batch) {
      // Gather a batch of random contiguous slices, time-major.
      for (int64_t b = 0; b < B; ++b) {
        const Recording& w = windows[rng.uniform_index(windows.size())];
        const int64_t max_start = w.samples - L;
        const int64_t start =
            max_start > 0 ? static_cast<int64_t>(rng.uniform_index(
                                static_cast<uint64_t>(max_start) + 1))
                          : 0;
        for (int64_t t = 0; t < L; ++t)
          for (int64_t n = 0; n < N; ++n)
            ws.x(t)[b * N + n] = w.at(n, start + t);
      }

      // Initial state from the first observation (treated as a constant).
      for (int64_t b = 0; b < B; ++b) {
        std::fill(zscratch.begin(), zscratch.end(), 0.0);
        std::copy(ws.x(0) + b * N, ws.x(0) + (b + 1) * N, xscratch.begin());
        const std::vector<double> z0 = estimate_forcing_state(p, xscratch, zscratch, gamma);
        std::copy(z0.begin(), z0.end(), ws.zin(0) + b * M);
      }

      // ---- forward ----
      ws.refresh_transposes(p);
      double sq_err = 0.0;
      for (int64_t t = 0; t + 1 < L; ++t) {
        const double* Z = ws.zin(t);
        double* A1 = ws.a1(t);
        double* Zn = ws.zpre(t + 1);
        // A1 = Z W3^T + b1
        for (int64_t b = 0; b < B; ++b) {
          const double* z = Z + b * M;
          double* a1 = A1 + b * H;
          std::copy(p.b1.begin(), p.b1.end(), a1);
          for (int64_t m = 0; m < M; ++m) {
            const double zm = z[m];
            const double* w3t = ws.W3T.data() + m * H;
            for (int64_t h = 0; h < H; ++h) a1[h] += zm * w3t[h];
          }
        }
        // Phi = relu(A1) [- relu(A1 - b1)]
        for (int64_t b = 0; b < B; ++b) {
          const double* a1 = A1 + b * H;
          double* phi = ws.Phi.data() + b * H;
          if (clipped) {
            for (int64_t h = 0; h < H; ++h)
              phi[h] = relu(a1[h]) - relu(a1[h] - p.b1[static_cast<size_t>(h)]);
          } else {
            for (int64_t h = 0; h < H; ++h) phi[h] = relu(a1[h]);
          }
        }
        // Zn = A . Z + Phi W2^T + b0; relu zeros in Phi skip their whole row.
        for (int64_t b = 0; b < B; ++b) {
          const double* z = Z + b * M;
          const double* phi = ws.Phi.data() + b * H;
          double* zn = Zn + b * M;
          for (int64_t m = 0; m < M; ++m)
            zn[m] = p.A[static_cast<size_t>(m)] * z[m] + p.b0[static_cast<size_t>(m)];
          for (int64_t h = 0; h < H; ++h) {
            const double ph = phi[h];
            if (ph == 0.0) continue;
            const double* w2t = ws.W2T.data() + h * M;
            for (int64_t m = 0; m < M; ++m) zn[m] += ph * w2t[m];
          }
        }
        sq_err += obs_residual(p, Zn, ws.x(t + 1), B, ws.E.data());

        // Next input state: forcing mix on schedule, else the raw output.
        double* Znext_in = ws.zin(t + 1);
        const bool forced = forcing_on && ((t + 1) % cfg.interval == 0);
        if (forced && t + 2 < L) {
          for (int64_t b = 0; b < B; ++b) {
            std::copy(Zn + b * M, Zn + (b + 1) * M, zscratch.begin());
            std::copy(ws.x(t + 1) + b * N, ws.x(t + 1) + (b + 1) * N, xscratch.begin());
            const std::vector<double> zf = estimate_forcing_state(p, xscratch, zscratch, gamma);
            double* dst = Znext_in + b * M;
            for (int64_t m = 0; m < M; ++m)
              dst[m] = cfg.alpha * zf[static_cast<size_t>(m)] + (1.0 - cfg.alpha) * zscratch[static_cast<size_t>(m)];
          }
        } else {
          std::copy(Zn, Zn + B * M, Znext_in);
        }
      }

      double reg = 0.0;
      for (double v : p.A) reg += v * v;
      for (double v : p.W2) reg += v * v;
      for (double v : p.W3) reg += v * v;
      for (double v : p.b0) reg += v * v;
      for (double v : p.b1) reg += v * v;
      double reg_obs_term = 0.0;
      for (double v : p.B_obs) reg_obs_term += v * v;
      const double loss = sq_err / static_cast<double>(B * t_pred * N) +
                          cfg.reg_latent * reg + cfg.reg_obs * reg_obs_term;
      if (!std::isfinite(loss))
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      epoch_loss += loss;

      // ---- backward ----
      g.zero();
      // Seed at the final step's observation error.
      std::fill(ws.Gpre.begin(), ws.Gpre.end(), 0.0);
      obs_residual(p, ws.zpre(L - 1), ws.x(L - 1), B, ws.E.data());
      obs_backward(p, ws.zpre(L - 1), ws.E.data(), B, coef, g.B_obs.data(), ws.Gpre.data());

      for (int64_t t = L - 2; t >= 0; --t) {
        const double* Z = ws.zin(t);
        const double* A1 = ws.a1(t);
        const double* G = ws.Gpre.data();

        // Recompute Phi from the stored pre-activations.
        for (int64_t b = 0; b < B; ++b) {
          const double* a1 = A1 + b * H;
          double* phi = ws.Phi.data() + b * H;
          if (clipped) {
            for (int64_t h = 0; h < H; ++h)
              phi[h] = relu(a1[h]) - relu(a1[h] - p.b1[static_cast<size_t>(h)]);
          } else {
            for (int64_t h = 0; h < H; ++h) phi[h] = relu(a1[h]);
          }
        }

        // Parameter grads of the linear mix, plus U = G W2.
        std::fill(ws.U.begin(), ws.U.end(), 0.0);
        for (int64_t b = 0; b < B; ++b) {
          const double* gb = G + b * M;
          const double* z = Z + b * M;
          const double* phi = ws.Phi.data() + b * H;
          double* u = ws.U.data() + b * H;
          for (int64_t m = 0; m < M; ++m) {
            const double gm = gb[m];
            if (gm == 0.0) continue;
            g.A[static_cast<size_t>(m)] += gm * z[m];
            g.b0[static_cast<size_t>(m)] += gm;
            double* gw2row = g.W2.data() + m * H;
            const double* w2row = p.W2.data() + m * H;
            for (int64_t h = 0; h < H; ++h) {
              gw2row[h] += gm * phi[h];
              u[h] += gm * w2row[h];
            }
          }
        }

        // Gate U through the relu masks; gb1 sees only the shifted branch.
        for (int64_t b = 0; b < B; ++b) {
          const double* a1 = A1 + b * H;
          double* u = ws.U.data() + b * H;
          for (int64_t h = 0; h < H; ++h) {
            const bool m1 = a1[h] > 0.0;
            if (m1) g.b1[static_cast<size_t>(h)] += u[h];
            double gate = m1 ? 1.0 : 0.0;
            if (clipped && a1[h] - p.b1[static_cast<size_t>(h)] > 0.0) gate -= 1.0;
            u[h] *= gate;
          }
        }

        // gW3 += U^T Z; Gin = G . A + U W3.
        std::fill(ws.Gin.begin(), ws.Gin.end(), 0.0);
        for (int64_t b = 0; b < B; ++b) {
          const double* u = ws.U.data() + b * H;
          const double* z = Z + b * M;
          const double* gb = G + b * M;
          double* gin = ws.Gin.data() + b * M;
          for (int64_t m = 0; m < M; ++m) gin[m] = gb[m] * p.A[static_cast<size_t>(m)];
          for (int64_t h = 0; h < H; ++h) {
            const double uh = u[h];
            if (uh == 0.0) continue;
            double* gw3row = g.W3.data() + h * M;
            const double* w3row = p.W3.data() + h * M;
            for (int64_t m = 0; m < M; ++m) {
              gw3row[m] += uh * z[m];
              gin[m] += uh * w3row[m];
            }
          }
        }

        if (t == 0) break;  // the initial state is a constant

        // Gradient w.r.t. the raw step output at time t: damp through the mix
        // when forcing replaced it, then add this step's observation error.
        const bool forced = forcing_on && (t % cfg.interval == 0) && (t + 1 < L);
        const double pass = forced ? (1.0 - cfg.alpha) : 1.0;
        for (size_t i = 0; i < ws.Gpre.size(); ++i) ws.Gpre[i] = pass * ws.Gin[i];
        obs_residual(p, ws.zpre(t), ws.x(t), B, ws.E.data());
        obs_backward(p, ws.zpre(t), ws.E.data(), B, coef, g.B_obs.data(), ws.Gpre.data());
      }

      // L2 penalties.
      const double rl2 = 2.0 * cfg.reg_latent;
      for (size_t i = 0; i < p.A.size(); ++i) g.A[i] += rl2 * p.A[i];
      for (size_t i = 0; i < p.W2.size(); ++i) g.W2[i] += rl2 * p.W2[i];
      for (size_t i = 0; i < p.W3.size(); ++i) g.W3[i] += rl2 * p.W3[i];
      for (size_t i = 0; i < p.b0.size(); ++i) g.b0[i] += rl2 * p.b0[i];
      for (size_t i = 0; i < p.b1.size(); ++i) g.b1[i] += rl2 * p.b1[i];
      for (size_t i = 0; i < p.B_obs.size(); ++i) g.B_obs[i] += 2.0 * cfg.reg_obs * p.B_obs[i];

      adamw_step(p.A, g.A, sA, opt);
      adamw_step(p.W2, g.W2, sW2, opt);
      adamw_step(p.W3, g.W3, sW3, opt);
      adamw_step(p.b0, g.b0, sb0, opt);
      adamw_step(p.b1, g.b1, sb1, opt);
      adamw_step(p.B_obs, g.B_obs, sB, opt);
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(cfg.batches_per_epoch));
  }

  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(p), std::move(report)};
}

}  // namespace neurodyn
