#include "neurodyn/lyapunov.hpp"

#include <algorithm>
#include <cmath>

#include "neurodyn/errors.hpp"
#include "neurodyn/linalg.hpp"

namespace neurodyn {

DynamicalSystem linear_system(std::vector<double> diag) {
  const int64_t n = static_cast<int64_t>(diag.size());
  DynamicalSystem sys;
  sys.dim = n;
  sys.step = [diag](const std::vector<double>& z) {
    std::vector<double> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) out[i] = diag[i] * z[i];
    return out;
  };
  sys.jacobian = [diag, n](const std::vector<double>&) {
    std::vector<double> j(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) j[static_cast<size_t>(i * n + i)] = diag[static_cast<size_t>(i)];
    return j;
  };
  return sys;
}

DynamicalSystem rotation_system(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  DynamicalSystem sys;
  sys.dim = 2;
  sys.step = [c, s](const std::vector<double>& z) {
    return std::vector<double>{c * z[0] - s * z[1], s * z[0] + c * z[1]};
  };
  sys.jacobian = [c, s](const std::vector<double>&) {
    return std::vector<double>{c, -s, s, c};
  };
  return sys;
}

DynamicalSystem logistic_system(double r) {
  if (!(r > 0.0) || r > 4.0) throw ParameterError("logistic growth rate must lie in (0, 4]");
  DynamicalSystem sys;
  sys.dim = 1;
  sys.step = [r](const std::vector<double>& z) {
    return std::vector<double>{r * z[0] * (1.0 - z[0])};
  };
  sys.jacobian = [r](const std::vector<double>& z) {
    return std::vector<double>{r - 2.0 * r * z[0]};
  };
  return sys;
}

DynamicalSystem henon_system(double a, double b) {
  DynamicalSystem sys;
  sys.dim = 2;
  sys.step = [a, b](const std::vector<double>& z) {
    return std::vector<double>{1.0 - a * z[0] * z[0] + z[1], b * z[0]};
  };
  sys.jacobian = [a, b](const std::vector<double>& z) {
    return std::vector<double>{-2.0 * a * z[0], 1.0, b, 0.0};
  };
  return sys;
}

DynamicalSystem plrnn_system(PlrnnParams params) {
  params.validate();
  DynamicalSystem sys;
  sys.dim = params.latent_dim;
  sys.step = [params](const std::vector<double>& z) { return step(params, z); };
  sys.jacobian = [params](const std::vector<double>& z) { return jacobian(params, z); };
  return sys;
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::chaotic: return "chaotic";
    case Regime::periodic: return "periodic";
    case Regime::quasiperiodic: return "quasiperiodic";
    case Regime::no_attractor: return "no_attractor";
  }
  throw ContractError("unknown regime");
}

LyapunovSpectrum spectrum(const DynamicalSystem& sys, const std::vector<double>& z0,
                          int64_t T, int64_t burn_in, int64_t qr_interval) {
  const int n = static_cast<int>(sys.dim);
  if (n < 1) throw ParameterError("system dimension must be positive");
  if (static_cast<int64_t>(z0.size()) != sys.dim)
    throw ParameterError("initial state dimension mismatch");
  if (burn_in < 0 || T <= burn_in) throw ParameterError("need T > burn_in >= 0");
  if (qr_interval < 1) throw ParameterError("qr_interval must be at least 1");

  std::vector<double> z = z0;
  for (int64_t t = 0; t < burn_in; ++t) {
    z = sys.step(z);
    for (double v : z)
      if (!std::isfinite(v)) throw DivergenceError("state became non-finite", t);
  }

  // Tangent frame, identity start; Y accumulates Jacobian products between
  // re-orthogonalizations.
  std::vector<double> y(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) y[static_cast<size_t>(i * n + i)] = 1.0;
  std::vector<double> sums(static_cast<size_t>(n), 0.0);
  std::vector<double> q, r, jy(static_cast<size_t>(n) * n);

  const auto reorthogonalize = [&]() {
    qr_decompose(y, n, q, r);
    for (int i = 0; i < n; ++i) {
      const double rii = r[static_cast<size_t>(i * n + i)];
      if (rii == 0.0) throw DegenerateError("tangent frame lost rank during re-orthogonalization");
      sums[static_cast<size_t>(i)] += std::log(rii);
    }
    y = q;
  };

  int64_t pending = 0;
  for (int64_t t = burn_in; t < T; ++t) {
    const std::vector<double> jac = sys.jacobian(z);
    for (double v : jac)
      if (!std::isfinite(v)) throw DivergenceError("Jacobian became non-finite", t);
    // y <- J y
    for (int i = 0; i < n; ++i) {
      const double* jrow = jac.data() + static_cast<size_t>(i) * n;
      double* out = jy.data() + static_cast<size_t>(i) * n;
      for (int k = 0; k < n; ++k) out[k] = 0.0;
      for (int k = 0; k < n; ++k) {
        const double jik = jrow[k];
        if (jik == 0.0) continue;
        const double* yrow = y.data() + static_cast<size_t>(k) * n;
        for (int c = 0; c < n; ++c) out[c] += jik * yrow[c];
      }
    }
    y.swap(jy);
    z = sys.step(z);
    for (double v : z)
      if (!std::isfinite(v)) throw DivergenceError("state became non-finite", t);
    if (++pending == qr_interval) {
      reorthogonalize();
      pending = 0;
    }
  }
  if (pending > 0) reorthogonalize();

  LyapunovSpectrum spec;
  spec.steps_used = T - burn_in;
  spec.burn_in = burn_in;
  spec.qr_interval = qr_interval;
  spec.exponents.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    spec.exponents[static_cast<size_t>(i)] =
        sums[static_cast<size_t>(i)] / static_cast<double>(spec.steps_used);
  std::sort(spec.exponents.begin(), spec.exponents.end(), std::greater<double>());
  return spec;
}

double kaplan_yorke(const LyapunovSpectrum& spec) {
  const int64_t m = static_cast<int64_t>(spec.exponents.size());
  if (m == 0) throw ParameterError("empty spectrum");
  if (!std::is_sorted(spec.exponents.begin(), spec.exponents.end(), std::greater<double>()))
    throw ContractError("spectrum must be sorted descending");

  int64_t j = 0;
  double prefix = 0.0, best_prefix = 0.0, acc = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    acc += spec.exponents[static_cast<size_t>(i)];
    if (acc >= 0.0) {
      j = i + 1;
      best_prefix = acc;
    }
  }
  prefix = best_prefix;
  if (j == 0) return 0.0;
  if (j == m) return static_cast<double>(m);
  const double next = spec.exponents[static_cast<size_t>(j)];
  if (next == 0.0) throw DegenerateError("zero follow-on exponent with non-negative prefix sum");
  return static_cast<double>(j) + prefix / std::abs(next);
}

RegimeLabel classify(const LyapunovSpectrum& spec, double epsilon) {
  if (spec.exponents.empty()) throw ParameterError("empty spectrum");
  RegimeLabel label;
  label.lambda_max = spec.exponents.front();
  label.lambda_sum = 0.0;
  for (double e : spec.exponents) label.lambda_sum += e;
  label.epsilon_used = epsilon;

  if (label.lambda_sum < 0.0) {
    if (label.lambda_max > epsilon) label.regime = Regime::chaotic;
    else if (label.lambda_max < -epsilon) label.regime = Regime::periodic;
    else label.regime = Regime::quasiperiodic;
  } else {
    label.regime = Regime::no_attractor;
  }
  label.chaos_binary = label.regime == Regime::chaotic;
  return label;
}

}  // namespace neurodyn
