#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "neurodyn/plrnn.hpp"

namespace neurodyn {

// Discrete-time autonomous system given by its update map and the exact
// Jacobian of that map (dim x dim row-major), both evaluated at a state.
struct DynamicalSystem {
  int64_t dim = 0;
  std::function<std::vector<double>(const std::vector<double>&)> step;
  std::function<std::vector<double>(const std::vector<double>&)> jacobian;
};

DynamicalSystem linear_system(std::vector<double> diag);
DynamicalSystem rotation_system(double theta);
DynamicalSystem logistic_system(double r = 4.0);
DynamicalSystem henon_system(double a = 1.4, double b = 0.3);
DynamicalSystem plrnn_system(PlrnnParams params);

struct LyapunovSpectrum {
  std::vector<double> exponents;  // sorted descending, nats per step
  int64_t steps_used = 0;         // T - burn_in
  int64_t burn_in = 0;
  int64_t qr_interval = 1;
};

enum class Regime { chaotic, periodic, quasiperiodic, no_attractor };

std::string regime_name(Regime r);

struct RegimeLabel {
  Regime regime = Regime::no_attractor;
  bool chaos_binary = false;  // true exactly when regime == chaotic
  double lambda_max = 0.0;
  double lambda_sum = 0.0;
  double epsilon_used = 0.0;
};

// Tangent-space evolution with periodic QR re-orthogonalization: the frame
// starts as the identity, the Jacobian is applied at each pre-step state, and
// log diag(R) is accumulated every qr_interval steps (with a closing
// factorization for a partial block). The first burn_in steps evolve only the
// state. Exponents are the accumulated sums over (T - burn_in).
LyapunovSpectrum spectrum(const DynamicalSystem& sys, const std::vector<double>& z0,
                          int64_t T, int64_t burn_in, int64_t qr_interval = 1);

// Attractor dimension from the exponent ladder: with j the largest index
// whose prefix sum is >= 0, D = j + prefix_j / |lambda_{j+1}|; 0 when every
// prefix is negative, M when even the full sum is non-negative.
double kaplan_yorke(const LyapunovSpectrum& spec);

// Regime rule: contracting systems (sum < 0) split by the top exponent into
// chaotic (> eps), quasiperiodic (within eps), periodic (< -eps); a
// non-negative sum means no attracting set.
RegimeLabel classify(const LyapunovSpectrum& spec, double epsilon = 0.01);

}  // namespace neurodyn
