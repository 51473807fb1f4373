#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurodyn/recording.hpp"
#include "neurodyn/rng.hpp"

namespace neurodyn {

// Piecewise-linear recurrent family. All variants share the diagonal
// self-connection A and bias b0; they differ in the nonlinear interaction:
//   vanilla:         z' = A.z + W2 relu(z) + b0 (+ Wx s)
//   dendritic:       z' = A.z + W2 sum_j slopes[j] relu(z - thresholds[j]) + b0 (+ Wx s)
//   shallow:         z' = A.z + W2 relu(W3 z + b1) + b0 (+ Wx s)
//   clipped_shallow: z' = A.z + W2 [relu(W3 z + b1) - relu(W3 z)] + b0 (+ Wx s)
enum class PlrnnVariant { vanilla, dendritic, shallow, clipped_shallow };

std::string variant_name(PlrnnVariant v);
PlrnnVariant variant_from_name(const std::string& name);

struct PlrnnParams {
  PlrnnVariant variant = PlrnnVariant::clipped_shallow;
  int64_t latent_dim = 0;  // M
  int64_t hidden_dim = 0;  // H (equals M for vanilla/dendritic)
  int64_t obs_dim = 0;     // N

  std::vector<double> A;   // M, diagonal self-connection
  std::vector<double> W2;  // M x H row-major
  std::vector<double> W3;  // H x M row-major (shallow variants only)
  std::vector<double> b0;  // M
  std::vector<double> b1;  // H (shallow variants only)
  std::vector<double> Wx;  // M x N row-major input map; empty means absent

  std::vector<double> slopes;      // J, dendritic only
  std::vector<double> thresholds;  // J, dendritic only

  std::vector<double> B_obs;  // N x M row-major observation matrix

  bool has_input() const { return !Wx.empty(); }
  void validate() const;
};

// Contractive start: A ~ U(0.5, 0.9), W2/W3 Gaussian std 1/sqrt(H), biases
// zero, B_obs = [I_N | 0]. Dendritic bases get slopes 1/J and thresholds
// drawn from U(-1, 1).
PlrnnParams init_plrnn(PlrnnVariant variant, int64_t latent_dim, int64_t hidden_dim,
                       int64_t obs_dim, Rng& rng, int64_t bases = 0);

// One latent update; `input` may be null when the model has no input map.
std::vector<double> step(const PlrnnParams& params, const std::vector<double>& z,
                         const std::vector<double>* input = nullptr);

// Exact state-to-state Jacobian (M x M row-major). Piecewise-linear kinks use
// the strict right-hand branch (derivative of relu is 1[x > 0]).
std::vector<double> jacobian(const PlrnnParams& params, const std::vector<double>& z);

// Linear readout x_hat = B_obs z.
std::vector<double> observe(const PlrnnParams& params, const std::vector<double>& z);

struct Trajectory {
  int64_t steps = 0;  // retained rows
  int64_t dim = 0;
  std::vector<double> states;  // steps x dim row-major

  double* row(int64_t t) { return states.data() + t * dim; }
  const double* row(int64_t t) const { return states.data() + t * dim; }
  std::vector<double> row_vec(int64_t t) const {
    return std::vector<double>(row(t), row(t) + dim);
  }
};

// Iterates `step` T times from z0 and returns the last T - burn_in states.
// inputs, when present, supplies one length-N vector per step (T x N).
Trajectory simulate(const PlrnnParams& params, const std::vector<double>& z0, int64_t T,
                    int64_t burn_in = 0, const std::vector<std::vector<double>>* inputs = nullptr);

// Ridge-regularized replacement of the observed subspace:
//   z_new = z + B^T (B B^T + gamma I)^{-1} (x - B z),  gamma = 1e-2.
// Equivalent to the ridge solution of ||B z - x||^2 + gamma ||z||^2 plus the
// (approximately) unobserved component of z.
std::vector<double> estimate_forcing_state(const PlrnnParams& params,
                                           const std::vector<double>& x,
                                           const std::vector<double>& z_current,
                                           double gamma = 1e-2);

struct GtfConfig {
  PlrnnVariant variant = PlrnnVariant::clipped_shallow;
  double alpha = 0.1;            // forcing mix weight
  int64_t interval = 5;          // forcing applied at steps t % interval == 0
  int64_t seq_len = 50;
  int64_t batch_size = 16;
  int64_t batches_per_epoch = 50;
  int64_t epochs = 250;
  double lr = 1e-3;
  double reg_latent = 1e-4;
  double reg_obs = 1e-6;
  int64_t latent_dim = 16;
  int64_t hidden_dim = 128;
  uint64_t seed = 0;
  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_losses;  // one entry per epoch run
  double wall_time_sec = 0.0;
  uint64_t seed = 0;
};

struct GtfResult {
  PlrnnParams params;
  TrainReport report;
};

// Sparse teacher forcing through backprop over unrolled sequences: random
// contiguous slices of the windows, observation-space squared error averaged
// over batch/steps/channels plus L2 penalties, Adam updates. The state is
// mixed toward the data-derived estimate every `interval` steps; gradients
// flow only through the (1 - alpha) model branch of the mix.
GtfResult gtf_train(const std::vector<Recording>& windows, const GtfConfig& cfg);

}  // namespace neurodyn
