#pragma once

#include <string>
#include <utility>
#include <vector>

#include "neurodyn/autodiff.hpp"
#include "neurodyn/plrnn.hpp"  // TrainReport
#include "neurodyn/recording.hpp"
#include "neurodyn/rng.hpp"

namespace neurodyn {

struct StftConfig {
  int64_t window = 64;
  int64_t hop = 16;
};

struct DaeConfig {
  int64_t latent_channels = 32;
  int64_t hidden_channels = 32;
  double noise_sigma = 0.05;
  double alpha = 0.8;  // time-domain loss weight
  double beta = 0.2;   // spectral loss weight
  double smoothl1_delta = 1.0;
  StftConfig stft;
  int64_t spectral_p = 1;
  double lr = 1e-3;
  int64_t batch = 64;
  int64_t epochs = 150;
  uint64_t seed = 0;
  void validate() const;
};

// Conv encoder/decoder with kernel 5 and symmetric padding, so any input
// length is preserved: C -> hidden -> latent -> hidden -> C, ReLU after every
// layer except the final linear reconstruction.
struct DaeParams {
  int64_t in_channels = 0;
  int64_t hidden_channels = 32;
  int64_t latent_channels = 32;
  Tensor enc1_w, enc1_b;
  Tensor enc2_w, enc2_b;
  Tensor dec1_w, dec1_b;
  Tensor dec2_w, dec2_b;

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

DaeParams init_dae(int64_t in_channels, const DaeConfig& cfg, Rng& rng);

// Tape leaves over the parameters, for building training graphs.
struct DaeLeaves {
  Val enc1_w, enc1_b, enc2_w, enc2_b, dec1_w, dec1_b, dec2_w, dec2_b;
};

DaeLeaves dae_leaves(Tape& tape, const DaeParams& params);

// Reconstruction graph; x has shape (C, T) or (B, C, T).
Val dae_graph(const DaeLeaves& leaves, Val x);

// Convenience eager forward.
Tensor dae_forward(const DaeParams& params, const Tensor& x);

// Mean Huber penalty: 0.5 d^2/delta below delta, |d| - delta/2 above.
Val smooth_l1(Val pred, Val target, double delta);

// Mean elementwise p-norm (p = 1 or 2) of the STFT magnitude difference,
// Hann-windowed frames of cfg.window samples every cfg.hop.
Val spectral_loss(Val pred, Val target, const StftConfig& cfg, int64_t p = 1);

struct DaeResult {
  DaeParams params;
  TrainReport report;
};

// Denoising training: corrupt each clean window with iid Gaussian noise,
// reconstruct, and minimize alpha * smooth_l1 + beta * spectral_loss against
// the clean target with Adam. Deterministic under cfg.seed.
DaeResult dae_train(const std::vector<Recording>& clean, const DaeConfig& cfg);

struct ReconMetrics {
  double hellinger = 0.0;
  double rmse = 0.0;
  double wasserstein1 = 0.0;
  double mae = 0.0;
};

// Channel-level reconstruction metrics; hellinger uses 64 equal-width bins
// over the joint value range, wasserstein1 compares sorted samples.
ReconMetrics recon_metrics(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace neurodyn
