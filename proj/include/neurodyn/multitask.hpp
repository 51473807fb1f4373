#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "neurodyn/autodiff.hpp"
#include "neurodyn/plrnn.hpp"  // TrainReport
#include "neurodyn/rng.hpp"
#include "neurodyn/synth.hpp"  // Trial

namespace neurodyn {

struct AugmentConfig {
  double jitter_sigma = 0.008;
  double scale_sigma = 0.03;
  double mask_frac = 0.05;
  double mask_prob = 0.5;
  double chdrop_p = 0.12;
  double chdrop_prob = 0.3;
  bool light_mode = false;  // jitter + scaling only, never zeroes samples
  void validate() const;
};

struct MtlConfig {
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t n_layers = 2;
  int64_t ffn_dim = 256;
  int64_t n_tokens = 16;  // adaptive average pool target
  std::array<int64_t, 2> stem_filters = {32, 64};
  std::array<int64_t, 2> stem_kernels = {5, 3};
  double dropout = 0.1;
  double lambda_cls = 1.0;
  double lambda_chaos = 0.6;
  double lambda_con = 0.3;
  double tau = 0.5;
  double lr = 1e-3;
  double grad_clip = 1.0;
  int64_t batch = 32;
  int64_t epochs = 50;
  uint64_t seed = 0;
  AugmentConfig augment;
  void validate() const;

  // Small preset used by the desk-scale trainability checks.
  static MtlConfig toy();
};

// Conv stem -> token pooling -> transformer encoder -> mean pooling -> three
// heads (class logits, chaos logit, L2-normalized projection).  The
// positional table is a fixed sinusoidal constant kept with the parameters so
// checkpoints are self-contained.
struct MtlParams {
  int64_t in_channels = 0;
  int64_t d_model = 0;
  int64_t n_heads = 0;
  int64_t n_layers = 0;
  int64_t ffn_dim = 0;
  int64_t n_tokens = 0;

  Tensor stem1_w, stem1_b;  // (f1, C, k1), (f1, 1)
  Tensor stem2_w, stem2_b;  // (f2, f1, k2), (f2, 1)
  Tensor tok_w, tok_b;      // (f2, d_model), (d_model)
  Tensor pos_table;         // (n_tokens, d_model), constant

  struct Layer {
    Tensor wq, wk, wv;        // (d, d), no biases
    Tensor wo, bo;            // (d, d), (d)
    Tensor ffn1_w, ffn1_b;    // (d, ffn), (ffn)
    Tensor ffn2_w, ffn2_b;    // (ffn, d), (d)
    Tensor ln1_scale, ln1_offset;  // (d)
    Tensor ln2_scale, ln2_offset;  // (d)
  };
  std::vector<Layer> layers;

  Tensor cls1_w, cls1_b, cls2_w, cls2_b;          // d->d relu, d->2
  Tensor chaos1_w, chaos1_b, chaos2_w, chaos2_b;  // d->d relu, d->1
  Tensor proj1_w, proj1_b, proj2_w, proj2_b;      // d->d relu, d->d

  // Every tensor including the constant positional table (checkpoint order).
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  // Trainable subset: named() minus the positional table.
  std::vector<std::pair<std::string, Tensor*>> trainable();
};

MtlParams init_mtl(int64_t in_channels, const MtlConfig& cfg, Rng& rng);

// One augmented view of a trial window: jitter, per-channel scaling, then
// unless light_mode a contiguous time mask (all channels) with mask_prob and
// independent channel dropout with chdrop_prob/chdrop_p.
Tensor augment(const Tensor& window, const AugmentConfig& cfg, Rng& rng);
Tensor augment(const Trial& trial, const AugmentConfig& cfg, Rng& rng);

// Normalized temperature-scaled cross entropy over 2N rows ordered as view
// pairs (2i, 2i+1); rows are L2-normalized internally.
Val nt_xent(Val z, double tau);

// Tape leaves over the trainable parameters, in trainable() order.
struct MtlLeaves {
  std::vector<Val> vals;
  Val pos;  // constant positional table leaf
};

MtlLeaves mtl_leaves(Tape& tape, const MtlParams& params);

struct MtlGraphOut {
  Val pooled;       // (B, d_model)
  Val logits_mi;    // (B, 2)
  Val logit_chaos;  // (B, 1)
  Val proj;         // (B, d_model), rows L2-normalized
};

// Builds the forward graph; dropout masks are drawn from dropout_rng when it
// is non-null and rate > 0 (training mode), otherwise the graph is
// deterministic in x.  with_heads/with_proj prune unused heads.
MtlGraphOut mtl_graph(const MtlParams& params, const MtlLeaves& leaves, Val x,
                      double dropout_rate = 0.0, Rng* dropout_rng = nullptr,
                      bool with_heads = true, bool with_proj = true);

struct MtlOutputs {
  Tensor logits_mi;    // (B, 2)
  Tensor logit_chaos;  // (B, 1)
  Tensor proj;         // (B, d_model)
};

// Eager evaluation-mode forward for a (B, C, T) or (C, T) batch.
MtlOutputs mtl_forward(const MtlParams& params, const Tensor& batch);

// Evaluation-mode pooled embeddings, (B, d_model).
Tensor mtl_embed(const MtlParams& params, const Tensor& batch);

// Mean softmax cross entropy against integer class labels (stable log-sum-exp).
Val cross_entropy(Val logits, const std::vector<int>& labels);

// Mean binary cross entropy on raw logits (stable composition).
Val binary_cross_entropy(Val logits, const std::vector<int>& labels);

struct LossParts {
  double cls = 0.0;
  double chaos = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// lambda_cls * CE + lambda_chaos * BCE + lambda_con * nt_xent(proj_pairs).
// proj_pairs (2N x D, view-pair order) may be absent when lambda_con == 0.
Val total_loss(Val logits_mi, const std::vector<int>& labels_mi, Val logit_chaos,
               const std::vector<int>& labels_chaos, std::optional<Val> proj_pairs,
               const MtlConfig& cfg, LossParts* parts = nullptr);

struct MtlResult {
  MtlParams params;
  TrainReport report;
};

// Joint training: supervised heads see the raw windows; when lambda_con > 0
// each window also yields two augmented views whose projections feed nt_xent.
// Gradients are global-norm clipped then applied with adamw. Separate seeded
// streams (init, batch order, augmentation, dropout) keep a lambda_con = 0 run
// bit-identical to one with augmentation disabled.
MtlResult mtl_train(const std::vector<Trial>& corpus, const MtlConfig& cfg);

struct EvalReport {
  double acc_mi = 0.0;
  std::optional<double> f1_mi;  // absent when the corpus has a single MI class
  double acc_chaos = 0.0;
  std::optional<double> f1_chaos;
  int64_t n_trials = 0;
};

// Argmax / zero-threshold decisions; F1 positive classes are imagery and
// chaotic.
EvalReport evaluate(const MtlParams& params, const std::vector<Trial>& corpus);

// Trains a zero-initialized linear classifier on a deterministic stratified
// half split of the embeddings (N x D) and returns holdout accuracy.
double linear_probe(const Tensor& embeddings, const std::vector<int>& labels, double lr,
                    int64_t epochs);

}  // namespace neurodyn
