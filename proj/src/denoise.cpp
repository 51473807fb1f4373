#include "neurodyn/denoise.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "neurodyn/optim.hpp"

namespace neurodyn {

void DaeConfig::validate() const {
  if (latent_channels < 1 || hidden_channels < 1)
    throw ParameterError("channel widths must be positive");
  if (noise_sigma < 0.0) throw ParameterError("noise sigma must be non-negative");
  if (!(smoothl1_delta > 0.0)) throw ParameterError("smooth-l1 delta must be positive");
  if (!(alpha > 0.0) || !(beta >= 0.0)) throw ParameterError("loss weights must be positive");
  if (stft.window < 2 || stft.hop < 1) throw ParameterError("invalid analysis window");
  if (spectral_p != 1 && spectral_p != 2) throw ParameterError("spectral norm must be 1 or 2");
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
  if (batch < 1) throw ParameterError("batch size must be positive");
  if (epochs < 0) throw ParameterError("epochs must be non-negative");
}

std::vector<std::pair<std::string, Tensor*>> DaeParams::named() {
  return {{"enc1_w", &enc1_w}, {"enc1_b", &enc1_b}, {"enc2_w", &enc2_w}, {"enc2_b", &enc2_b},
          {"dec1_w", &dec1_w}, {"dec1_b", &dec1_b}, {"dec2_w", &dec2_w}, {"dec2_b", &dec2_b}};
}

std::vector<std::pair<std::string, const Tensor*>> DaeParams::named() const {
  return {{"enc1_w", &enc1_w}, {"enc1_b", &enc1_b}, {"enc2_w", &enc2_w}, {"enc2_b", &enc2_b},
          {"dec1_w", &dec1_w}, {"dec1_b", &dec1_b}, {"dec2_w", &dec2_w}, {"dec2_b", &dec2_b}};
}

namespace {

constexpr int64_t kKernel = 5;
constexpr int kPad = 2;

Tensor conv_init(int64_t co, int64_t ci, int64_t k, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(ci * k));
  return Tensor::randn({co, ci, k}, rng, std);
}

}  // namespace

DaeParams init_dae(int64_t in_channels, const DaeConfig& cfg, Rng& rng) {
  if (in_channels < 1) throw ParameterError("need at least one input channel");
  DaeParams p;
  p.in_channels = in_channels;
  p.hidden_channels = cfg.hidden_channels;
  p.latent_channels = cfg.latent_channels;
  p.enc1_w = conv_init(cfg.hidden_channels, in_channels, kKernel, rng);
  p.enc1_b = Tensor({cfg.hidden_channels, 1});
  p.enc2_w = conv_init(cfg.latent_channels, cfg.hidden_channels, kKernel, rng);
  p.enc2_b = Tensor({cfg.latent_channels, 1});
  p.dec1_w = conv_init(cfg.hidden_channels, cfg.latent_channels, kKernel, rng);
  p.dec1_b = Tensor({cfg.hidden_channels, 1});
  p.dec2_w = conv_init(in_channels, cfg.hidden_channels, kKernel, rng);
  p.dec2_b = Tensor({in_channels, 1});
  return p;
}

DaeLeaves dae_leaves(Tape& tape, const DaeParams& params) {
  DaeLeaves l;
  l.enc1_w = tape.leaf(params.enc1_w);
  l.enc1_b = tape.leaf(params.enc1_b);
  l.enc2_w = tape.leaf(params.enc2_w);
  l.enc2_b = tape.leaf(params.enc2_b);
  l.dec1_w = tape.leaf(params.dec1_w);
  l.dec1_b = tape.leaf(params.dec1_b);
  l.dec2_w = tape.leaf(params.dec2_w);
  l.dec2_b = tape.leaf(params.dec2_b);
  return l;
}

Val dae_graph(const DaeLeaves& l, Val x) {
  Val h = relu(add(conv1d(x, l.enc1_w, kPad), l.enc1_b));
  h = relu(add(conv1d(h, l.enc2_w, kPad), l.enc2_b));
  h = relu(add(conv1d(h, l.dec1_w, kPad), l.dec1_b));
  return add(conv1d(h, l.dec2_w, kPad), l.dec2_b);
}

Tensor dae_forward(const DaeParams& params, const Tensor& x) {
  const int64_t c = x.rank() == 3 ? x.dim(1) : x.dim(0);
  if (c != params.in_channels) throw ContractError("input channel count does not match model");
  Tape tape;
  const DaeLeaves l = dae_leaves(tape, params);
  return dae_graph(l, tape.leaf(x)).value();
}

Val smooth_l1(Val pred, Val target, double delta) {
  if (!(delta > 0.0)) throw ParameterError("smooth-l1 delta must be positive");
  Tape& tape = *pred.tape;
  Val d = sub(pred, target);
  Val excess = relu(sub(abs(d), tape.leaf(Tensor::full({1}, delta))));
  Val per_elem = sub(square(d), square(excess));
  return scalar_mul(mean(per_elem), 0.5 / delta);
}

Val spectral_loss(Val pred, Val target, const StftConfig& cfg, int64_t p) {
  if (p != 1 && p != 2) throw ParameterError("spectral norm must be 1 or 2");
  Tape& tape = *pred.tape;
  const Tensor& shape = pred.value();
  const int time_axis = static_cast<int>(shape.rank()) - 1;
  const int64_t t_len = shape.dim(time_axis);
  if (t_len < cfg.window) throw ParameterError("signal shorter than the analysis window");
  const int64_t n_frames = (t_len - cfg.window) / cfg.hop + 1;
  const int64_t n_bins = cfg.window / 2 + 1;

  // Constant Hann window and one-sided DFT bases.
  Tensor hann({cfg.window});
  for (int64_t i = 0; i < cfg.window; ++i)
    hann.vec()[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(cfg.window)));
  Tensor dft_cos({cfg.window, n_bins}), dft_sin({cfg.window, n_bins});
  for (int64_t i = 0; i < cfg.window; ++i)
    for (int64_t k = 0; k < n_bins; ++k) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(i * k) /
                         static_cast<double>(cfg.window);
      dft_cos.vec()[static_cast<size_t>(i * n_bins + k)] = std::cos(ang);
      dft_sin.vec()[static_cast<size_t>(i * n_bins + k)] = -std::sin(ang);
    }
  const Val w = tape.leaf(hann);
  const Val vcos = tape.leaf(dft_cos);
  const Val vsin = tape.leaf(dft_sin);
  const Val eps = tape.leaf(Tensor::full({1}, 1e-12));

  const auto magnitude = [&](Val x, int64_t frame) {
    const int64_t start = frame * cfg.hop;
    Val seg = mul(slice(x, time_axis, start, start + cfg.window), w);
    Val re = matmul(seg, vcos);
    Val im = matmul(seg, vsin);
    return sqrt(add(add(square(re), square(im)), eps));
  };

  Val total = tape.leaf(0.0);
  int64_t elems = 0;
  for (int64_t f = 0; f < n_frames; ++f) {
    Val diff = sub(magnitude(pred, f), magnitude(target, f));
    Val contrib = p == 1 ? sum(abs(diff)) : sum(square(diff));
    total = add(total, contrib);
    elems += diff.value().numel();
  }
  return scalar_mul(total, 1.0 / static_cast<double>(elems));
}

DaeResult dae_train(const std::vector<Recording>& clean, const DaeConfig& cfg) {
  cfg.validate();
  if (clean.empty()) throw ParameterError("no training windows supplied");
  const int64_t c = clean.front().channels();
  const int64_t t_len = clean.front().samples;
  for (const Recording& w : clean) {
    w.validate();
    if (w.channels() != c || w.samples != t_len)
      throw ParameterError("training windows must share channel count and length");
  }
  if (t_len < cfg.stft.window)
    throw ParameterError("windows shorter than the spectral analysis window");

  const auto t_start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  DaeParams params = init_dae(c, cfg, rng);

  std::vector<AdamWState> opt_state;
  for (auto& [name, tensor] : params.named()) opt_state.push_back(make_adamw_state(*tensor));
  AdamWConfig opt;
  opt.lr = cfg.lr;

  TrainReport report;
  report.seed = cfg.seed;

  std::vector<size_t> order(clean.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Seeded Fisher-Yates reshuffle per epoch.
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_index(i))]);

    double epoch_loss = 0.0;
    int64_t n_batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch)) {
      const size_t b_end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch));
      const int64_t b = static_cast<int64_t>(b_end - pos);

      Tensor clean_batch({b, c, t_len});
      for (int64_t i = 0; i < b; ++i) {
        const Recording& w = clean[order[pos + static_cast<size_t>(i)]];
        std::copy(w.data.begin(), w.data.end(),
                  clean_batch.data() + i * c * t_len);
      }
      Tensor noisy = clean_batch;
      if (cfg.noise_sigma > 0.0)
        for (double& v : noisy.vec()) v += rng.gaussian(0.0, cfg.noise_sigma);

      Tape tape;
      const DaeLeaves leaves = dae_leaves(tape, params);
      const Val x = tape.leaf(noisy);
      const Val target = tape.leaf(clean_batch);
      const Val recon = dae_graph(leaves, x);
      Val loss = scalar_mul(smooth_l1(recon, target, cfg.smoothl1_delta), cfg.alpha);
      if (cfg.beta > 0.0)
        loss = add(loss, scalar_mul(spectral_loss(recon, target, cfg.stft, cfg.spectral_p),
                                    cfg.beta));

      double loss_value;
      std::vector<Tensor> grads;
      try {
        loss_value = loss.value().item();
        grads = tape.backward(loss);
      } catch (const DomainError&) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
      }

      const Val* leaf_vals[] = {&leaves.enc1_w, &leaves.enc1_b, &leaves.enc2_w, &leaves.enc2_b,
                                &leaves.dec1_w, &leaves.dec1_b, &leaves.dec2_w, &leaves.dec2_b};
      auto named = params.named();
      for (size_t i = 0; i < named.size(); ++i)
        adamw_step(*named[i].second, grads[static_cast<size_t>(leaf_vals[i]->id)],
                   opt_state[i], opt);

      epoch_loss += loss_value;
      ++n_batches;
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));
  }

  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(params), std::move(report)};
}

ReconMetrics recon_metrics(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("channels must have equal length");
  if (x.size() < 2) throw ParameterError("need at least 2 samples");
  const size_t n = x.size();

  ReconMetrics m;
  double sq = 0.0, ab = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    sq += d * d;
    ab += std::abs(d);
  }
  m.rmse = std::sqrt(sq / static_cast<double>(n));
  m.mae = ab / static_cast<double>(n);

  // Hellinger over shared-range histograms.
  constexpr int64_t kBins = 64;
  double lo = x[0], hi = x[0];
  for (double v : x) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : y) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (hi > lo) {
    std::vector<double> p(kBins, 0.0), q(kBins, 0.0);
    const double scale = static_cast<double>(kBins) / (hi - lo);
    for (double v : x)
      p[static_cast<size_t>(std::min<int64_t>(kBins - 1, static_cast<int64_t>((v - lo) * scale)))] += 1.0;
    for (double v : y)
      q[static_cast<size_t>(std::min<int64_t>(kBins - 1, static_cast<int64_t>((v - lo) * scale)))] += 1.0;
    double acc = 0.0;
    for (int64_t i = 0; i < kBins; ++i) {
      const double d = std::sqrt(p[static_cast<size_t>(i)] / static_cast<double>(n)) -
                       std::sqrt(q[static_cast<size_t>(i)] / static_cast<double>(n));
      acc += d * d;
    }
    m.hellinger = std::sqrt(acc) / std::numbers::sqrt2;
  }

  std::vector<double> xs(x), ys(y);
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double w1 = 0.0;
  for (size_t i = 0; i < n; ++i) w1 += std::abs(xs[i] - ys[i]);
  m.wasserstein1 = w1 / static_cast<double>(n);
  return m;
}

}  // namespace neurodyn
