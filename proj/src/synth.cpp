#include "neurodyn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace neurodyn {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int64_t kTransient = 1000;

double clamped_noise(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::clamp(rng.gaussian(0.0, sigma), -6.0 * sigma, 6.0 * sigma);
}

std::vector<std::string> channel_names(int64_t c) {
  std::vector<std::string> names;
  for (int64_t i = 0; i < c; ++i) names.push_back("ch" + std::to_string(i));
  return names;
}

}  // namespace

std::string synth_kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::sine: return "sine";
    case SynthKind::sum_of_sines: return "sum_of_sines";
    case SynthKind::logistic_map: return "logistic_map";
    case SynthKind::henon: return "henon";
    case SynthKind::noisy_sine: return "noisy_sine";
  }
  throw ContractError("unknown synth kind");
}

SynthKind synth_kind_from_name(const std::string& name) {
  if (name == "sine") return SynthKind::sine;
  if (name == "sum_of_sines") return SynthKind::sum_of_sines;
  if (name == "logistic_map") return SynthKind::logistic_map;
  if (name == "henon") return SynthKind::henon;
  if (name == "noisy_sine") return SynthKind::noisy_sine;
  throw ParameterError("unknown signal kind: " + name);
}

void SynthSpec::validate() const {
  if (duration_samples < 1) throw ParameterError("duration must be at least 1 sample");
  if (channels < 1) throw ParameterError("need at least one channel");
  if (!(sample_rate_hz > 0.0)) throw ParameterError("sample rate must be positive");
  if (noise_sigma < 0.0) throw ParameterError("noise sigma must be non-negative");
  if (kind == SynthKind::sine || kind == SynthKind::sum_of_sines ||
      kind == SynthKind::noisy_sine) {
    if (frequencies_hz.empty() || frequencies_hz.size() != amplitudes.size())
      throw ParameterError("frequencies and amplitudes must be non-empty and aligned");
  }
  if (kind == SynthKind::logistic_map) {
    if (!(logistic_r > 0.0) || logistic_r > 4.0)
      throw ParameterError("logistic growth rate must lie in (0, 4]");
  }
}

Recording gen_signal(const SynthSpec& spec) {
  spec.validate();
  Recording rec(channel_names(spec.channels), spec.sample_rate_hz, spec.duration_samples);
  Rng rng(spec.seed);

  const int64_t t_total = spec.duration_samples;
  switch (spec.kind) {
    case SynthKind::sine:
    case SynthKind::sum_of_sines:
    case SynthKind::noisy_sine: {
      const size_t n_comp = spec.kind == SynthKind::sine ? 1 : spec.frequencies_hz.size();
      for (int64_t c = 0; c < spec.channels; ++c) {
        double* dst = rec.channel(c);
        for (int64_t t = 0; t < t_total; ++t) {
          double v = 0.0;
          for (size_t i = 0; i < n_comp; ++i)
            v += spec.amplitudes[i] *
                 std::sin(2.0 * kPi * spec.frequencies_hz[i] * static_cast<double>(t) /
                          spec.sample_rate_hz);
          dst[t] = v;
        }
      }
      break;
    }
    case SynthKind::logistic_map: {
      for (int64_t c = 0; c < spec.channels; ++c) {
        double x = 0.1 + 0.8 * rng.uniform();  // stays inside (0, 1)
        for (int64_t t = 0; t < kTransient; ++t) x = spec.logistic_r * x * (1.0 - x);
        double* dst = rec.channel(c);
        for (int64_t t = 0; t < t_total; ++t) {
          x = spec.logistic_r * x * (1.0 - x);
          dst[t] = x;
        }
      }
      break;
    }
    case SynthKind::henon: {
      for (int64_t c = 0; c < spec.channels; ++c) {
        double x = rng.uniform(-0.1, 0.1);
        double y = rng.uniform(-0.1, 0.1);
        double* dst = rec.channel(c);
        for (int64_t t = 0; t < kTransient + t_total; ++t) {
          const double xn = 1.0 - spec.henon_a * x * x + y;
          y = spec.henon_b * x;
          x = xn;
          if (!std::isfinite(x) || std::abs(x) > 1e6)
            throw DivergenceError("map trajectory escaped", t);
          if (t >= kTransient) dst[t - kTransient] = x;
        }
      }
      break;
    }
  }

  const double sigma =
      spec.kind == SynthKind::noisy_sine && spec.noise_sigma == 0.0 ? 0.05 : spec.noise_sigma;
  if (sigma > 0.0) {
    for (double& v : rec.data) v += clamped_noise(rng, sigma);
  }
  return rec;
}

std::string mi_label_name(MiLabel l) { return l == MiLabel::real ? "real" : "imagery"; }

std::vector<Trial> gen_corpus(int64_t n_per_class, const WindowSpec& window_spec,
                              uint64_t seed) {
  if (n_per_class < 1) throw ParameterError("need at least one trial per class");
  if (window_spec.length < 2) throw ParameterError("window length must be at least 2");

  const int64_t channels = 3;
  const int64_t t_len = window_spec.length;
  const double fs = 160.0;
  Rng rng(seed);

  std::vector<Trial> corpus;
  corpus.reserve(static_cast<size_t>(2 * n_per_class));
  int64_t chaotic_budget = n_per_class;  // exactly balanced across the corpus

  for (int mi = 0; mi < 2; ++mi) {
    const double freq = mi == 0 ? 10.0 : 25.0;
    for (int64_t i = 0; i < n_per_class; ++i) {
      // Alternate chaos labels within each class; drain the global budget so
      // odd class sizes still come out exactly balanced overall.
      const bool chaotic = (i % 2 == 0) && chaotic_budget > 0;
      if (chaotic) --chaotic_budget;

      Trial trial;
      trial.label_mi = mi == 0 ? MiLabel::real : MiLabel::imagery;
      trial.label_chaos = chaotic ? ChaosTag::chaotic : ChaosTag::non_chaotic;
      trial.window = Tensor({channels, t_len});

      for (int64_t c = 0; c < channels; ++c) {
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        double x = 0.1 + 0.8 * rng.uniform();
        for (int64_t t = 0; t < kTransient; ++t) x = 4.0 * x * (1.0 - x);
        double* row = trial.window.data() + c * t_len;
        for (int64_t t = 0; t < t_len; ++t) {
          double v = std::sin(2.0 * kPi * freq * static_cast<double>(t) / fs + phase);
          if (chaotic) {
            x = 4.0 * x * (1.0 - x);
            v += 0.5 * (2.0 * x - 1.0);
          }
          v += clamped_noise(rng, 0.02);
          row[t] = v;
        }
      }
      corpus.push_back(std::move(trial));
    }
  }
  return corpus;
}

}  // namespace neurodyn
