#pragma once

#include <cstdint>
#include <vector>

#include "neurodyn/chaos_tag.hpp"
#include "neurodyn/recording.hpp"
#include "neurodyn/tensor.hpp"

namespace neurodyn {

enum class SynthKind { sine, sum_of_sines, logistic_map, henon, noisy_sine };

std::string synth_kind_name(SynthKind k);
SynthKind synth_kind_from_name(const std::string& name);

struct SynthSpec {
  SynthKind kind = SynthKind::sine;
  std::vector<double> frequencies_hz = {10.0};
  std::vector<double> amplitudes = {1.0};
  double logistic_r = 4.0;
  double henon_a = 1.4;
  double henon_b = 0.3;
  int64_t channels = 1;
  int64_t duration_samples = 320;
  double sample_rate_hz = 160.0;
  double noise_sigma = 0.0;  // additive noise, clamped to +-6 sigma
  uint64_t seed = 0;
  void validate() const;
};

// Deterministic generator: sinusoids evaluate a closed form; map kinds iterate
// per channel from seeded initial conditions after a 1000-step transient.
Recording gen_signal(const SynthSpec& spec);

enum class MiLabel { real, imagery };

std::string mi_label_name(MiLabel l);

struct Trial {
  Tensor window;  // C x T
  MiLabel label_mi = MiLabel::real;
  ChaosTag label_chaos = ChaosTag::non_chaotic;
};

// Labeled toy corpus: class "real" is dominated by a 10 Hz component,
// "imagery" by 25 Hz; half of each class mixes in a chaotic map component and
// is labeled chaotic by construction. 2 * n_per_class trials, exactly
// n_per_class per MI class and n_per_class chaotic overall.
std::vector<Trial> gen_corpus(int64_t n_per_class, const WindowSpec& window_spec,
                              uint64_t seed);

}  // namespace neurodyn
