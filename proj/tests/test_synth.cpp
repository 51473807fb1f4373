#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "neurodyn/chaos_tag.hpp"
#include "neurodyn/synth.hpp"

using namespace neurodyn;

namespace {

std::vector<double> channel_vec(const Tensor& window, int64_t c) {
  const int64_t t = window.dim(1);
  std::vector<double> out(static_cast<size_t>(t));
  for (int64_t i = 0; i < t; ++i) out[static_cast<size_t>(i)] = window.at(c, i);
  return out;
}

}  // namespace

TEST_CASE("synth kind names round-trip") {
  for (SynthKind k : {SynthKind::sine, SynthKind::sum_of_sines, SynthKind::logistic_map,
                      SynthKind::henon, SynthKind::noisy_sine})
    CHECK(synth_kind_from_name(synth_kind_name(k)) == k);
  CHECK_THROWS_AS(synth_kind_from_name("triangle"), ParameterError);
  CHECK(mi_label_name(MiLabel::real) == "real");
  CHECK(mi_label_name(MiLabel::imagery) == "imagery");
}

TEST_CASE("pure sine closed form") {
  SynthSpec spec;
  spec.kind = SynthKind::sine;
  spec.frequencies_hz = {10.0};
  spec.amplitudes = {1.0};
  spec.duration_samples = 320;
  spec.sample_rate_hz = 160.0;
  const Recording rec = gen_signal(spec);

  REQUIRE(rec.samples == 320);
  REQUIRE(rec.channels() == 1);
  CHECK(rec.sample_rate_hz == 160.0);

  // 10 Hz at 160 Hz: period is exactly 16 samples, 20 full periods.
  CHECK(rec.at(0, 0) == 0.0);
  CHECK(rec.at(0, 4) == 1.0);   // quarter period peaks exactly
  CHECK(rec.at(0, 12) == -1.0);
  for (int64_t t = 0; t + 16 < 320; ++t)
    CHECK(rec.at(0, t) == doctest::Approx(rec.at(0, t + 16)).epsilon(1e-12));
  double peak = 0.0;
  for (int64_t t = 0; t < 320; ++t) peak = std::max(peak, std::abs(rec.at(0, t)));
  CHECK(peak == 1.0);

  // Amplitude scales linearly.
  SynthSpec big = spec;
  big.amplitudes = {2.5};
  const Recording scaled = gen_signal(big);
  for (int64_t t = 0; t < 320; ++t)
    CHECK(scaled.at(0, t) == doctest::Approx(2.5 * rec.at(0, t)).epsilon(1e-15));

  // Channels of a closed-form sine are identical copies.
  SynthSpec multi = spec;
  multi.channels = 3;
  const Recording m = gen_signal(multi);
  for (int64_t t = 0; t < 320; ++t) {
    CHECK(m.at(1, t) == m.at(0, t));
    CHECK(m.at(2, t) == m.at(0, t));
  }
}

TEST_CASE("sum of sines superposes the components") {
  SynthSpec both;
  both.kind = SynthKind::sum_of_sines;
  both.frequencies_hz = {10.0, 25.0};
  both.amplitudes = {1.0, 0.5};
  both.duration_samples = 160;
  const Recording sum = gen_signal(both);

  SynthSpec one = both;
  one.kind = SynthKind::sine;
  one.frequencies_hz = {10.0};
  one.amplitudes = {1.0};
  const Recording a = gen_signal(one);
  one.frequencies_hz = {25.0};
  one.amplitudes = {0.5};
  const Recording b = gen_signal(one);

  for (int64_t t = 0; t < 160; ++t)
    CHECK(sum.at(0, t) == doctest::Approx(a.at(0, t) + b.at(0, t)).epsilon(1e-12));
}

TEST_CASE("logistic map generation") {
  SynthSpec spec;
  spec.kind = SynthKind::logistic_map;
  spec.logistic_r = 4.0;
  spec.channels = 3;
  spec.duration_samples = 500;
  spec.seed = 7;
  const Recording rec = gen_signal(spec);

  SUBCASE("trajectories stay inside the invariant interval") {
    for (double v : rec.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  SUBCASE("channels iterate from independent initial conditions") {
    bool ch01 = false, ch12 = false;
    for (int64_t t = 0; t < 500; ++t) {
      if (rec.at(0, t) != rec.at(1, t)) ch01 = true;
      if (rec.at(1, t) != rec.at(2, t)) ch12 = true;
    }
    CHECK(ch01);
    CHECK(ch12);
  }

  SUBCASE("deterministic under the seed") {
    const Recording again = gen_signal(spec);
    CHECK(again.data == rec.data);
    SynthSpec other = spec;
    other.seed = 8;
    CHECK(gen_signal(other).data != rec.data);
  }

  SUBCASE("growth rate validation") {
    SynthSpec bad = spec;
    bad.logistic_r = 0.0;
    CHECK_THROWS_AS(gen_signal(bad), ParameterError);
    bad.logistic_r = 4.5;
    CHECK_THROWS_AS(gen_signal(bad), ParameterError);
    bad.logistic_r = 4.0;
    CHECK_NOTHROW(gen_signal(bad));
  }
}

TEST_CASE("henon map generation") {
  SynthSpec spec;
  spec.kind = SynthKind::henon;
  spec.duration_samples = 400;
  spec.seed = 3;

  SUBCASE("classical parameters stay on the bounded attractor") {
    const Recording rec = gen_signal(spec);
    for (double v : rec.data) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) < 1.6);
    }
  }

  SUBCASE("runaway parameters raise a divergence error with the step") {
    SynthSpec bad = spec;
    bad.henon_a = 6.0;
    try {
      gen_signal(bad);
      FAIL("expected the trajectory to escape");
    } catch (const DivergenceError& e) {
      CHECK(e.step() >= 0);
    }
  }
}

TEST_CASE("noisy sine stays within the declared bound") {
  SynthSpec spec;
  spec.kind = SynthKind::noisy_sine;
  spec.frequencies_hz = {10.0};
  spec.amplitudes = {1.0};
  spec.duration_samples = 640;
  spec.seed = 5;
  // noise_sigma 0 selects the default corruption level of 0.05.
  const Recording rec = gen_signal(spec);

  SynthSpec clean = spec;
  clean.kind = SynthKind::sine;
  const Recording base = gen_signal(clean);

  bool any_diff = false;
  for (int64_t t = 0; t < 640; ++t) {
    CHECK(std::abs(rec.at(0, t)) <= 1.0 + 6.0 * 0.05 + 1e-12);
    CHECK(std::abs(rec.at(0, t) - base.at(0, t)) <= 6.0 * 0.05 + 1e-12);
    if (rec.at(0, t) != base.at(0, t)) any_diff = true;
  }
  CHECK(any_diff);

  // An explicit sigma widens the clamp accordingly.
  SynthSpec loud = spec;
  loud.noise_sigma = 0.5;
  const Recording l = gen_signal(loud);
  for (int64_t t = 0; t < 640; ++t)
    CHECK(std::abs(l.at(0, t) - base.at(0, t)) <= 3.0 + 1e-12);
}

TEST_CASE("generator validation") {
  SynthSpec spec;
  spec.duration_samples = 0;
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
  spec.duration_samples = 10;
  spec.channels = 0;
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
  spec.channels = 1;
  spec.sample_rate_hz = 0.0;
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
  spec.sample_rate_hz = 160.0;
  spec.frequencies_hz = {10.0, 25.0};
  spec.amplitudes = {1.0};  // misaligned
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
  spec.frequencies_hz.clear();
  spec.amplitudes.clear();
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
  spec.noise_sigma = -0.1;
  CHECK_THROWS_AS(gen_signal(spec), ParameterError);
}

TEST_CASE("labeled corpus construction") {
  const WindowSpec wspec{320, 0.0};

  SUBCASE("counts and label marginals are exactly balanced") {
    const std::vector<Trial> corpus = gen_corpus(10, wspec, 42);
    REQUIRE(corpus.size() == 20);
    int64_t real = 0, chaotic = 0, real_chaotic = 0;
    for (const Trial& tr : corpus) {
      CHECK(tr.window.dims() == std::vector<int64_t>{3, 320});
      if (tr.label_mi == MiLabel::real) {
        ++real;
        if (tr.label_chaos == ChaosTag::chaotic) ++real_chaotic;
      }
      if (tr.label_chaos == ChaosTag::chaotic) ++chaotic;
    }
    CHECK(real == 10);
    CHECK(chaotic == 10);
    CHECK(real_chaotic == 5);  // alternating within each class
  }

  SUBCASE("odd class sizes still balance the chaos marginal") {
    const std::vector<Trial> corpus = gen_corpus(3, wspec, 1);
    REQUIRE(corpus.size() == 6);
    int64_t chaotic = 0;
    for (const Trial& tr : corpus)
      if (tr.label_chaos == ChaosTag::chaotic) ++chaotic;
    CHECK(chaotic == 3);
  }

  SUBCASE("deterministic under the seed") {
    const std::vector<Trial> a = gen_corpus(4, wspec, 9);
    const std::vector<Trial> b = gen_corpus(4, wspec, 9);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].window.vec() == b[i].window.vec());
      CHECK(a[i].label_mi == b[i].label_mi);
      CHECK(a[i].label_chaos == b[i].label_chaos);
    }
    const std::vector<Trial> c = gen_corpus(4, wspec, 10);
    CHECK(a[0].window.vec() != c[0].window.vec());
  }

  SUBCASE("all samples finite and bounded by the construction") {
    // sine (amp 1) + 0.5 chaotic mix + clamped 0.02 noise.
    for (const Trial& tr : gen_corpus(6, wspec, 13))
      for (double v : tr.window.vec()) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) <= 1.0 + 0.5 + 6.0 * 0.02 + 1e-12);
      }
  }

  SUBCASE("chaotic windows carry more permutation entropy than regular ones") {
    const std::vector<Trial> corpus = gen_corpus(10, wspec, 77);
    double h_chaotic = 0.0, h_regular = 0.0;
    int64_t n_chaotic = 0, n_regular = 0;
    for (const Trial& tr : corpus) {
      const double h = permutation_entropy(channel_vec(tr.window, 0), 4, 1);
      if (tr.label_chaos == ChaosTag::chaotic) {
        h_chaotic += h;
        ++n_chaotic;
      } else {
        h_regular += h;
        ++n_regular;
      }
    }
    CHECK(h_chaotic / static_cast<double>(n_chaotic) >
          h_regular / static_cast<double>(n_regular));
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(gen_corpus(0, wspec, 1), ParameterError);
    CHECK_THROWS_AS(gen_corpus(3, WindowSpec{1, 0.0}, 1), ParameterError);
  }
}
