#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include "doctest.h"

#include "neurodyn/recording.hpp"
#include "neurodyn/rng.hpp"
#include "neurodyn/signal.hpp"

using namespace neurodyn;

namespace {

constexpr double kPi = 3.14159265358979323846;

Recording sine_rec(double freq_hz, double fs, int64_t t, double amp = 1.0,
                   double offset = 0.0) {
  Recording rec({"ch0"}, fs, t);
  for (int64_t i = 0; i < t; ++i)
    rec.at(0, i) = offset + amp * std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / fs);
  return rec;
}

Recording noise_rec(double fs, int64_t t, uint64_t seed, double sigma = 1.0) {
  Recording rec({"ch0"}, fs, t);
  Rng rng(seed);
  for (int64_t i = 0; i < t; ++i) rec.at(0, i) = rng.gaussian(0.0, sigma);
  return rec;
}

double channel_mean(const Recording& rec, int64_t c) {
  const std::vector<double> v = rec.channel_vec(c);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("minmax_normalize") {
  Recording rec({"a", "b", "c"}, 100.0, 3);
  const double va[] = {0.0, 5.0, 10.0};
  const double vb[] = {3.0, 3.0, 3.0};
  const double vc[] = {0.0, 0.25, 1.0};
  for (int64_t i = 0; i < 3; ++i) {
    rec.at(0, i) = va[i];
    rec.at(1, i) = vb[i];
    rec.at(2, i) = vc[i];
  }
  const Recording out = minmax_normalize(rec);
  CHECK(out.channel_vec(0) == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(out.channel_vec(1) == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(out.channel_vec(2) == std::vector<double>{0.0, 0.25, 1.0});  // idempotent
  REQUIRE(out.flagged_channels.size() == 1);
  CHECK(out.flagged_channels[0] == 1);

  // Idempotence on the non-degenerate result.
  const Recording twice = minmax_normalize(out);
  CHECK(twice.channel_vec(0) == out.channel_vec(0));
}

TEST_CASE("bandpass frequency response matches the designed cascade") {
  const double fs = 160.0;
  const BiquadCascade cascade = design_bandpass(1.0, 40.0, fs);

  // Oracle: the steady-state amplitude of a filtered sine equals |H(f)|^2
  // after the forward-backward pass (phase cancels, magnitude squares).
  for (double f : {5.0, 10.0, 20.0, 35.0}) {
    const Recording rec = sine_rec(f, fs, 4800);
    const Recording out = bandpass(rec, {1.0, 40.0});
    double peak = 0.0;
    for (int64_t i = 1600; i < 3200; ++i) peak = std::max(peak, std::abs(out.at(0, i)));
    const double h = std::abs(cascade_response(cascade, f, fs));
    CHECK(peak == doctest::Approx(h * h).epsilon(0.01));
  }

  // 10 Hz passband sine keeps amplitude within 1%.
  const Recording mid = bandpass(sine_rec(10.0, fs, 4800), {1.0, 40.0});
  double peak = 0.0;
  for (int64_t i = 1600; i < 3200; ++i) peak = std::max(peak, std::abs(mid.at(0, i)));
  CHECK(peak == doctest::Approx(1.0).epsilon(0.01));

  // DC offset is suppressed: |mean| of the filtered signal < 0.05.
  const Recording dc = bandpass(sine_rec(10.0, fs, 4800, 1.0, 5.0), {1.0, 40.0});
  CHECK(std::abs(channel_mean(dc, 0)) < 0.05);

  CHECK_THROWS_AS(bandpass(sine_rec(10.0, fs, 480), {1.0, 80.0}), ParameterError);
}

TEST_CASE("bandpass linearity") {
  const double fs = 160.0;
  const Recording x = noise_rec(fs, 800, 11);
  const Recording y = noise_rec(fs, 800, 22);
  Recording mix({"ch0"}, fs, 800);
  const double a = 2.5, b = -1.25;
  for (int64_t i = 0; i < 800; ++i) mix.at(0, i) = a * x.at(0, i) + b * y.at(0, i);

  const Band band{4.0, 30.0};
  const Recording fx = bandpass(x, band);
  const Recording fy = bandpass(y, band);
  const Recording fmix = bandpass(mix, band);
  for (int64_t i = 0; i < 800; ++i)
    CHECK(fmix.at(0, i) == doctest::Approx(a * fx.at(0, i) + b * fy.at(0, i)).epsilon(1e-9));
}

TEST_CASE("welch psd") {
  const double fs = 160.0;

  SUBCASE("peak lands on the sine frequency") {
    const PsdEstimate psd = welch_psd(sine_rec(10.0, fs, 2048), 256, 0.5);
    int64_t argmax = 0;
    for (int64_t i = 1; i < psd.bins(); ++i)
      if (psd.at(0, i) > psd.at(0, argmax)) argmax = i;
    CHECK(psd.freqs[static_cast<size_t>(argmax)] == doctest::Approx(10.0).epsilon(0.05));
  }

  SUBCASE("white noise total power matches sample variance (Parseval)") {
    const Recording rec = noise_rec(fs, 8192, 17, 2.0);
    const std::vector<double> v = rec.channel_vec(0);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());

    const PsdEstimate psd = welch_psd(rec, 256, 0.5);
    double integral = 0.0;
    for (int64_t i = 0; i + 1 < psd.bins(); ++i) {
      const double df = psd.freqs[static_cast<size_t>(i + 1)] - psd.freqs[static_cast<size_t>(i)];
      integral += 0.5 * (psd.at(0, i) + psd.at(0, i + 1)) * df;
    }
    CHECK(integral == doctest::Approx(var).epsilon(0.10));
  }

  SUBCASE("zero signal gives zero power and short input errors") {
    Recording rec({"ch0"}, fs, 512);
    const PsdEstimate psd = welch_psd(rec, 256, 0.5);
    for (int64_t i = 0; i < psd.bins(); ++i) CHECK(psd.at(0, i) == 0.0);
    CHECK_THROWS_AS(welch_psd(rec, 1024, 0.5), ParameterError);
  }

  SUBCASE("power non-negative on arbitrary input") {
    const PsdEstimate psd = welch_psd(noise_rec(fs, 2048, 3), 256, 0.5);
    for (int64_t i = 0; i < psd.bins(); ++i) CHECK(psd.at(0, i) >= 0.0);
  }
}

TEST_CASE("band power concentrates where the signal lives") {
  const double fs = 160.0;
  const PsdEstimate psd = welch_psd(sine_rec(10.0, fs, 4096), 256, 0.5);
  const double alpha = band_power(psd, {8.0, 13.0})[0];
  const double gamma = band_power(psd, {30.0, 70.0})[0];
  const double total = band_power(psd, {0.0, 80.0})[0];
  CHECK(alpha >= 0.95 * total);
  CHECK(gamma < 0.01 * total);

  const PsdEstimate zero = welch_psd(Recording({"ch0"}, fs, 512), 256, 0.5);
  CHECK(band_power(zero, {8.0, 13.0})[0] == 0.0);
  CHECK_THROWS_AS(band_power(psd, {100.0, 120.0}), ParameterError);
}

TEST_CASE("snr and channel thresholding") {
  std::vector<double> sig{1.0, 2.0, 3.0};

  SUBCASE("log identity: estimate power 100x residual") {
    // residual = sig - est; choose est so that sum(est^2) = 100 * sum(res^2).
    std::vector<double> est(3);
    const double k = 10.0 / 11.0;  // est = k*sig -> ratio k^2/(1-k)^2 = 100
    for (size_t i = 0; i < 3; ++i) est[i] = k * sig[i];
    CHECK(snr_db(sig, est) == doctest::Approx(20.0).epsilon(1e-9));
  }

  SUBCASE("sentinels") {
    CHECK(std::isinf(snr_db(sig, sig)));
    CHECK(snr_db(sig, sig) > 0);
    const double ninf = snr_db(sig, {0.0, 0.0, 0.0});
    CHECK(std::isinf(ninf));
    CHECK(ninf < 0);
  }

  SUBCASE("threshold keeps exactly the channels at or above theta") {
    // Build per-channel estimates with chosen SNRs around the 8 dB boundary.
    const double fs = 100.0;
    Recording rec({"hi", "low", "edge"}, fs, 64);
    Recording est({"hi", "low", "edge"}, fs, 64);
    Rng rng(4);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 64; ++i) rec.at(c, i) = rng.gaussian();
    const auto set_snr = [&](int64_t c, double db) {
      // est = k*sig gives snr 20*log10(k/(1-k)); solve for k.
      const double r = std::pow(10.0, db / 20.0);
      const double k = r / (1.0 + r);
      for (int64_t i = 0; i < 64; ++i) est.at(c, i) = k * rec.at(c, i);
    };
    set_snr(0, 10.0);
    set_snr(1, 7.9);
    set_snr(2, 8.0);
    // Threshold at the exact computed SNR of the edge channel so the
    // inclusive >= comparison is what keeps it.
    const double theta = snr_db(rec.channel_vec(2), est.channel_vec(2));
    CHECK(theta == doctest::Approx(8.0).epsilon(1e-6));
    const Recording kept = threshold_channels(rec, est, theta);
    REQUIRE(kept.channels() == 2);
    CHECK(kept.channel_names[0] == "hi");
    CHECK(kept.channel_names[1] == "edge");
    CHECK(kept.channel_vec(0) == rec.channel_vec(0));

    CHECK(threshold_channels(rec, est, -1e9).channels() == 3);
    CHECK_THROWS_AS(threshold_channels(rec, est, 1e9), DegenerateError);
  }
}

TEST_CASE("autocorrelation") {
  const double fs = 160.0;

  SUBCASE("lag zero is one; sine at one period returns near one") {
    const Recording rec = sine_rec(10.0, fs, 3200);  // 200 periods, 16 samples each
    const std::vector<double> acf = autocorrelation(rec.channel_vec(0), 32);
    CHECK(acf[0] == 1.0);
    CHECK(acf[16] == doctest::Approx(1.0).epsilon(0.02));
    CHECK(acf[8] == doctest::Approx(-1.0).epsilon(0.02));  // half period
  }

  SUBCASE("white noise stays inside the standard-error band") {
    const int64_t t = 10000;
    const std::vector<double> x = noise_rec(fs, t, 23).channel_vec(0);
    const std::vector<double> acf = autocorrelation(x, 20);
    for (size_t lag = 1; lag < acf.size(); ++lag)
      CHECK(std::abs(acf[lag]) < 4.0 / std::sqrt(static_cast<double>(t)));
  }

  SUBCASE("constant channel is degenerate") {
    CHECK_THROWS_AS(autocorrelation(std::vector<double>(100, 2.0), 10), DegenerateError);
  }
}

TEST_CASE("hjorth descriptors") {
  SUBCASE("unit-variance noise activity") {
    const std::vector<double> x = noise_rec(100.0, 50000, 31).channel_vec(0);
    const HjorthDescriptors h = hjorth(x);
    CHECK(h.activity == doctest::Approx(1.0).epsilon(0.03));
    CHECK(h.mobility > 0.0);
    CHECK(h.complexity > 0.0);
  }

  SUBCASE("pure sine complexity near one") {
    // The derivative of a sine is a sine: mobility(diff)/mobility(x) ~ 1.
    const std::vector<double> x = sine_rec(5.0, 160.0, 6400).channel_vec(0);
    const HjorthDescriptors h = hjorth(x);
    CHECK(h.complexity == doctest::Approx(1.0).epsilon(0.05));
  }

  SUBCASE("constant is degenerate") {
    CHECK_THROWS_AS(hjorth(std::vector<double>(10, 1.0)), DegenerateError);
  }
}

TEST_CASE("segment_windows") {
  Recording rec({"a", "b"}, 160.0, 640);
  for (int64_t i = 0; i < 640; ++i) {
    rec.at(0, i) = static_cast<double>(i);
    rec.at(1, i) = -static_cast<double>(i);
  }

  SUBCASE("no overlap") {
    const auto w = segment_windows(rec, {320, 0.0});
    REQUIRE(w.size() == 2);
    CHECK(w[0].samples == 320);
    CHECK(w[0].at(0, 0) == 0.0);
    CHECK(w[1].at(0, 0) == 320.0);
    CHECK(w[1].at(1, 319) == -639.0);
  }

  SUBCASE("half overlap gives starts 0, 160, 320") {
    const auto w = segment_windows(rec, {320, 0.5});
    REQUIRE(w.size() == 3);
    CHECK(w[0].at(0, 0) == 0.0);
    CHECK(w[1].at(0, 0) == 160.0);
    CHECK(w[2].at(0, 0) == 320.0);
  }

  SUBCASE("window longer than the recording is a parameter error") {
    Recording small({"a"}, 160.0, 100);
    CHECK_THROWS_AS(segment_windows(small, {320, 0.0}), ParameterError);
  }
}
