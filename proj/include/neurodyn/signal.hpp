#pragma once

#include <complex>
#include <vector>

#include "neurodyn/recording.hpp"

namespace neurodyn {

// Second-order IIR section with normalized denominator (a0 == 1):
//   y[t] = b0 x[t] + b1 x[t-1] + b2 x[t-2] - a1 y[t-1] - a2 y[t-2]
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  double gain = 1.0;  // applied once per filtering pass
};

// Per-channel affine map onto [0, 1]; constant channels become all zeros and
// their indices are recorded in flagged_channels of the result.
Recording minmax_normalize(const Recording& rec);

// Fourth-order Butterworth bandpass as two cascaded biquads, unit gain at the
// (pre-warped) geometric center of the band.
BiquadCascade design_bandpass(double lo_hz, double hi_hz, double sample_rate_hz);

// Complex frequency response of the cascade at freq_hz (single pass).
std::complex<double> cascade_response(const BiquadCascade& cascade, double freq_hz,
                                      double sample_rate_hz);

// Single forward pass with zero initial section states.
std::vector<double> filter_once(const BiquadCascade& cascade, const std::vector<double>& x);

// Zero-phase forward-backward pass with odd-reflection edge padding.
std::vector<double> filtfilt(const BiquadCascade& cascade, const std::vector<double>& x);

// Zero-phase 4th-order Butterworth bandpass of every channel.
Recording bandpass(const Recording& rec, const Band& band);

// Averaged-periodogram power spectral density (Hann window, density scaling,
// one-sided spectrum, no detrending).
PsdEstimate welch_psd(const Recording& rec, int64_t segment_len = 256, double overlap = 0.5);

// Trapezoidal integral of the PSD over [band.lo_hz, band.hi_hz] per channel,
// with linear interpolation at the band edges.
std::vector<double> band_power(const PsdEstimate& psd, const Band& band);

// 10 log10(sum(est^2) / sum((sig - est)^2)). Zero residual yields +infinity,
// otherwise a zero estimate yields -infinity.
double snr_db(const std::vector<double>& signal, const std::vector<double>& estimate);

// Keeps exactly the channels whose snr_db(rec_c, estimates_c) >= theta_db,
// preserving order and names. Rejecting every channel is an error.
Recording threshold_channels(const Recording& rec, const Recording& estimates,
                             double theta_db = 8.0);

// Biased (divide by T) mean-removed autocorrelation, normalized to 1 at lag 0.
std::vector<double> autocorrelation(const std::vector<double>& channel, int64_t max_lag);

// activity = population variance; mobility = sqrt(var(diff)/var(x));
// complexity = mobility(diff) / mobility(x).
HjorthDescriptors hjorth(const std::vector<double>& channel);

// Overlapping windows with stride max(1, floor(length * (1 - overlap)));
// the trailing partial window is dropped.
std::vector<Recording> segment_windows(const Recording& rec, const WindowSpec& spec);

}  // namespace neurodyn
