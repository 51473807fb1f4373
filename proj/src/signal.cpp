#include "neurodyn/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "neurodyn/fft.hpp"

namespace neurodyn {

namespace {

constexpr double kPi = std::numbers::pi;

double population_variance(const std::vector<double>& x) {
  const size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  return var / static_cast<double>(n);
}

std::vector<double> first_difference(const std::vector<double>& x) {
  std::vector<double> d(x.size() - 1);
  for (size_t i = 0; i + 1 < x.size(); ++i) d[i] = x[i + 1] - x[i];
  return d;
}

}  // namespace

Recording minmax_normalize(const Recording& rec) {
  rec.validate();
  Recording out = rec;
  out.flagged_channels.clear();
  for (int64_t c = 0; c < rec.channels(); ++c) {
    const double* src = rec.channel(c);
    double lo = src[0], hi = src[0];
    for (int64_t t = 0; t < rec.samples; ++t) {
      lo = std::min(lo, src[t]);
      hi = std::max(hi, src[t]);
    }
    double* dst = out.channel(c);
    if (hi > lo) {
      const double inv = 1.0 / (hi - lo);
      for (int64_t t = 0; t < rec.samples; ++t) dst[t] = (src[t] - lo) * inv;
    } else {
      std::fill(dst, dst + rec.samples, 0.0);
      out.flagged_channels.push_back(c);
    }
  }
  return out;
}

BiquadCascade design_bandpass(double lo_hz, double hi_hz, double sample_rate_hz) {
  if (!(sample_rate_hz > 0.0)) throw ParameterError("sample rate must be positive");
  if (!(lo_hz > 0.0) || !(hi_hz > lo_hz))
    throw ParameterError("band edges must satisfy 0 < lo < hi");
  if (hi_hz >= 0.5 * sample_rate_hz)
    throw ParameterError("band upper edge must lie below the Nyquist frequency");

  const double fs2 = 2.0 * sample_rate_hz;
  // Pre-warped analog edge frequencies for the bilinear transform.
  const double w1 = fs2 * std::tan(kPi * lo_hz / sample_rate_hz);
  const double w2 = fs2 * std::tan(kPi * hi_hz / sample_rate_hz);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Order-2 Butterworth lowpass prototype: one upper-half-plane pole; the
  // conjugate is implied. Bandpass substitution S -> (s^2 + w0^2) / (bw * s)
  // splits it into two analog poles.
  const std::complex<double> proto = std::polar(1.0, 3.0 * kPi / 4.0);
  const std::complex<double> pb = proto * bw;
  const std::complex<double> disc = std::sqrt(pb * pb - 4.0 * w0sq);
  const std::complex<double> analog[2] = {(pb + disc) * 0.5, (pb - disc) * 0.5};

  BiquadCascade cascade;
  for (const std::complex<double>& s : analog) {
    // Bilinear map; the conjugate analog pole lands on the conjugate digital
    // pole, so each analog pole yields one real-coefficient section.
    const std::complex<double> z = (fs2 + s) / (fs2 - s);
    Biquad q;
    q.b0 = 1.0;
    q.b1 = 0.0;
    q.b2 = -1.0;  // one zero at z = +1 (DC), one at z = -1 (Nyquist)
    q.a1 = -2.0 * z.real();
    q.a2 = std::norm(z);
    cascade.sections.push_back(q);
  }

  // Normalize to unit gain at the warped geometric center of the band.
  const double wc = 2.0 * std::atan(std::sqrt(w0sq) / fs2);
  const double fc = wc * sample_rate_hz / (2.0 * kPi);
  cascade.gain = 1.0;
  const double mag = std::abs(cascade_response(cascade, fc, sample_rate_hz));
  if (!(mag > 0.0)) throw DegenerateError("bandpass design produced zero center gain");
  cascade.gain = 1.0 / mag;
  return cascade;
}

std::complex<double> cascade_response(const BiquadCascade& cascade, double freq_hz,
                                      double sample_rate_hz) {
  const double w = 2.0 * kPi * freq_hz / sample_rate_hz;
  const std::complex<double> zinv = std::polar(1.0, -w);
  const std::complex<double> zinv2 = zinv * zinv;
  std::complex<double> h = cascade.gain;
  for (const Biquad& q : cascade.sections) {
    h *= (q.b0 + q.b1 * zinv + q.b2 * zinv2) / (1.0 + q.a1 * zinv + q.a2 * zinv2);
  }
  return h;
}

std::vector<double> filter_once(const BiquadCascade& cascade, const std::vector<double>& x) {
  std::vector<double> y(x);
  for (double& v : y) v *= cascade.gain;
  for (const Biquad& q : cascade.sections) {
    // Direct form II transposed, zero initial state.
    double s1 = 0.0, s2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + s1;
      s1 = q.b1 * in - q.a1 * out + s2;
      s2 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> filtfilt(const BiquadCascade& cascade, const std::vector<double>& x) {
  const int64_t t = static_cast<int64_t>(x.size());
  if (t == 0) return {};
  const int64_t pad = std::min<int64_t>(t - 1, 24);

  // Odd reflection about the end points damps edge transients.
  std::vector<double> ext;
  ext.reserve(static_cast<size_t>(t + 2 * pad));
  for (int64_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<size_t>(i)]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (int64_t i = 1; i <= pad; ++i)
    ext.push_back(2.0 * x[static_cast<size_t>(t - 1)] - x[static_cast<size_t>(t - 1 - i)]);

  std::vector<double> y = filter_once(cascade, ext);
  std::reverse(y.begin(), y.end());
  y = filter_once(cascade, y);
  std::reverse(y.begin(), y.end());

  return std::vector<double>(y.begin() + pad, y.begin() + pad + t);
}

Recording bandpass(const Recording& rec, const Band& band) {
  rec.validate();
  const BiquadCascade cascade = design_bandpass(band.lo_hz, band.hi_hz, rec.sample_rate_hz);
  Recording out = rec;
  for (int64_t c = 0; c < rec.channels(); ++c) {
    const std::vector<double> filtered = filtfilt(cascade, rec.channel_vec(c));
    std::copy(filtered.begin(), filtered.end(), out.channel(c));
  }
  return out;
}

PsdEstimate welch_psd(const Recording& rec, int64_t segment_len, double overlap) {
  rec.validate();
  if (segment_len < 2) throw ParameterError("segment length must be at least 2");
  if (!(overlap >= 0.0) || !(overlap < 1.0)) throw ParameterError("overlap must lie in [0, 1)");
  if (rec.samples < segment_len)
    throw ParameterError("recording shorter than one analysis segment");

  const int64_t hop =
      std::max<int64_t>(1, static_cast<int64_t>(std::floor(static_cast<double>(segment_len) *
                                                           (1.0 - overlap))));
  const int64_t n_seg = 1 + (rec.samples - segment_len) / hop;
  const int64_t n_bins = segment_len / 2 + 1;

  std::vector<double> window(static_cast<size_t>(segment_len));
  double wsum_sq = 0.0;
  for (int64_t i = 0; i < segment_len; ++i) {
    window[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                              static_cast<double>(segment_len)));
    wsum_sq += window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
  }
  const double scale = 1.0 / (rec.sample_rate_hz * wsum_sq);

  PsdEstimate psd;
  psd.channels = rec.channels();
  psd.segment_len = segment_len;
  psd.overlap = overlap;
  psd.freqs.resize(static_cast<size_t>(n_bins));
  for (int64_t k = 0; k < n_bins; ++k)
    psd.freqs[static_cast<size_t>(k)] =
        static_cast<double>(k) * rec.sample_rate_hz / static_cast<double>(segment_len);
  psd.power.assign(static_cast<size_t>(rec.channels() * n_bins), 0.0);

  std::vector<double> seg(static_cast<size_t>(segment_len));
  for (int64_t c = 0; c < rec.channels(); ++c) {
    double* out = psd.power.data() + c * n_bins;
    const double* src = rec.channel(c);
    for (int64_t s = 0; s < n_seg; ++s) {
      const double* start = src + s * hop;
      for (int64_t i = 0; i < segment_len; ++i)
        seg[static_cast<size_t>(i)] = start[i] * window[static_cast<size_t>(i)];
      const std::vector<std::complex<double>> spec = rfft(seg);
      for (int64_t k = 0; k < n_bins; ++k) {
        double p = std::norm(spec[static_cast<size_t>(k)]) * scale;
        // One-sided density: interior bins carry the mirrored negative
        // frequencies; DC and Nyquist have none.
        if (k != 0 && !(segment_len % 2 == 0 && k == n_bins - 1)) p *= 2.0;
        out[k] += p;
      }
    }
    for (int64_t k = 0; k < n_bins; ++k) out[k] /= static_cast<double>(n_seg);
  }
  return psd;
}

std::vector<double> band_power(const PsdEstimate& psd, const Band& band) {
  if (psd.freqs.empty()) throw ParameterError("empty spectrum");
  if (!(band.lo_hz <= band.hi_hz)) throw ParameterError("band edges must satisfy lo <= hi");
  const double grid_lo = psd.freqs.front();
  const double grid_hi = psd.freqs.back();
  const double f1 = std::max(band.lo_hz, grid_lo);
  const double f2 = std::min(band.hi_hz, grid_hi);
  if (!(f1 <= f2)) throw ParameterError("band does not overlap the frequency grid");

  const auto interp = [&](const double* p, double f) {
    const auto it = std::upper_bound(psd.freqs.begin(), psd.freqs.end(), f);
    int64_t j = std::max<int64_t>(1, std::distance(psd.freqs.begin(), it));
    j = std::min<int64_t>(j, psd.bins() - 1);
    const double fa = psd.freqs[static_cast<size_t>(j - 1)];
    const double fb = psd.freqs[static_cast<size_t>(j)];
    const double u = (f - fa) / (fb - fa);
    return p[j - 1] + u * (p[j] - p[j - 1]);
  };

  std::vector<double> result(static_cast<size_t>(psd.channels), 0.0);
  for (int64_t c = 0; c < psd.channels; ++c) {
    const double* p = psd.power.data() + c * psd.bins();
    double prev_f = f1;
    double prev_p = interp(p, f1);
    double acc = 0.0;
    for (int64_t k = 0; k < psd.bins(); ++k) {
      const double fk = psd.freqs[static_cast<size_t>(k)];
      if (fk <= f1 || fk >= f2) continue;
      acc += 0.5 * (prev_p + p[k]) * (fk - prev_f);
      prev_f = fk;
      prev_p = p[k];
    }
    acc += 0.5 * (prev_p + interp(p, f2)) * (f2 - prev_f);
    result[static_cast<size_t>(c)] = acc;
  }
  return result;
}

double snr_db(const std::vector<double>& signal, const std::vector<double>& estimate) {
  if (signal.size() != estimate.size())
    throw DimensionError("signal and estimate lengths differ");
  if (signal.empty()) throw ParameterError("empty channel");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < signal.size(); ++i) {
    num += estimate[i] * estimate[i];
    const double r = signal[i] - estimate[i];
    den += r * r;
  }
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  if (num == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(num / den);
}

Recording threshold_channels(const Recording& rec, const Recording& estimates,
                             double theta_db) {
  rec.validate();
  estimates.validate();
  if (rec.channels() != estimates.channels() || rec.samples != estimates.samples)
    throw DimensionError("recording and estimates are not aligned");

  std::vector<int64_t> keep;
  for (int64_t c = 0; c < rec.channels(); ++c) {
    if (snr_db(rec.channel_vec(c), estimates.channel_vec(c)) >= theta_db) keep.push_back(c);
  }
  if (keep.empty()) throw DegenerateError("every channel fell below the quality threshold");

  Recording out;
  out.sample_rate_hz = rec.sample_rate_hz;
  out.samples = rec.samples;
  for (int64_t c : keep) {
    out.channel_names.push_back(rec.channel_names[static_cast<size_t>(c)]);
    out.data.insert(out.data.end(), rec.channel(c), rec.channel(c) + rec.samples);
  }
  return out;
}

std::vector<double> autocorrelation(const std::vector<double>& channel, int64_t max_lag) {
  const int64_t t = static_cast<int64_t>(channel.size());
  if (max_lag < 0) throw ParameterError("max_lag must be non-negative");
  if (max_lag >= t) throw ParameterError("max_lag must be smaller than the channel length");

  double mean = 0.0;
  for (double v : channel) mean += v;
  mean /= static_cast<double>(t);

  std::vector<double> acf(static_cast<size_t>(max_lag + 1), 0.0);
  for (int64_t k = 0; k <= max_lag; ++k) {
    double acc = 0.0;
    for (int64_t i = 0; i + k < t; ++i)
      acc += (channel[static_cast<size_t>(i)] - mean) *
             (channel[static_cast<size_t>(i + k)] - mean);
    acf[static_cast<size_t>(k)] = acc / static_cast<double>(t);
  }
  if (acf[0] == 0.0) throw DegenerateError("zero-variance channel has no autocorrelation");
  for (int64_t k = max_lag; k >= 0; --k) acf[static_cast<size_t>(k)] /= acf[0];
  return acf;
}

HjorthDescriptors hjorth(const std::vector<double>& channel) {
  if (channel.size() < 3) throw ParameterError("need at least 3 samples");
  const double var_x = population_variance(channel);
  if (var_x == 0.0) throw DegenerateError("constant channel has undefined mobility");
  const std::vector<double> d1 = first_difference(channel);
  const double var_d1 = population_variance(d1);
  if (var_d1 == 0.0) throw DegenerateError("linear channel has undefined complexity");
  const std::vector<double> d2 = first_difference(d1);
  const double var_d2 = population_variance(d2);

  HjorthDescriptors h;
  h.activity = var_x;
  h.mobility = std::sqrt(var_d1 / var_x);
  h.complexity = std::sqrt(var_d2 / var_d1) / h.mobility;
  return h;
}

std::vector<Recording> segment_windows(const Recording& rec, const WindowSpec& spec) {
  rec.validate();
  if (spec.length < 1) throw ParameterError("window length must be positive");
  if (!(spec.overlap >= 0.0) || !(spec.overlap < 1.0))
    throw ParameterError("window overlap must lie in [0, 1)");
  if (spec.length > rec.samples)
    throw ParameterError("window length exceeds the recording length");

  const int64_t stride =
      std::max<int64_t>(1, static_cast<int64_t>(std::floor(static_cast<double>(spec.length) *
                                                           (1.0 - spec.overlap))));
  std::vector<Recording> windows;
  for (int64_t start = 0; start + spec.length <= rec.samples; start += stride) {
    Recording w(rec.channel_names, rec.sample_rate_hz, spec.length);
    for (int64_t c = 0; c < rec.channels(); ++c) {
      const double* src = rec.channel(c) + start;
      std::copy(src, src + spec.length, w.channel(c));
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace neurodyn
