#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neurodyn/errors.hpp"

namespace neurodyn {

// Multichannel uniformly-sampled time series. Storage is channel-major:
// channel c occupies data[c * samples .. (c + 1) * samples).
struct Recording {
  std::vector<std::string> channel_names;
  double sample_rate_hz = 1.0;
  int64_t samples = 0;
  std::vector<double> data;
  // Indices of channels a processing step found degenerate (e.g. constant
  // channels zeroed by normalization). Carried as metadata, never fatal.
  std::vector<int64_t> flagged_channels;

  Recording() = default;
  Recording(std::vector<std::string> names, double rate, int64_t t)
      : channel_names(std::move(names)),
        sample_rate_hz(rate),
        samples(t),
        data(channel_names.size() * static_cast<size_t>(t), 0.0) {}

  int64_t channels() const { return static_cast<int64_t>(channel_names.size()); }

  double* channel(int64_t c) { return data.data() + c * samples; }
  const double* channel(int64_t c) const { return data.data() + c * samples; }

  double& at(int64_t c, int64_t t) { return data[static_cast<size_t>(c * samples + t)]; }
  double at(int64_t c, int64_t t) const { return data[static_cast<size_t>(c * samples + t)]; }

  std::vector<double> channel_vec(int64_t c) const {
    return std::vector<double>(channel(c), channel(c) + samples);
  }

  void validate() const {
    if (data.size() != channel_names.size() * static_cast<size_t>(samples))
      throw ContractError("recording data size does not match channels x samples");
    if (!(sample_rate_hz > 0.0)) throw ContractError("recording sample rate must be positive");
  }
};

struct Band {
  double lo_hz = 0.0;
  double hi_hz = 0.0;
};

struct WindowSpec {
  int64_t length = 0;
  double overlap = 0.0;  // fraction in [0, 1)
};

// One-sided power spectral density, density scaling (power per Hz).
struct PsdEstimate {
  std::vector<double> freqs;   // F ascending, uniform grid
  std::vector<double> power;   // channels x F, row-major
  int64_t channels = 0;
  int64_t segment_len = 0;
  double overlap = 0.0;

  int64_t bins() const { return static_cast<int64_t>(freqs.size()); }
  double at(int64_t c, int64_t f) const { return power[static_cast<size_t>(c * bins() + f)]; }
};

struct HjorthDescriptors {
  double activity = 0.0;
  double mobility = 0.0;
  double complexity = 0.0;
};

}  // namespace neurodyn
