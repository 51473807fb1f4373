#include "neurodyn/fft.hpp"

#include <cmath>

#include "neurodyn/errors.hpp"

namespace neurodyn {

namespace {

constexpr double kPi = 3.14159265358979323846;

void fft_inplace(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  size_t n = x.size();
  if (n == 0) throw ParameterError("rfft: empty input");
  size_t bins = n / 2 + 1;
  if ((n & (n - 1)) == 0 && n > 1) {
    std::vector<std::complex<double>> a(n);
    for (size_t i = 0; i < n; ++i) a[i] = x[i];
    fft_inplace(a);
    a.resize(bins);
    return a;
  }
  std::vector<std::complex<double>> out(bins);
  for (size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (size_t t = 0; t < n; ++t) {
      double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(t) /
                   static_cast<double>(n);
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    out[k] = {re, im};
  }
  return out;
}

}  // namespace neurodyn
