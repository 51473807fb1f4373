#pragma once

#include <complex>
#include <vector>

namespace neurodyn {

// DFT of a real signal, non-negative frequencies only (n/2 + 1 bins for even
// n).  Radix-2 when n is a power of two, direct evaluation otherwise.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

}  // namespace neurodyn
