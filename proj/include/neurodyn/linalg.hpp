#pragma once

#include <vector>

namespace neurodyn {

// Small dense helpers on row-major buffers; all dims are caller-checked.

// QR of a square n x n matrix via Householder reflections; the signs are
// fixed so every diagonal entry of R is non-negative.
void qr_decompose(const std::vector<double>& a, int n, std::vector<double>& q,
                  std::vector<double>& r);

// Solves (SPD) A x = b in place via Cholesky; throws DegenerateError if A is
// not positive definite.
std::vector<double> cholesky_solve(std::vector<double> a, int n, std::vector<double> b);

void matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n,
               std::vector<double>& out);

}  // namespace neurodyn
