#include "neurodyn/linalg.hpp"

#include <cmath>

#include "neurodyn/errors.hpp"

namespace neurodyn {

void qr_decompose(const std::vector<double>& a, int n, std::vector<double>& q,
                  std::vector<double>& r) {
  r = a;
  q.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) q[static_cast<size_t>(i) * n + i] = 1.0;

  std::vector<double> v(static_cast<size_t>(n));
  for (int k = 0; k < n - 1; ++k) {
    double norm = 0.0;
    for (int i = k; i < n; ++i) norm += r[static_cast<size_t>(i) * n + k] * r[static_cast<size_t>(i) * n + k];
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    double akk = r[static_cast<size_t>(k) * n + k];
    double alpha = akk > 0.0 ? -norm : norm;
    double vnorm2 = norm * norm - 2.0 * alpha * akk + alpha * alpha;
    if (vnorm2 == 0.0) continue;
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i < k ? 0.0 : r[static_cast<size_t>(i) * n + k];
    v[static_cast<size_t>(k)] -= alpha;
    // R <- (I - 2 v v^T / v^T v) R ; Q <- Q (I - 2 v v^T / v^T v)
    for (int j = k; j < n; ++j) {
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += v[static_cast<size_t>(i)] * r[static_cast<size_t>(i) * n + j];
      double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) r[static_cast<size_t>(i) * n + j] -= f * v[static_cast<size_t>(i)];
    }
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = k; j < n; ++j) dot += q[static_cast<size_t>(i) * n + j] * v[static_cast<size_t>(j)];
      double f = 2.0 * dot / vnorm2;
      for (int j = k; j < n; ++j) q[static_cast<size_t>(i) * n + j] -= f * v[static_cast<size_t>(j)];
    }
  }
  // Flip signs so diag(R) >= 0 (Q column / R row pairs).
  for (int k = 0; k < n; ++k) {
    if (r[static_cast<size_t>(k) * n + k] < 0.0) {
      for (int j = 0; j < n; ++j) r[static_cast<size_t>(k) * n + j] = -r[static_cast<size_t>(k) * n + j];
      for (int i = 0; i < n; ++i) q[static_cast<size_t>(i) * n + k] = -q[static_cast<size_t>(i) * n + k];
    }
  }
}

std::vector<double> cholesky_solve(std::vector<double> a, int n, std::vector<double> b) {
  // In-place lower Cholesky.
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) d -= a[static_cast<size_t>(j) * n + k] * a[static_cast<size_t>(j) * n + k];
    if (d <= 0.0) throw DegenerateError("cholesky_solve: matrix not positive definite");
    double l = std::sqrt(d);
    a[static_cast<size_t>(j) * n + j] = l;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<size_t>(i) * n + j];
      for (int k = 0; k < j; ++k) s -= a[static_cast<size_t>(i) * n + k] * a[static_cast<size_t>(j) * n + k];
      a[static_cast<size_t>(i) * n + j] = s / l;
    }
  }
  // Forward then back substitution.
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<size_t>(i)];
    for (int k = 0; k < i; ++k) s -= a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k)];
    b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<size_t>(i)];
    for (int k = i + 1; k < n; ++k) s -= a[static_cast<size_t>(k) * n + i] * b[static_cast<size_t>(k)];
    b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i) * n + i];
  }
  return b;
}

void matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n,
               std::vector<double>& out) {
  out.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double av = a[static_cast<size_t>(i) * n + k];
      if (av == 0.0) continue;
      const double* brow = &b[static_cast<size_t>(k) * n];
      double* orow = &out[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
}

}  // namespace neurodyn
