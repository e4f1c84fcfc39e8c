// Dense helpers for the small (dim <= 3) symmetric matrices carried by
// multivariate Gaussians: Jacobi eigendecomposition, PSD flooring, Cholesky.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ustream/common.hpp"

namespace ustream::linalg {

// Row-major d*d symmetric matrix. Eigenvectors are returned as columns of
// `vecs` (also row-major), eigenvalues unsorted.
inline void sym_eigen(int d, const std::vector<double>& m,
                      std::vector<double>& vals, std::vector<double>& vecs) {
  std::vector<double> a = m;
  vecs.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) vecs[static_cast<size_t>(i) * d + i] = 1.0;
  auto at = [&](std::vector<double>& mat, int r, int c) -> double& {
    return mat[static_cast<size_t>(r) * d + c];
  };
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += std::fabs(at(a, p, q));
    if (off < 1e-15) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(a, p, q);
        if (std::fabs(apq) < 1e-18) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = at(vecs, k, p), vkq = at(vecs, k, q);
          at(vecs, k, p) = c * vkp - s * vkq;
          at(vecs, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  vals.resize(d);
  for (int i = 0; i < d; ++i) vals[i] = a[static_cast<size_t>(i) * d + i];
}

// Rebuilds the matrix with eigenvalues clamped from below at `floor`.
inline std::vector<double> floor_psd(int d, const std::vector<double>& m, double floor) {
  std::vector<double> vals, vecs;
  sym_eigen(d, m, vals, vecs);
  std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k) {
    const double lam = vals[k] < floor ? floor : vals[k];
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<size_t>(i) * d + j] +=
            lam * vecs[static_cast<size_t>(i) * d + k] * vecs[static_cast<size_t>(j) * d + k];
  }
  // Exact symmetry after the rank-one accumulation.
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double v = 0.5 * (out[static_cast<size_t>(i) * d + j] + out[static_cast<size_t>(j) * d + i]);
      out[static_cast<size_t>(i) * d + j] = out[static_cast<size_t>(j) * d + i] = v;
    }
  return out;
}

// Lower-triangular Cholesky factor of a PSD matrix (diagonal floored first).
inline std::vector<double> cholesky(int d, const std::vector<double>& m, double floor) {
  std::vector<double> a = floor_psd(d, m, floor);
  std::vector<double> L(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double sum = a[static_cast<size_t>(i) * d + j];
      for (int k = 0; k < j; ++k)
        sum -= L[static_cast<size_t>(i) * d + k] * L[static_cast<size_t>(j) * d + k];
      if (i == j) {
        L[static_cast<size_t>(i) * d + j] = std::sqrt(sum > 0 ? sum : floor);
      } else {
        L[static_cast<size_t>(i) * d + j] = sum / L[static_cast<size_t>(j) * d + j];
      }
    }
  }
  return L;
}

}  // namespace ustream::linalg
