#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <utility>

#include "timepfn/common.hpp"
#include "timepfn/kernels.hpp"
#include "timepfn/rng.hpp"

namespace timepfn {

// Zero-mean GP realization together with how it was produced.
template <typename Scalar>
struct LatentDraw {
  Vector<Scalar> values;
  KernelExpr kernel;
  Scalar jitter_used = 0;
};

// Lower Cholesky factor of K + jitter*I, where jitter walks the ladder
// {0, 1e-8, 1e-7, ..., 1e-2} x mean(diag(K)) until factorization succeeds.
// Rank-deficient PSD kernels (Constant, Linear) land on a small positive
// rung; genuinely indefinite input exhausts the ladder.
template <typename Scalar>
std::pair<Matrix<Scalar>, Scalar> cholesky_with_jitter(const Matrix<Scalar>& K) {
  const Index n = K.rows();
  if (n != K.cols())
    throw ShapeMismatch("cholesky_with_jitter: matrix is " +
                        std::to_string(n) + "x" + std::to_string(K.cols()));
  if (!K.allFinite())
    throw NonFiniteParameter("cholesky_with_jitter: non-finite input");

  const Scalar mean_diag = K.diagonal().mean();
  const Scalar scale = mean_diag > Scalar(0) ? mean_diag : Scalar(1);

  Matrix<Scalar> work(n, n);
  for (int level = -1; level <= 6; ++level) {
    const Scalar jitter =
        level < 0 ? Scalar(0) : scale * Scalar(std::pow(10.0, level - 8));
    work = K;
    work.diagonal().array() += jitter;
    Eigen::LLT<Matrix<Scalar>> llt(work);
    if (llt.info() == Eigen::Success) {
      Matrix<Scalar> L = llt.matrixL();
      if (L.allFinite()) return {std::move(L), jitter};
    }
  }
  throw FactorizationFailed(
      "cholesky_with_jitter: factorization failed at maximum jitter (malformed kernel)");
}

// Grid for a length-T series: integer indices 0..T-1 normalized onto [0,1],
// which keeps the bank's lengthscale and period ranges scale-free.
template <typename Scalar>
Vector<Scalar> normalized_grid(Index length) {
  Vector<Scalar> grid(length);
  const Scalar denom = length > 1 ? Scalar(length - 1) : Scalar(1);
  for (Index i = 0; i < length; ++i) grid[i] = Scalar(i) / denom;
  return grid;
}

// Draws l(t) = L.z with z ~ N(0, I), so cov(l) = K + jitter*I.
template <typename Scalar>
LatentDraw<Scalar> sample_latent(const KernelExpr& expr, Index length,
                                 RngStream& rng) {
  if (length < 2) throw Error("sample_latent: length must be >= 2");
  const Vector<Scalar> grid = normalized_grid<Scalar>(length);
  const Matrix<Scalar> K = evaluate_kernel<Scalar>(expr, grid);
  auto [L, jitter] = cholesky_with_jitter<Scalar>(K);
  Vector<Scalar> z(length);
  for (Index i = 0; i < length; ++i) z[i] = static_cast<Scalar>(rng.normal());
  LatentDraw<Scalar> draw;
  draw.values = L.template triangularView<Eigen::Lower>() * z;
  draw.kernel = expr;
  draw.jitter_used = jitter;
  if (!draw.values.allFinite())
    throw NonFiniteParameter("sample_latent: non-finite draw");
  return draw;
}

}  // namespace timepfn
