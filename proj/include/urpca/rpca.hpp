#pragma once

#include "urpca/matrix.hpp"

namespace urpca {

// Elementwise sign(x) * max(|x| - tau, 0): the l1 proximal operator.
Matrix soft_threshold(const Matrix& x, double tau);

// Soft-thresholds the singular values (nuclear-norm proximal operator).
Matrix svt(const Matrix& x, double tau);

struct PcpSettings {
  double lambda = 0.0;  // 0 -> 1/sqrt(max(m,n))
  double mu0 = 0.0;     // 0 -> 1.25 / ||D||_2
  double rho = 1.5;     // penalty growth per iteration
  double tol = 1e-7;    // on ||D-B-T||_F / ||D||_F
  int max_iters = 500;
};

struct PcpResult {
  Matrix background;  // low-rank component B
  Matrix target;      // sparse component T
  int iters = 0;
  bool converged = false;
};

// Principal component pursuit via the inexact augmented-Lagrangian method:
// alternates svt / soft_threshold updates with a growing penalty.
PcpResult pcp_decompose(const Matrix& d, PcpSettings settings = {});

struct PatchConfig {
  int patch_size = 50;
  int slide_step = 10;
};

// Sliding-window patches vectorized as columns (final window clamped to the
// border so the image is fully covered).
Matrix patch_construct(const Matrix& image, const PatchConfig& cfg);

// Uniform average of overlapping contributions; exact inverse of
// patch_construct when the patch image is untouched.
Matrix patch_reconstruct(const Matrix& patch_image, const PatchConfig& cfg, int rows, int cols);

// White top-hat: image minus its opening by a (2r+1)-square structuring
// element; enhances structures smaller than the element.
Matrix tophat_detect(const Matrix& image, int se_radius);

}  // namespace urpca
