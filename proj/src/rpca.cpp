#include "urpca/rpca.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace urpca {

Matrix tensor_to_matrix(const Tensor& t) {
  size_t lead = 0;
  if (t.rank() >= 2) lead = t.rank() - 2;
  for (size_t i = 0; i < lead; ++i)
    if (t.dim(i) != 1)
      throw ShapeError("tensor_to_matrix: leading dims must be 1, got " + shape_str(t.shape()));
  if (t.rank() < 2) throw ShapeError("tensor_to_matrix: need at least 2 dims");
  const int64_t h = t.dim(lead), w = t.dim(lead + 1);
  Matrix m(h, w);
  const auto v = t.data();
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) m(i, j) = v[i * w + j];
  return m;
}

Tensor matrix_to_tensor(const Matrix& m) {
  Tensor t = Tensor::zeros({1, m.rows(), m.cols()});
  auto v = t.data();
  for (int64_t i = 0; i < m.rows(); ++i)
    for (int64_t j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  return t;
}

Matrix soft_threshold(const Matrix& x, double tau) {
  if (tau < 0) throw ConfigError("soft_threshold: negative threshold");
  return x.unaryExpr([tau](double v) {
    if (v > tau) return v - tau;
    if (v < -tau) return v + tau;
    return 0.0;
  });
}

Matrix svt(const Matrix& x, double tau) {
  if (tau < 0) throw ConfigError("svt: negative threshold");
  if (!x.allFinite()) throw NumericError("svt: non-finite input");
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericError("svt: SVD failed on " + std::to_string(x.rows()) + "x" +
                       std::to_string(x.cols()) + " matrix");
  Eigen::VectorXd sv = svd.singularValues();
  for (int i = 0; i < sv.size(); ++i) sv[i] = std::max(sv[i] - tau, 0.0);
  return svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
}

PcpResult pcp_decompose(const Matrix& d, PcpSettings s) {
  if (!d.allFinite()) throw NumericError("pcp_decompose: non-finite input");
  if (s.rho <= 1.0) throw ConfigError("pcp_decompose: rho must exceed 1");
  if (s.tol <= 0.0 || s.max_iters < 1) throw ConfigError("pcp_decompose: invalid tol/max_iters");

  PcpResult r;
  r.background = Matrix::Zero(d.rows(), d.cols());
  r.target = Matrix::Zero(d.rows(), d.cols());
  const double norm_d = d.norm();
  if (norm_d == 0.0) {
    r.converged = true;
    return r;
  }

  const double lambda =
      s.lambda > 0 ? s.lambda : 1.0 / std::sqrt(static_cast<double>(std::max(d.rows(), d.cols())));
  Eigen::BDCSVD<Matrix> svd0(d);
  const double spectral = svd0.singularValues()[0];
  double mu = s.mu0 > 0 ? s.mu0 : 1.25 / spectral;
  const double mu_max = mu * 1e7;

  // Dual ascent starts from the scaled data matrix (the usual inexact-ALM
  // warm start): Y = D / max(||D||_2, ||D||_inf / lambda).
  Matrix y = d / std::max(spectral, d.cwiseAbs().maxCoeff() / lambda);

  for (int iter = 1; iter <= s.max_iters; ++iter) {
    r.background = svt(d - r.target + y / mu, 1.0 / mu);
    r.target = soft_threshold(d - r.background + y / mu, lambda / mu);
    Matrix z = d - r.background - r.target;
    y += mu * z;
    r.iters = iter;
    if (z.norm() / norm_d <= s.tol) {
      r.converged = true;
      break;
    }
    mu = std::min(mu * s.rho, mu_max);
  }
  return r;
}

namespace {

std::vector<int> window_starts(int dim, int patch, int step) {
  std::vector<int> pos;
  for (int p = 0;; p += step) {
    if (p + patch >= dim) {
      pos.push_back(dim - patch);
      break;
    }
    pos.push_back(p);
  }
  return pos;
}

void check_patch_config(const Matrix& image, const PatchConfig& cfg) {
  const int min_dim = static_cast<int>(std::min(image.rows(), image.cols()));
  if (cfg.slide_step < 1 || cfg.patch_size < cfg.slide_step)
    throw ConfigError("patch config: need 1 <= slide_step <= patch_size");
  if (cfg.patch_size > min_dim)
    throw ConfigError("patch config: patch size " + std::to_string(cfg.patch_size) +
                      " exceeds image dimension " + std::to_string(min_dim));
}

}  // namespace

Matrix patch_construct(const Matrix& image, const PatchConfig& cfg) {
  check_patch_config(image, cfg);
  const int p = cfg.patch_size;
  const auto rows = window_starts(static_cast<int>(image.rows()), p, cfg.slide_step);
  const auto cols = window_starts(static_cast<int>(image.cols()), p, cfg.slide_step);
  Matrix out(p * p, rows.size() * cols.size());
  int col = 0;
  for (int r0 : rows)
    for (int c0 : cols) {
      for (int j = 0; j < p; ++j)
        for (int i = 0; i < p; ++i) out(j * p + i, col) = image(r0 + i, c0 + j);
      ++col;
    }
  return out;
}

Matrix patch_reconstruct(const Matrix& patch_image, const PatchConfig& cfg, int rows, int cols) {
  if (cfg.slide_step < 1 || cfg.patch_size < cfg.slide_step)
    throw ConfigError("patch config: need 1 <= slide_step <= patch_size");
  if (cfg.patch_size > std::min(rows, cols))
    throw ConfigError("patch config: patch size " + std::to_string(cfg.patch_size) +
                      " exceeds image dimension " + std::to_string(std::min(rows, cols)));
  const int p = cfg.patch_size;
  const auto rpos = window_starts(rows, p, cfg.slide_step);
  const auto cpos = window_starts(cols, p, cfg.slide_step);
  if (patch_image.rows() != p * p ||
      patch_image.cols() != static_cast<int64_t>(rpos.size() * cpos.size()))
    throw ShapeError("patch_reconstruct: patch image does not match config and target dims");

  // Average as first + mean(delta) so that agreeing contributions reproduce
  // their value exactly (deltas cancel to 0.0 bit-for-bit).
  Matrix base(rows, cols);
  Matrix delta = Matrix::Zero(rows, cols);
  Eigen::MatrixXi count = Eigen::MatrixXi::Zero(rows, cols);
  int col = 0;
  for (int r0 : rpos)
    for (int c0 : cpos) {
      for (int j = 0; j < p; ++j)
        for (int i = 0; i < p; ++i) {
          const double v = patch_image(j * p + i, col);
          const int r = r0 + i, c = c0 + j;
          if (count(r, c) == 0)
            base(r, c) = v;
          else
            delta(r, c) += v - base(r, c);
          ++count(r, c);
        }
      ++col;
    }
  Matrix out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = base(r, c) + delta(r, c) / count(r, c);
  return out;
}

namespace {

enum class MorphOp { erode, dilate };

Matrix morph(const Matrix& image, int r, MorphOp op) {
  const int64_t h = image.rows(), w = image.cols();
  Matrix out(h, w);
  for (int64_t i = 0; i < h; ++i) {
    const int64_t i0 = std::max<int64_t>(0, i - r), i1 = std::min(h - 1, i + r);
    for (int64_t j = 0; j < w; ++j) {
      const int64_t j0 = std::max<int64_t>(0, j - r), j1 = std::min(w - 1, j + r);
      double v = image(i0, j0);
      for (int64_t a = i0; a <= i1; ++a)
        for (int64_t b = j0; b <= j1; ++b)
          v = op == MorphOp::erode ? std::min(v, image(a, b)) : std::max(v, image(a, b));
      out(i, j) = v;
    }
  }
  return out;
}

}  // namespace

Matrix tophat_detect(const Matrix& image, int se_radius) {
  if (se_radius < 1) throw ConfigError("tophat_detect: structuring-element radius must be >= 1");
  return image - morph(morph(image, se_radius, MorphOp::erode), se_radius, MorphOp::dilate);
}

}  // namespace urpca
