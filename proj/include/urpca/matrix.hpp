#pragma once

#include <Eigen/Dense>

#include "urpca/tensor.hpp"

namespace urpca {

using Matrix = Eigen::MatrixXd;

// Accepts (H,W), (1,H,W) or (1,1,H,W); trailing two dims become the matrix.
Matrix tensor_to_matrix(const Tensor& t);

// -> (1,H,W), the dataset-sample layout.
Tensor matrix_to_tensor(const Matrix& m);

}  // namespace urpca
