#pragma once

#include "urpca/tensor.hpp"

namespace urpca {

// 1 - mean over batch of (I + s)/(U + s) with I, U the per-image soft
// intersection/union of sigmoid(logits) against the binary mask; s = 1
// keeps empty masks finite.
Tensor soft_iou_loss(const Tensor& logits, const Tensor& mask);

// Mean over batch of per-image squared Frobenius distance / pixels-per-image.
Tensor fidelity_loss(const Tensor& d_k, const Tensor& d);

struct LossParts {
  Tensor total;  // seg + tau * fid
  Tensor seg;
  Tensor fid;
};

LossParts total_loss(const Tensor& logits, const Tensor& mask, const Tensor& d_k, const Tensor& d,
                     double tau);

}  // namespace urpca
