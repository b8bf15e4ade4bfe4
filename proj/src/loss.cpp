#include "urpca/loss.hpp"

namespace urpca {

namespace {

constexpr double kSmooth = 1.0;

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (a.rank() < 1 || a.dim(0) < 1) throw ShapeError(std::string(op) + ": empty batch");
}

}  // namespace

Tensor soft_iou_loss(const Tensor& logits, const Tensor& mask) {
  check_pair(logits, mask, "soft_iou_loss");
  Tensor p = sigmoid(logits);
  Tensor inter = sum_per_image(mul(p, mask));
  Tensor uni = sub(add(sum_per_image(p), sum_per_image(mask)), inter);
  Tensor ratio = div(add_scalar(inter, kSmooth), add_scalar(uni, kSmooth));
  return sub(Tensor::scalar(1.0), mean(ratio));
}

Tensor fidelity_loss(const Tensor& d_k, const Tensor& d) {
  check_pair(d_k, d, "fidelity_loss");
  Tensor diff = sub(d_k, d);
  const double pixels = static_cast<double>(d.numel() / d.dim(0));
  return mul_scalar(mean(sum_per_image(mul(diff, diff))), 1.0 / pixels);
}

LossParts total_loss(const Tensor& logits, const Tensor& mask, const Tensor& d_k, const Tensor& d,
                     double tau) {
  if (tau < 0) throw ConfigError("total_loss: tau must be non-negative");
  LossParts parts;
  parts.seg = soft_iou_loss(logits, mask);
  parts.fid = fidelity_loss(d_k, d);
  parts.total = add(parts.seg, mul_scalar(parts.fid, tau));
  return parts;
}

}  // namespace urpca
