#pragma once

#include "urpca/rng.hpp"
#include "urpca/tensor.hpp"

namespace urpca {

// 3x3 / stride 1 / pad 1 convolution layer (the only kind the network uses).
struct ConvLayerParams {
  Tensor weight;  // (out_channels, in_channels, 3, 3)
  Tensor bias;    // (out_channels)

  int64_t out_channels() const { return weight.dim(0); }
  int64_t in_channels() const { return weight.dim(1); }
};

// Kaiming fan-in init: weight ~ N(0, 2/fan_in), bias zero.
ConvLayerParams make_conv(int64_t in_channels, int64_t out_channels, Rng& rng);

// Cross-correlation with zero padding 1, stride 1: (N,Cin,H,W) -> (N,Cout,H,W).
Tensor conv2d(const Tensor& input, const ConvLayerParams& params);

struct BatchNormParams {
  Tensor gamma;         // (C), learnable
  Tensor beta;          // (C), learnable
  Tensor running_mean;  // (C), buffer
  Tensor running_var;   // (C), buffer
  double momentum = 0.9;   // running <- momentum*running + (1-momentum)*batch
  double epsilon = 1e-5;
};

BatchNormParams make_batch_norm(int64_t channels);

// Training mode normalizes by per-channel batch statistics (biased variance)
// and updates the running buffers; inference mode reads the buffers only.
Tensor batch_norm(const Tensor& input, BatchNormParams& params, bool training);

}  // namespace urpca
