#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "urpca/nn.hpp"
#include "urpca/serialize.hpp"

namespace urpca {

struct ModelConfig {
  int64_t stages = 6;          // K
  int64_t channels = 32;       // C
  int64_t bem_mid_layers = 3;  // l_B
  int64_t tem_mid_layers = 6;  // l_T
  int64_t irm_mid_layers = 3;  // l_D

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Conv+BN+ReLU input and middle blocks with a bare conv head; the body of the
// background-estimation and reconstruction networks.
struct ConvBnStack {
  ConvLayerParams in;
  std::vector<ConvLayerParams> mid;
  ConvLayerParams out;
  std::vector<BatchNormParams> bn;  // aligned: bn[0] for in, bn[1+i] for mid[i]
};

// Same shape without batch norm; the target-extraction body.
struct ConvStack {
  ConvLayerParams in;
  std::vector<ConvLayerParams> mid;
  ConvLayerParams out;
};

struct StageParams {
  ConvBnStack bem;
  ConvStack tem;
  Tensor epsilon;  // learnable step scalar, shape {1}
  ConvBnStack irm;
};

// Per-stage intermediate maps, index k-1 for stage k.
struct DecompositionTrace {
  std::vector<Tensor> background;      // B^k
  std::vector<Tensor> target;          // T^k
  std::vector<Tensor> reconstruction;  // D^k
};

// B^k = E + F(E), E = D^{k-1} - T^{k-1}
Tensor bem_forward(const Tensor& d_prev, const Tensor& t_prev, ConvBnStack& bem, bool training);
// T^k = R - eps * G(R), R = T^{k-1} + D^{k-1} - B^k
Tensor tem_forward(const Tensor& d_prev, const Tensor& t_prev, const Tensor& b_k, ConvStack& tem,
                   const Tensor& epsilon);
// D^k = M(B^k + T^k)
Tensor irm_forward(const Tensor& b_k, const Tensor& t_k, ConvBnStack& irm, bool training);

// The unfolded decomposition network: K stages of BEM -> TEM -> IRM applied to
// a single-channel batch, starting from D^0 = X, T^0 = 0.
class RpcaNet {
 public:
  RpcaNet(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<StageParams>& stages() { return stages_; }

  struct Output {
    Tensor target;          // T^K, raw values (squashed only in loss/eval)
    Tensor reconstruction;  // D^K
  };
  Output forward(const Tensor& x, bool training = false, DecompositionTrace* trace = nullptr);

  // Trainable tensors in canonical order (stable across runs and restarts).
  std::vector<Tensor> parameters();
  NamedTensors named_parameters();
  NamedTensors named_buffers();  // batch-norm running statistics
  int64_t param_count();

  // Copies values into the existing tensors; every name must resolve and
  // shapes must agree.
  void load_state(const NamedTensors& params, const NamedTensors& buffers);

 private:
  ModelConfig config_;
  std::vector<StageParams> stages_;
};

}  // namespace urpca
