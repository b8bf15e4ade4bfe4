#include "urpca/model.hpp"

#include <map>

namespace urpca {

namespace {

constexpr double kEpsilonInit = 0.01;

ConvBnStack make_conv_bn_stack(int64_t channels, int64_t mid_layers, Rng& rng) {
  ConvBnStack s;
  s.in = make_conv(1, channels, rng);
  s.bn.push_back(make_batch_norm(channels));
  for (int64_t i = 0; i < mid_layers; ++i) {
    s.mid.push_back(make_conv(channels, channels, rng));
    s.bn.push_back(make_batch_norm(channels));
  }
  s.out = make_conv(channels, 1, rng);
  return s;
}

ConvStack make_conv_stack(int64_t channels, int64_t mid_layers, Rng& rng) {
  ConvStack s;
  s.in = make_conv(1, channels, rng);
  for (int64_t i = 0; i < mid_layers; ++i) s.mid.push_back(make_conv(channels, channels, rng));
  s.out = make_conv(channels, 1, rng);
  return s;
}

Tensor run_stack(const Tensor& x, ConvBnStack& s, bool training) {
  Tensor h = relu(batch_norm(conv2d(x, s.in), s.bn[0], training));
  for (size_t i = 0; i < s.mid.size(); ++i)
    h = relu(batch_norm(conv2d(h, s.mid[i]), s.bn[i + 1], training));
  return conv2d(h, s.out);
}

Tensor run_stack(const Tensor& x, ConvStack& s) {
  Tensor h = relu(conv2d(x, s.in));
  for (auto& layer : s.mid) h = relu(conv2d(h, layer));
  return conv2d(h, s.out);
}

void check_single_channel(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1)
    throw ShapeError("model: input must be (N,1,H,W), got " + shape_str(x.shape()));
}

struct StateCollector {
  NamedTensors params;
  NamedTensors buffers;

  void conv(const std::string& prefix, ConvLayerParams& c) {
    params.emplace_back(prefix + ".weight", c.weight);
    params.emplace_back(prefix + ".bias", c.bias);
  }
  void bn(const std::string& prefix, BatchNormParams& b) {
    params.emplace_back(prefix + ".gamma", b.gamma);
    params.emplace_back(prefix + ".beta", b.beta);
    buffers.emplace_back(prefix + ".running_mean", b.running_mean);
    buffers.emplace_back(prefix + ".running_var", b.running_var);
  }
  // Mid layers are 1-based like the stages: stage1.bem.mid1 ... midL.
  void stack(const std::string& prefix, ConvBnStack& s) {
    conv(prefix + ".in.conv", s.in);
    bn(prefix + ".in.bn", s.bn[0]);
    for (size_t i = 0; i < s.mid.size(); ++i) {
      conv(prefix + ".mid" + std::to_string(i + 1) + ".conv", s.mid[i]);
      bn(prefix + ".mid" + std::to_string(i + 1) + ".bn", s.bn[i + 1]);
    }
    conv(prefix + ".out.conv", s.out);
  }
  void stack(const std::string& prefix, ConvStack& s) {
    conv(prefix + ".in.conv", s.in);
    for (size_t i = 0; i < s.mid.size(); ++i)
      conv(prefix + ".mid" + std::to_string(i + 1) + ".conv", s.mid[i]);
    conv(prefix + ".out.conv", s.out);
  }
};

// Single walk defining the canonical state order for parameters(),
// named_parameters(), named_buffers() and checkpoints alike.
StateCollector collect_state(std::vector<StageParams>& stages) {
  StateCollector c;
  for (size_t k = 0; k < stages.size(); ++k) {
    const std::string p = "stage" + std::to_string(k + 1);
    c.stack(p + ".bem", stages[k].bem);
    c.stack(p + ".tem", stages[k].tem);
    c.params.emplace_back(p + ".epsilon", stages[k].epsilon);
    c.stack(p + ".irm", stages[k].irm);
  }
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  if (stages < 1 || channels < 1 || bem_mid_layers < 1 || tem_mid_layers < 1 || irm_mid_layers < 1)
    throw ConfigError("ModelConfig: all architecture counts must be >= 1");
}

Tensor bem_forward(const Tensor& d_prev, const Tensor& t_prev, ConvBnStack& bem, bool training) {
  if (d_prev.shape() != t_prev.shape())
    throw ShapeError("bem_forward: D and T shapes differ: " + shape_str(d_prev.shape()) + " vs " +
                     shape_str(t_prev.shape()));
  Tensor e = sub(d_prev, t_prev);
  return add(e, run_stack(e, bem, training));
}

Tensor tem_forward(const Tensor& d_prev, const Tensor& t_prev, const Tensor& b_k, ConvStack& tem,
                   const Tensor& epsilon) {
  if (d_prev.shape() != t_prev.shape() || d_prev.shape() != b_k.shape())
    throw ShapeError("tem_forward: input shapes differ");
  Tensor r = add(t_prev, sub(d_prev, b_k));
  return sub(r, scale(run_stack(r, tem), epsilon));
}

Tensor irm_forward(const Tensor& b_k, const Tensor& t_k, ConvBnStack& irm, bool training) {
  if (b_k.shape() != t_k.shape()) throw ShapeError("irm_forward: input shapes differ");
  return run_stack(add(b_k, t_k), irm, training);
}

RpcaNet::RpcaNet(ModelConfig config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  stages_.reserve(config_.stages);
  for (int64_t k = 0; k < config_.stages; ++k) {
    StageParams s;
    s.bem = make_conv_bn_stack(config_.channels, config_.bem_mid_layers, rng);
    s.tem = make_conv_stack(config_.channels, config_.tem_mid_layers, rng);
    s.epsilon = Tensor::full({1}, kEpsilonInit, /*requires_grad=*/true);
    s.irm = make_conv_bn_stack(config_.channels, config_.irm_mid_layers, rng);
    stages_.push_back(std::move(s));
  }
}

RpcaNet::Output RpcaNet::forward(const Tensor& x, bool training, DecompositionTrace* trace) {
  check_single_channel(x);
  if (trace) *trace = DecompositionTrace{};
  Tensor d = x;
  Tensor t = Tensor::zeros(x.shape());
  for (auto& stage : stages_) {
    Tensor b = bem_forward(d, t, stage.bem, training);
    Tensor t_next = tem_forward(d, t, b, stage.tem, stage.epsilon);
    Tensor d_next = irm_forward(b, t_next, stage.irm, training);
    t = t_next;
    d = d_next;
    if (trace) {
      trace->background.push_back(b);
      trace->target.push_back(t);
      trace->reconstruction.push_back(d);
    }
  }
  return Output{t, d};
}

std::vector<Tensor> RpcaNet::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : collect_state(stages_).params) out.push_back(t);
  return out;
}

NamedTensors RpcaNet::named_parameters() {
  return collect_state(stages_).params;
}

NamedTensors RpcaNet::named_buffers() {
  return collect_state(stages_).buffers;
}

int64_t RpcaNet::param_count() {
  int64_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

void RpcaNet::load_state(const NamedTensors& params, const NamedTensors& buffers) {
  StateCollector own = collect_state(stages_);
  auto apply = [](NamedTensors& dst, const NamedTensors& src, const char* kind) {
    std::map<std::string, Tensor> index;
    for (auto& [name, t] : dst) index.emplace(name, t);
    if (src.size() != dst.size())
      throw ConfigError(std::string("load_state: expected ") + std::to_string(dst.size()) + " " +
                        kind + " entries, got " + std::to_string(src.size()));
    for (const auto& [name, t] : src) {
      auto it = index.find(name);
      if (it == index.end()) throw ConfigError("load_state: unknown entry " + name);
      Tensor target = it->second;
      if (target.shape() != t.shape())
        throw ShapeError("load_state: shape mismatch for " + name + ": " +
                         shape_str(target.shape()) + " vs " + shape_str(t.shape()));
      std::copy(t.data().begin(), t.data().end(), target.data().begin());
    }
  };
  apply(own.params, params, "parameter");
  apply(own.buffers, buffers, "buffer");
}

}  // namespace urpca
