#include "urpca/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

namespace urpca {

namespace {

constexpr uint32_t kCheckpointMagic = 0x504B4355;  // "UCKP" little-endian
constexpr uint32_t kCheckpointVersion = 1;

Tensor stack_samples(const std::vector<DatasetSample>& data, const std::vector<size_t>& order,
                     size_t begin, size_t end, bool masks) {
  const Tensor& first = masks ? data[order[begin]].mask : data[order[begin]].image;
  const int64_t h = first.dim(1), w = first.dim(2);
  Tensor out = Tensor::zeros({static_cast<int64_t>(end - begin), 1, h, w});
  auto dst = out.data();
  for (size_t i = begin; i < end; ++i) {
    const Tensor& t = masks ? data[order[i]].mask : data[order[i]].image;
    if (t.dim(1) != h || t.dim(2) != w)
      throw ShapeError("train: samples disagree in size: " + shape_str(t.shape()) + " vs (1," +
                       std::to_string(h) + "," + std::to_string(w) + ")");
    std::memcpy(dst.data() + (i - begin) * h * w, t.data().data(), sizeof(double) * h * w);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("TrainConfig: negative epoch count");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (base_lr <= 0) throw ConfigError("TrainConfig: base_lr must be positive");
  if (tau < 0) throw ConfigError("TrainConfig: tau must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("TrainConfig: negative checkpoint interval");
}

TrainSession::TrainSession(const ModelConfig& config, uint64_t seed)
    : model(config, seed), optimizer(model.parameters()), rng(seed) {}

std::vector<IterRecord> train(TrainSession& session, const std::vector<DatasetSample>& data,
                              const TrainConfig& cfg, const std::filesystem::path& checkpoint_dir,
                              std::ostream* log) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");

  const int64_t n = static_cast<int64_t>(data.size());
  const int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_iters = cfg.epochs * batches_per_epoch;
  const int64_t epochs_done = batches_per_epoch > 0 ? session.global_step / batches_per_epoch : 0;

  std::vector<IterRecord> history;
  std::vector<size_t> order(n);

  for (int64_t epoch = epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    // Rebuilt from identity so the epoch's permutation depends only on the
    // RNG state entering it; a resumed run then replays the same batches.
    for (int64_t i = 0; i < n; ++i) order[i] = static_cast<size_t>(i);
    session.rng.shuffle(order);
    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      const size_t begin = static_cast<size_t>(b * cfg.batch_size);
      const size_t end = std::min<size_t>(begin + cfg.batch_size, order.size());
      Tensor x = stack_samples(data, order, begin, end, /*masks=*/false);
      Tensor y = stack_samples(data, order, begin, end, /*masks=*/true);

      const double lr = poly_lr(cfg.base_lr, session.global_step, total_iters);
      RpcaNet::Output out = session.model.forward(x, /*training=*/true);
      LossParts parts = total_loss(out.target, y, out.reconstruction, x, cfg.tau);

      const double lt = parts.total.item(), ls = parts.seg.item(), lf = parts.fid.item();
      if (!std::isfinite(lt))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + " (seg=" + fmt_double(ls) +
                           ", fid=" + fmt_double(lf) + ")");

      parts.total.backward();
      session.optimizer.step(lr);
      ++session.global_step;
      history.push_back({epoch, session.global_step, lr, lt, ls, lf});
    }
    if (log)
      (*log) << "epoch " << epoch << "/" << cfg.epochs << " loss " << history.back().loss_total
             << " lr " << history.back().lr << "\n";
    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
      save_checkpoint(checkpoint_dir / ("checkpoint_ep" + std::to_string(epoch) + ".uckp"),
                      session);
  }
  return history;
}

void save_checkpoint(const std::filesystem::path& path, TrainSession& session) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());

  write_u32(os, kCheckpointMagic);
  write_u32(os, kCheckpointVersion);
  const ModelConfig& mc = session.model.config();
  write_u64(os, static_cast<uint64_t>(mc.stages));
  write_u64(os, static_cast<uint64_t>(mc.channels));
  write_u64(os, static_cast<uint64_t>(mc.bem_mid_layers));
  write_u64(os, static_cast<uint64_t>(mc.tem_mid_layers));
  write_u64(os, static_cast<uint64_t>(mc.irm_mid_layers));
  write_u64(os, static_cast<uint64_t>(session.global_step));
  write_u64(os, static_cast<uint64_t>(session.optimizer.step_count()));
  write_string(os, session.rng.save_state());

  write_named_tensors(os, session.model.named_parameters());
  write_named_tensors(os, session.model.named_buffers());

  write_u64(os, session.optimizer.size());
  for (size_t i = 0; i < session.optimizer.size(); ++i) {
    const auto& m = session.optimizer.first_moment(i);
    const auto& v = session.optimizer.second_moment(i);
    write_tensor(os, Tensor::from_data({static_cast<int64_t>(m.size())},
                                       std::vector<double>(m.begin(), m.end())));
    write_tensor(os, Tensor::from_data({static_cast<int64_t>(v.size())},
                                       std::vector<double>(v.begin(), v.end())));
  }
  if (!os) throw IoError("save_checkpoint: write failed on " + path.string());
}

TrainSession load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());

  if (read_u32(is) != kCheckpointMagic)
    throw IoError("load_checkpoint: " + path.string() + " is not a checkpoint");
  const uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported version " + std::to_string(version));

  ModelConfig mc;
  mc.stages = static_cast<int64_t>(read_u64(is));
  mc.channels = static_cast<int64_t>(read_u64(is));
  mc.bem_mid_layers = static_cast<int64_t>(read_u64(is));
  mc.tem_mid_layers = static_cast<int64_t>(read_u64(is));
  mc.irm_mid_layers = static_cast<int64_t>(read_u64(is));
  const int64_t global_step = static_cast<int64_t>(read_u64(is));
  const int64_t adam_steps = static_cast<int64_t>(read_u64(is));
  const std::string rng_state = read_string(is);

  NamedTensors params = read_named_tensors(is);
  NamedTensors buffers = read_named_tensors(is);

  TrainSession session(mc, /*seed=*/0);
  session.model.load_state(params, buffers);
  session.global_step = global_step;
  session.optimizer.set_step_count(adam_steps);
  session.rng.load_state(rng_state);

  const uint64_t n_moments = read_u64(is);
  if (n_moments != session.optimizer.size())
    throw IoError("load_checkpoint: optimizer holds " + std::to_string(session.optimizer.size()) +
                  " parameters but file stores " + std::to_string(n_moments));
  for (uint64_t i = 0; i < n_moments; ++i) {
    Tensor m = read_tensor(is);
    Tensor v = read_tensor(is);
    auto& mi = session.optimizer.first_moment(i);
    auto& vi = session.optimizer.second_moment(i);
    if (static_cast<size_t>(m.numel()) != mi.size() || static_cast<size_t>(v.numel()) != vi.size())
      throw IoError("load_checkpoint: moment size mismatch at parameter " + std::to_string(i));
    std::copy(m.data().begin(), m.data().end(), mi.begin());
    std::copy(v.data().begin(), v.data().end(), vi.begin());
  }
  return session;
}

TrainSession load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  TrainSession session = load_checkpoint(path);
  if (!(session.model.config() == expected))
    throw ConfigError("load_checkpoint: model config in " + path.string() +
                      " does not match the requested configuration");
  return session;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<IterRecord>& history) {
  std::ofstream os(path);
  if (!os) throw IoError("write_history_csv: cannot open " + path.string());
  os << "epoch,iter,lr,loss_total,loss_seg,loss_fid\n";
  for (const IterRecord& r : history)
    os << r.epoch << ',' << r.iter << ',' << fmt_double(r.lr) << ',' << fmt_double(r.loss_total)
       << ',' << fmt_double(r.loss_seg) << ',' << fmt_double(r.loss_fid) << "\n";
  if (!os) throw IoError("write_history_csv: write failed on " + path.string());
}

}  // namespace urpca
