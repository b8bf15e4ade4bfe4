#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "urpca/dataset.hpp"
#include "urpca/loss.hpp"
#include "urpca/model.hpp"
#include "urpca/optim.hpp"

namespace urpca {

struct TrainConfig {
  int64_t epochs = 400;
  int64_t batch_size = 8;
  double base_lr = 1e-4;   // poly-decayed per iteration, power 0.9
  double tau = 0.01;       // fidelity-term weight
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = off

  void validate() const;
};

struct IterRecord {
  int64_t epoch = 0;  // 1-based
  int64_t iter = 0;   // 1-based global iteration
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_seg = 0.0;
  double loss_fid = 0.0;
};

// Everything a resumable run owns. The optimizer aliases the model's
// parameter tensors.
struct TrainSession {
  RpcaNet model;
  Adam optimizer;
  Rng rng;
  int64_t global_step = 0;

  TrainSession(const ModelConfig& config, uint64_t seed);
};

// Runs until cfg.epochs total epochs have been seen (a resumed session skips
// the epochs its global_step already covers). One record per iteration; the
// learning rate follows poly_lr over epochs * ceil(n/batch) total iterations.
// Aborts with diagnostics if the loss leaves the finite range.
std::vector<IterRecord> train(TrainSession& session, const std::vector<DatasetSample>& data,
                              const TrainConfig& cfg,
                              const std::filesystem::path& checkpoint_dir = {},
                              std::ostream* log = nullptr);

// Checkpoint: model config + parameters + buffers, Adam state, RNG state and
// the global step; loading restores a bit-identical session.
void save_checkpoint(const std::filesystem::path& path, TrainSession& session);
TrainSession load_checkpoint(const std::filesystem::path& path);
// Rejects a checkpoint whose stored config differs from `expected`.
TrainSession load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// CSV: epoch,iter,lr,loss_total,loss_seg,loss_fid
void write_history_csv(const std::filesystem::path& path, const std::vector<IterRecord>& history);

}  // namespace urpca
