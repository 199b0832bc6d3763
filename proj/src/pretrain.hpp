#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "policy.hpp"
#include "sampler.hpp"

namespace tf {

struct TrainConfig {
  uint32_t batch_size = 8;
  uint32_t seq_len = 16;
  uint64_t total_steps = 1000;
  double base_lr = 1e-2;
  uint64_t warmup_steps = 100;  // linear 0 -> base_lr, then constant
  double grad_clip_norm = 1.0;
  uint64_t seed = 0;
  uint32_t num_shards = 1;
  uint32_t shard_id = 0;
  uint64_t checkpoint_every = 500;
  uint32_t hidden_dim = 64;
  std::string checkpoint_dir;  // empty disables checkpoints

  void validate() const;
  uint64_t config_hash() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// mean over masked positions of softmax cross-entropy against target actions
double bc_loss(const std::vector<double>& logits, const std::vector<int>& targets,
               const std::vector<uint8_t>& mask, uint32_t num_actions);

class BCObjective : public Objective {
 public:
  double eval(const SeqBatch& batch, const std::vector<double>& logits,
              const std::vector<double>& values, std::vector<double>* dlogits,
              std::vector<double>* dvalues) const override;
};

// linear warmup then constant; non-decreasing in step
double lr_at(uint64_t step, const TrainConfig& config);

// decodes a sampler batch (observation + action modalities) into a training
// window
SeqBatch seq_from_batch(const Batch& batch);

struct TrainCheckpoint {
  PolicyParams params;
  uint64_t step = 0;
  uint64_t epoch = 0;
  uint64_t epoch_step = 0;
  std::vector<PolicyState> lane_states;
  uint64_t loss_count = 0;
  double loss_sum = 0.0;
  uint64_t config_hash = 0;
};

void save_checkpoint(const TrainCheckpoint& ckpt, const std::string& policy_path,
                     const std::string& state_path);
TrainCheckpoint load_checkpoint(const std::string& policy_path, const std::string& state_path);

struct StepComputation {
  double loss = 0.0;
  PolicyParams grads;  // mean gradient over this shard's masked positions
  size_t masked = 0;
  std::vector<PolicyState> final_states;
};

// Stateful single-shard trainer. train_bc drives it; the compute/apply split
// lets a multi-shard caller exchange summed gradients between the two.
class BCTrainer {
 public:
  BCTrainer(const Store& store, TrainConfig config,
            std::optional<TrainCheckpoint> resume = std::nullopt);

  bool finished() const { return step_ >= config_.total_steps; }
  uint64_t step() const { return step_; }
  const PolicyParams& params() const { return params_; }
  PolicyDims dims() const { return params_.dims; }

  StepComputation compute_gradient();
  // applies one SGD step with warmup + global-norm clipping, advances the
  // cursor and memory carry, and writes a checkpoint when due
  void apply_update(const PolicyParams& gradient, const StepComputation& computed);

  TrainCheckpoint checkpoint() const;

 private:
  void ensure_plan();

  const Store& store_;
  TrainConfig config_;
  PolicyParams params_;
  uint64_t step_ = 0;
  uint64_t epoch_ = 0;
  uint64_t epoch_step_ = 0;
  std::optional<SamplerPlan> plan_;
  std::vector<PolicyState> lane_states_;
  uint64_t loss_count_ = 0;
  double loss_sum_ = 0.0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<std::pair<uint64_t, double>> loss_curve;
};

// Deterministic offline behavior cloning over the episode-continuous
// sampler. Resuming from a checkpoint reproduces the uncheckpointed run's
// loss sequence exactly.
TrainResult train_bc(const Store& store, const TrainConfig& config,
                     std::optional<TrainCheckpoint> resume = std::nullopt);

void write_loss_curve(const std::vector<std::pair<uint64_t, double>>& curve,
                      const std::string& path);

}  // namespace tf
