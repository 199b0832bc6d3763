#include "pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "env.hpp"
#include "episode.hpp"

using nlohmann::json;

namespace tf {

void TrainConfig::validate() const {
  if (batch_size < 1 || seq_len < 1 || total_steps < 1)
    fail(Errc::invalid_arg, "batch_size, seq_len and total_steps must be positive");
  if (base_lr <= 0) fail(Errc::invalid_arg, "base_lr must be positive");
  if (grad_clip_norm <= 0) fail(Errc::invalid_arg, "grad_clip_norm must be positive");
  if (warmup_steps > total_steps)
    fail(Errc::invalid_arg, "warmup_steps must not exceed total_steps");
  if (num_shards < 1 || shard_id >= num_shards)
    fail(Errc::invalid_arg, "bad shard configuration");
  if (hidden_dim < 1) fail(Errc::invalid_arg, "hidden_dim must be >= 1");
  if (checkpoint_every < 1) fail(Errc::invalid_arg, "checkpoint_every must be >= 1");
}

std::string TrainConfig::to_json() const {
  json j{{"batch_size", batch_size},
         {"seq_len", seq_len},
         {"total_steps", total_steps},
         {"base_lr", base_lr},
         {"warmup_steps", warmup_steps},
         {"grad_clip_norm", grad_clip_norm},
         {"seed", seed},
         {"num_shards", num_shards},
         {"shard_id", shard_id},
         {"checkpoint_every", checkpoint_every},
         {"hidden_dim", hidden_dim},
         {"checkpoint_dir", checkpoint_dir}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::parse, std::string("bad train config: ") + e.what());
  }
  if (j.count("batch_size")) cfg.batch_size = j["batch_size"].get<uint32_t>();
  if (j.count("seq_len")) cfg.seq_len = j["seq_len"].get<uint32_t>();
  if (j.count("total_steps")) cfg.total_steps = j["total_steps"].get<uint64_t>();
  if (j.count("base_lr")) cfg.base_lr = j["base_lr"].get<double>();
  if (j.count("warmup_steps")) cfg.warmup_steps = j["warmup_steps"].get<uint64_t>();
  if (j.count("grad_clip_norm")) cfg.grad_clip_norm = j["grad_clip_norm"].get<double>();
  if (j.count("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.count("num_shards")) cfg.num_shards = j["num_shards"].get<uint32_t>();
  if (j.count("shard_id")) cfg.shard_id = j["shard_id"].get<uint32_t>();
  if (j.count("checkpoint_every")) cfg.checkpoint_every = j["checkpoint_every"].get<uint64_t>();
  if (j.count("hidden_dim")) cfg.hidden_dim = j["hidden_dim"].get<uint32_t>();
  if (j.count("checkpoint_dir")) cfg.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
  return cfg;
}

uint64_t TrainConfig::config_hash() const { return fnv1a64(to_json()); }

double bc_loss(const std::vector<double>& logits, const std::vector<int>& targets,
               const std::vector<uint8_t>& mask, uint32_t num_actions) {
  if (targets.size() != mask.size() || logits.size() != targets.size() * num_actions)
    fail(Errc::invalid_arg, "bc_loss shapes disagree");
  size_t masked = 0;
  double sum = 0.0;
  std::vector<double> cell(num_actions);
  for (size_t i = 0; i < targets.size(); ++i) {
    if (!mask[i]) continue;
    ++masked;
    std::copy(logits.begin() + long(i * num_actions), logits.begin() + long((i + 1) * num_actions),
              cell.begin());
    std::vector<double> lp = log_softmax(cell);
    int target = targets[i];
    if (target < 0 || target >= int(num_actions))
      fail(Errc::invalid_arg, "target action " + std::to_string(target) + " out of range");
    sum -= lp[size_t(target)];
  }
  if (masked == 0) fail(Errc::empty, "bc_loss over an all-false mask is undefined");
  return sum / double(masked);
}

double BCObjective::eval(const SeqBatch& batch, const std::vector<double>& logits,
                         const std::vector<double>& values, std::vector<double>* dlogits,
                         std::vector<double>* dvalues) const {
  (void)values;
  (void)dvalues;
  if (batch.actions.size() != batch.mask.size())
    fail(Errc::invalid_arg, "batch is missing target actions");
  size_t masked = batch.masked_count();
  if (masked == 0) fail(Errc::empty, "bc objective over an all-false mask is undefined");

  uint32_t num_actions = uint32_t(logits.size() / batch.mask.size());
  double sum = 0.0;
  std::vector<double> cell(num_actions);
  for (size_t i = 0; i < batch.mask.size(); ++i) {
    if (!batch.mask[i]) continue;
    std::copy(logits.begin() + long(i * num_actions), logits.begin() + long((i + 1) * num_actions),
              cell.begin());
    std::vector<double> lp = log_softmax(cell);
    int target = batch.actions[i];
    if (target < 0 || target >= int(num_actions))
      fail(Errc::invalid_arg, "target action " + std::to_string(target) + " out of range");
    sum -= lp[size_t(target)];
    if (dlogits) {
      double inv = 1.0 / double(masked);
      for (uint32_t a = 0; a < num_actions; ++a) {
        double p = std::exp(lp[a]);
        (*dlogits)[i * num_actions + a] = (p - (int(a) == target ? 1.0 : 0.0)) * inv;
      }
    }
  }
  return sum / double(masked);
}

double lr_at(uint64_t step, const TrainConfig& config) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.base_lr;
  return config.base_lr * double(step) / double(config.warmup_steps);
}

SeqBatch seq_from_batch(const Batch& batch) {
  const BatchModality& obs = batch.modalities.at(Modality::observation);
  const BatchModality& act = batch.modalities.at(Modality::action);
  if (obs.frame_size % 8 != 0) fail(Errc::parse, "observation frames are not float64");
  if (act.frame_size != 1) fail(Errc::parse, "action frames must be one byte");

  SeqBatch seq;
  seq.lanes = batch.batch_size;
  seq.steps = batch.seq_len;
  seq.obs_dim = obs.frame_size / 8;
  seq.first = batch.first;
  seq.mask = batch.mask;
  seq.obs = decode_f64_frames(obs.data);
  seq.actions = decode_action_frames(act.data);
  return seq;
}

namespace {

std::string memory_to_hex(const std::vector<double>& memory) {
  std::vector<uint8_t> bytes(memory.size() * 8);
  for (size_t i = 0; i < memory.size(); ++i) put_f64be(bytes.data() + i * 8, memory[i]);
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::vector<double> memory_from_hex(const std::string& hex) {
  if (hex.size() % 16 != 0) fail(Errc::parse, "bad lane memory encoding");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    fail(Errc::parse, "bad hex digit in lane memory");
  };
  std::vector<uint8_t> bytes(hex.size() / 2);
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = uint8_t(nib(hex[2 * i]) << 4 | nib(hex[2 * i + 1]));
  std::vector<double> out(bytes.size() / 8);
  for (size_t i = 0; i < out.size(); ++i) out[i] = get_f64be(bytes.data() + i * 8);
  return out;
}

}  // namespace

void save_checkpoint(const TrainCheckpoint& ckpt, const std::string& policy_path,
                     const std::string& state_path) {
  save_policy(ckpt.params, policy_path);
  json lanes = json::array();
  for (const auto& s : ckpt.lane_states) lanes.push_back(memory_to_hex(s.memory));
  uint64_t loss_bits;
  std::memcpy(&loss_bits, &ckpt.loss_sum, 8);
  json j{{"format", "trajforge-train-state-v1"},
         {"step", ckpt.step},
         {"epoch", ckpt.epoch},
         {"epoch_step", ckpt.epoch_step},
         {"loss_count", ckpt.loss_count},
         {"loss_sum_bits", to_hex64(loss_bits)},
         {"lane_memory", lanes},
         {"config_hash", to_hex64(ckpt.config_hash)}};
  std::ofstream out(state_path, std::ios::trunc);
  out << j.dump(2) << "\n";
  out.flush();
  if (!out) fail(Errc::io, "cannot write checkpoint state " + state_path);
}

TrainCheckpoint load_checkpoint(const std::string& policy_path, const std::string& state_path) {
  TrainCheckpoint ckpt;
  ckpt.params = load_policy(policy_path);
  std::ifstream in(state_path);
  if (!in) fail(Errc::io, "cannot open checkpoint state " + state_path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(Errc::parse, std::string("bad checkpoint state: ") + e.what());
  }
  if (j.value("format", "") != "trajforge-train-state-v1")
    fail(Errc::parse, "unrecognized checkpoint state format");
  ckpt.step = j.at("step").get<uint64_t>();
  ckpt.epoch = j.at("epoch").get<uint64_t>();
  ckpt.epoch_step = j.at("epoch_step").get<uint64_t>();
  ckpt.loss_count = j.at("loss_count").get<uint64_t>();
  uint64_t bits = std::stoull(j.at("loss_sum_bits").get<std::string>(), nullptr, 16);
  std::memcpy(&ckpt.loss_sum, &bits, 8);
  for (const auto& lane : j.at("lane_memory"))
    ckpt.lane_states.push_back(PolicyState{memory_from_hex(lane.get<std::string>())});
  ckpt.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  return ckpt;
}

BCTrainer::BCTrainer(const Store& store, TrainConfig config,
                     std::optional<TrainCheckpoint> resume)
    : store_(store), config_(std::move(config)), params_(PolicyParams{}) {
  config_.validate();

  std::vector<EpisodeManifest> manifests = store_.manifests();
  if (manifests.empty()) fail(Errc::empty, "store has no episodes");
  uint32_t obs_dim = 0;
  for (const auto& m : manifests) {
    auto obs = m.modalities.find(Modality::observation);
    auto act = m.modalities.find(Modality::action);
    if (obs == m.modalities.end() || act == m.modalities.end())
      fail(Errc::not_found, "episode " + id_to_hex(m.id) +
                                " is missing observation or action modality");
    if (obs_dim == 0) obs_dim = obs->second.frame_size / 8;
    if (obs->second.frame_size != obs_dim * 8)
      fail(Errc::invalid_arg, "episodes disagree on observation dim");
  }

  if (resume) {
    if (resume->config_hash != config_.config_hash())
      fail(Errc::invalid_arg, "checkpoint was produced by a different config");
    params_ = std::move(resume->params);
    if (params_.dims.obs_dim != obs_dim)
      fail(Errc::invalid_arg, "checkpoint obs_dim does not match the store");
    step_ = resume->step;
    epoch_ = resume->epoch;
    epoch_step_ = resume->epoch_step;
    lane_states_ = resume->lane_states;
    loss_count_ = resume->loss_count;
    loss_sum_ = resume->loss_sum;
  } else {
    params_ = init_params(obs_dim, config_.hidden_dim, kNumActions, config_.seed);
    lane_states_.assign(config_.batch_size, PolicyState::zero(config_.hidden_dim));
  }
}

void BCTrainer::ensure_plan() {
  while (true) {
    if (!plan_) {
      plan_ = build_plan(store_.manifests(), config_.batch_size, config_.seq_len,
                         config_.num_shards, config_.shard_id,
                         mix_seed(config_.seed, epoch_, 0x65706F6368ull));
      if (epoch_step_ == 0)
        lane_states_.assign(config_.batch_size, PolicyState::zero(params_.dims.hidden));
    }
    if (epoch_step_ < plan_->steps_per_epoch()) return;
    // epoch rollover: fresh deal, fresh memories
    plan_.reset();
    epoch_ += 1;
    epoch_step_ = 0;
  }
}

StepComputation BCTrainer::compute_gradient() {
  if (finished()) fail(Errc::state, "training already finished");
  ensure_plan();
  std::optional<Batch> batch =
      next_batch(*plan_, epoch_step_, store_, {Modality::observation, Modality::action});
  if (!batch) fail(Errc::internal, "sampler exhausted before steps_per_epoch");

  SeqBatch seq = seq_from_batch(*batch);
  GradResult grad = grad_loss(params_, seq, lane_states_, BCObjective{});
  StepComputation out;
  out.loss = grad.loss;
  out.grads = std::move(grad.grads);
  out.masked = seq.masked_count();
  out.final_states = std::move(grad.outputs.final_states);
  return out;
}

void BCTrainer::apply_update(const PolicyParams& gradient, const StepComputation& computed) {
  PolicyParams update = gradient;
  double norm = update.global_norm();
  if (norm > config_.grad_clip_norm && norm > 0) update.scale(config_.grad_clip_norm / norm);
  params_.axpy(-lr_at(step_, config_), update);
  if (!params_.all_finite())
    fail(Errc::numeric, "parameters became non-finite at step " + std::to_string(step_));

  lane_states_ = computed.final_states;
  loss_sum_ += computed.loss;
  loss_count_ += 1;
  step_ += 1;
  epoch_step_ += 1;

  if (!config_.checkpoint_dir.empty() && step_ % config_.checkpoint_every == 0) {
    std::error_code ec;
    std::filesystem::create_directories(config_.checkpoint_dir, ec);
    if (ec) fail(Errc::io, "cannot create checkpoint dir " + config_.checkpoint_dir);
    std::string base = config_.checkpoint_dir + "/ckpt_" + std::to_string(step_);
    save_checkpoint(checkpoint(), base + ".policy", base + ".state");
  }
}

TrainCheckpoint BCTrainer::checkpoint() const {
  TrainCheckpoint ckpt;
  ckpt.params = params_;
  ckpt.step = step_;
  ckpt.epoch = epoch_;
  ckpt.epoch_step = epoch_step_;
  ckpt.lane_states = lane_states_;
  ckpt.loss_count = loss_count_;
  ckpt.loss_sum = loss_sum_;
  ckpt.config_hash = config_.config_hash();
  return ckpt;
}

TrainResult train_bc(const Store& store, const TrainConfig& config,
                     std::optional<TrainCheckpoint> resume) {
  BCTrainer trainer(store, config, std::move(resume));
  TrainResult result;
  while (!trainer.finished()) {
    uint64_t step = trainer.step();
    StepComputation c;
    try {
      c = trainer.compute_gradient();
      trainer.apply_update(c.grads, c);
    } catch (const Error& e) {
      if (e.code() == Errc::numeric) {
        fail(Errc::numeric, std::string(e.what()) + " at step " + std::to_string(step) +
                                "; aborting with the last checkpoint retained" +
                                (config.checkpoint_dir.empty() ? "" : " in " + config.checkpoint_dir));
      }
      throw;
    }
    result.loss_curve.emplace_back(step, c.loss);
  }
  result.params = trainer.params();
  log_info("train_bc finished after " + std::to_string(config.total_steps) + " steps, final loss " +
           format_double(result.loss_curve.empty() ? 0.0 : result.loss_curve.back().second));
  return result;
}

void write_loss_curve(const std::vector<std::pair<uint64_t, double>>& curve,
                      const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& [step, loss] : curve) out << step << " " << format_double(loss) << "\n";
  out.flush();
  if (!out) fail(Errc::io, "cannot write loss curve " + path);
}

}  // namespace tf
