#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "env.hpp"
#include "policy.hpp"

namespace tf {

enum class KlDirection {
  forward,  // KL(pi_theta || pi_anchor), mode-seeking toward the anchor
  reverse,  // KL(pi_anchor || pi_theta)
};

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double kl_coef = 0.2;  // rho
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  uint32_t fragment_len = 64;
  uint32_t num_envs = 4;
  uint32_t epochs_per_update = 2;
  uint32_t minibatch_count = 2;
  double lr = 5e-3;
  double grad_clip_norm = 1.0;
  uint64_t total_env_steps = 100000;
  uint64_t seed = 0;
  KlDirection kl_direction = KlDirection::forward;
  bool kl_in_reward = false;  // apply the anchor KL as a per-step reward penalty instead
  uint32_t max_consecutive_env_failures = 10;
  std::string metrics_path;  // empty disables the metrics log

  // optional periodic evaluation + early stop
  uint64_t eval_every_env_steps = 0;  // 0 disables
  double stop_at_eval_score = -1.0;   // stop once eval_fn >= this (if >= 0)

  void validate() const;
  std::string to_json() const;
  static PPOConfig from_json(const std::string& text);
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
// A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
// returns = A + values
GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<uint8_t>& dones, double bootstrap_value, double gamma,
                      double lambda);

struct PPOLossComponents {
  double total = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
};

// loss = -mean[min(r A, clip(r, 1-eps, 1+eps) A)] + c_v mean[(V - ret)^2]
//        - c_e mean[entropy] + rho mean[KL(pi_theta, pi_anchor)]
// over N positions; `new_logits` and `anchor_logits` are N x num_actions.
PPOLossComponents ppo_kl_loss(const std::vector<double>& new_logits,
                              const std::vector<int>& actions,
                              const std::vector<double>& old_logps,
                              const std::vector<double>& advantages,
                              const std::vector<double>& returns,
                              const std::vector<double>& values,
                              const std::vector<double>& anchor_logits, uint32_t num_actions,
                              const PPOConfig& cfg);

// The same loss as a sequence objective for grad_loss; reads actions,
// old_logp, advantages, returns and anchor_logp from the SeqBatch.
class PPOObjective : public Objective {
 public:
  explicit PPOObjective(const PPOConfig& cfg) : cfg_(cfg) {}
  double eval(const SeqBatch& batch, const std::vector<double>& logits,
              const std::vector<double>& values, std::vector<double>* dlogits,
              std::vector<double>* dvalues) const override;
  const PPOLossComponents& last_components() const { return last_; }

 private:
  const PPOConfig& cfg_;
  mutable PPOLossComponents last_;
};

// One fragment of experience across all envs, lane-major. PolicyStates at
// fragment start are kept so updates can re-evaluate the sequences; the
// states at fragment end seed the next fragment (memory never lost at
// fragment boundaries).
struct RolloutBuffer {
  uint32_t num_envs = 0;
  uint32_t fragment_len = 0;
  uint32_t obs_dim = 0;
  uint32_t num_actions = 0;
  std::vector<double> obs;          // envs * len * obs_dim
  std::vector<uint8_t> first;       // envs * len
  std::vector<int> actions;         // envs * len
  std::vector<double> logps;        // envs * len (behavior log-prob of action)
  std::vector<double> rewards;      // envs * len
  std::vector<double> values;       // envs * len
  std::vector<uint8_t> dones;       // envs * len
  std::vector<double> anchor_logp;  // envs * len * num_actions
  std::vector<PolicyState> initial_states;  // per env, at fragment start
  std::vector<double> bootstrap_values;     // per env, at fragment end

  size_t at(uint32_t env, uint32_t t) const { return size_t(env) * fragment_len + t; }
};

struct UpdateMetrics {
  uint64_t env_steps = 0;
  uint64_t updates = 0;
  double mean_return = 0.0;   // over recent finished episodes
  double success_rate = 0.0;  // env-reported goal completion, recent episodes
  PPOLossComponents loss;
  double lr = 0.0;
  uint64_t episodes = 0;
  uint64_t env_errors = 0;
  std::optional<double> eval_score;
};

struct PPOResult {
  PolicyParams params;
  std::vector<UpdateMetrics> metrics;
  uint64_t env_steps = 0;
};

using EnvFactory = std::function<std::unique_ptr<EnvInterface>(uint32_t env_index)>;
using EvalFn = std::function<double(const PolicyParams&)>;

// KL-constrained PPO with per-env memory carry. Env step/reset errors reset
// the env and continue (logged); more than max_consecutive_env_failures
// failed resets in a row abort the run.
PPOResult train_ppo(const EnvFactory& env_factory, const PolicyParams& init_params,
                    const PolicyParams& anchor_params, const PPOConfig& cfg,
                    const EvalFn& eval_fn = {});

}  // namespace tf
