#pragma once

#include <functional>
#include <memory>
#include <string>

#include "env.hpp"
#include "episode.hpp"
#include "policy.hpp"

namespace tf {

// Minimal policy interface the rollout and benchmark machinery run against:
// anything with an initial state and a step function slots in.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual PolicyState initial_state() const = 0;
  virtual PolicyOutput step(const std::vector<double>& obs, const PolicyState& state) = 0;
  virtual int num_actions() const = 0;
};

using AgentPtr = std::unique_ptr<Agent>;

enum class ActionSelect { greedy, sample };

class PolicyAgent : public Agent {
 public:
  explicit PolicyAgent(PolicyParams params) : params_(std::move(params)) {}
  PolicyState initial_state() const override {
    return PolicyState::zero(params_.dims.hidden);
  }
  PolicyOutput step(const std::vector<double>& obs, const PolicyState& state) override {
    return policy_step(params_, obs, state);
  }
  int num_actions() const override { return int(params_.dims.num_actions); }
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
};

// uniform logits; with sampled selection this is a uniform-random walker
class RandomAgent : public Agent {
 public:
  explicit RandomAgent(int num_actions) : num_actions_(num_actions) {}
  PolicyState initial_state() const override { return PolicyState::zero(1); }
  PolicyOutput step(const std::vector<double>&, const PolicyState&) override {
    PolicyOutput out;
    out.logits.assign(size_t(num_actions_), 0.0);
    out.value = 0.0;
    out.next_state = PolicyState::zero(1);
    return out;
  }
  int num_actions() const override { return num_actions_; }

 private:
  int num_actions_;
};

using SuccessChecker = std::function<bool(const EpisodeRecord&)>;

// Runs one seeded episode to completion. Greedy selection takes the argmax
// action; sampled selection draws from the softmax with a deterministic
// stream derived from (task_id, seed). Success comes from `checker` over the
// finished record (never-set when checker is empty).
EpisodeRecord run_episode(Agent& agent, EnvInterface& env, const std::string& task_id,
                          uint64_t seed, ActionSelect select, const SuccessChecker& checker);

}  // namespace tf
