#include "agent.hpp"

#include <chrono>

namespace tf {

EpisodeRecord run_episode(Agent& agent, EnvInterface& env, const std::string& task_id,
                          uint64_t seed, ActionSelect select, const SuccessChecker& checker) {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<double> obs = env.reset(seed);
  PolicyState state = agent.initial_state();
  Rng rng(mix_seed(fnv1a64(task_id), seed, 0x616374696F6Eull));

  EpisodeRecord rec;
  rec.task_id = task_id;
  rec.seed = seed;
  rec.episode_id = derive_id(task_id, seed);
  rec.obs_dim = uint32_t(obs.size());

  uint64_t hard_cap = uint64_t(env.config().max_steps) * 16 + 1024;
  uint64_t steps = 0;
  while (true) {
    if (steps >= hard_cap)
      fail(Errc::env_failure, "episode for task " + task_id + " seed " + std::to_string(seed) +
                                  " never finished");
    PolicyOutput out = agent.step(obs, state);
    int action = select == ActionSelect::greedy ? argmax(out.logits)
                                                : sample_from_logits(out.logits, rng.uniform01());
    StepResult sr = env.step(action);
    rec.obs.insert(rec.obs.end(), obs.begin(), obs.end());
    rec.actions.push_back(action);
    rec.rewards.push_back(sr.reward);
    rec.total_return += sr.reward;
    state = out.next_state;
    ++steps;
    if (sr.done) {
      // terminal frame: final observation, repeated action, zero reward
      rec.obs.insert(rec.obs.end(), sr.obs.begin(), sr.obs.end());
      rec.actions.push_back(action);
      rec.rewards.push_back(0.0);
      break;
    }
    obs = std::move(sr.obs);
  }
  rec.length = steps + 1;
  rec.success = checker ? checker(rec) : false;
  rec.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace tf
