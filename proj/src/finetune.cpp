#include "finetune.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

using nlohmann::json;

namespace tf {

void PPOConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail(Errc::invalid_arg, "gamma must be in [0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    fail(Errc::invalid_arg, "gae_lambda must be in [0,1]");
  if (!(clip_eps > 0.0)) fail(Errc::invalid_arg, "clip_eps must be positive");
  if (!(kl_coef >= 0.0)) fail(Errc::invalid_arg, "kl_coef must be >= 0");
  if (fragment_len < 1 || num_envs < 1 || epochs_per_update < 1 || minibatch_count < 1)
    fail(Errc::invalid_arg, "fragment/env/epoch/minibatch counts must be positive");
  if (lr <= 0 || grad_clip_norm <= 0) fail(Errc::invalid_arg, "lr and grad_clip_norm must be positive");
  if (total_env_steps < 1) fail(Errc::invalid_arg, "total_env_steps must be positive");
}

std::string PPOConfig::to_json() const {
  json j{{"gamma", gamma},
         {"gae_lambda", gae_lambda},
         {"clip_eps", clip_eps},
         {"kl_coef", kl_coef},
         {"value_coef", value_coef},
         {"entropy_coef", entropy_coef},
         {"fragment_len", fragment_len},
         {"num_envs", num_envs},
         {"epochs_per_update", epochs_per_update},
         {"minibatch_count", minibatch_count},
         {"lr", lr},
         {"grad_clip_norm", grad_clip_norm},
         {"total_env_steps", total_env_steps},
         {"seed", seed},
         {"kl_direction", kl_direction == KlDirection::forward ? "forward" : "reverse"},
         {"kl_in_reward", kl_in_reward},
         {"eval_every_env_steps", eval_every_env_steps},
         {"stop_at_eval_score", stop_at_eval_score},
         {"metrics_path", metrics_path}};
  return j.dump();
}

PPOConfig PPOConfig::from_json(const std::string& text) {
  PPOConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::parse, std::string("bad ppo config: ") + e.what());
  }
  if (j.count("gamma")) cfg.gamma = j["gamma"].get<double>();
  if (j.count("gae_lambda")) cfg.gae_lambda = j["gae_lambda"].get<double>();
  if (j.count("clip_eps")) cfg.clip_eps = j["clip_eps"].get<double>();
  if (j.count("kl_coef")) cfg.kl_coef = j["kl_coef"].get<double>();
  if (j.count("value_coef")) cfg.value_coef = j["value_coef"].get<double>();
  if (j.count("entropy_coef")) cfg.entropy_coef = j["entropy_coef"].get<double>();
  if (j.count("fragment_len")) cfg.fragment_len = j["fragment_len"].get<uint32_t>();
  if (j.count("num_envs")) cfg.num_envs = j["num_envs"].get<uint32_t>();
  if (j.count("epochs_per_update")) cfg.epochs_per_update = j["epochs_per_update"].get<uint32_t>();
  if (j.count("minibatch_count")) cfg.minibatch_count = j["minibatch_count"].get<uint32_t>();
  if (j.count("lr")) cfg.lr = j["lr"].get<double>();
  if (j.count("grad_clip_norm")) cfg.grad_clip_norm = j["grad_clip_norm"].get<double>();
  if (j.count("total_env_steps")) cfg.total_env_steps = j["total_env_steps"].get<uint64_t>();
  if (j.count("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.count("kl_direction")) {
    std::string d = j["kl_direction"].get<std::string>();
    if (d == "forward") cfg.kl_direction = KlDirection::forward;
    else if (d == "reverse") cfg.kl_direction = KlDirection::reverse;
    else fail(Errc::parse, "kl_direction must be 'forward' or 'reverse'");
  }
  if (j.count("kl_in_reward")) cfg.kl_in_reward = j["kl_in_reward"].get<bool>();
  if (j.count("eval_every_env_steps"))
    cfg.eval_every_env_steps = j["eval_every_env_steps"].get<uint64_t>();
  if (j.count("stop_at_eval_score")) cfg.stop_at_eval_score = j["stop_at_eval_score"].get<double>();
  if (j.count("metrics_path")) cfg.metrics_path = j["metrics_path"].get<std::string>();
  return cfg;
}

GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                      const std::vector<uint8_t>& dones, double bootstrap_value, double gamma,
                      double lambda) {
  size_t n = rewards.size();
  if (n < 1) fail(Errc::invalid_arg, "compute_gae needs at least one step");
  if (values.size() != n || dones.size() != n)
    fail(Errc::invalid_arg, "compute_gae input lengths disagree");
  auto check = [](double v) {
    if (!std::isfinite(v)) fail(Errc::numeric, "non-finite input to compute_gae");
  };
  for (double v : rewards) check(v);
  for (double v : values) check(v);
  check(bootstrap_value);

  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (size_t i = n; i-- > 0;) {
    double nonterminal = dones[i] ? 0.0 : 1.0;
    double next_value = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = out.advantages[i] + values[i];
  }
  return out;
}

namespace {

// per-position loss and (optionally) output gradients, scaled by inv_m
void ppo_position(const double* logits, int action, double old_logp, double advantage,
                  double ret, double value, const double* anchor_lp, uint32_t num_actions,
                  const PPOConfig& cfg, double inv_m, PPOLossComponents& acc, double* dlogits,
                  double* dvalue) {
  std::vector<double> cell(logits, logits + num_actions);
  std::vector<double> lp = log_softmax(cell);
  if (action < 0 || action >= int(num_actions))
    fail(Errc::invalid_arg, "action " + std::to_string(action) + " out of range");

  double logp_a = lp[size_t(action)];
  double ratio = std::exp(logp_a - old_logp);
  double unclipped = ratio * advantage;
  double ratio_clamped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  double clipped = ratio_clamped * advantage;
  bool use_unclipped = unclipped <= clipped;
  double surrogate = -std::min(unclipped, clipped);

  double verr = value - ret;
  double value_term = verr * verr;

  double entropy = 0.0;
  for (uint32_t a = 0; a < num_actions; ++a) entropy -= std::exp(lp[a]) * lp[a];

  double kl = 0.0;
  if (cfg.kl_direction == KlDirection::forward) {
    for (uint32_t a = 0; a < num_actions; ++a) kl += std::exp(lp[a]) * (lp[a] - anchor_lp[a]);
  } else {
    for (uint32_t a = 0; a < num_actions; ++a) kl += std::exp(anchor_lp[a]) * (anchor_lp[a] - lp[a]);
  }

  double kl_weight = cfg.kl_in_reward ? 0.0 : cfg.kl_coef;
  acc.surrogate += surrogate * inv_m;
  acc.value_loss += value_term * inv_m;
  acc.entropy += entropy * inv_m;
  acc.kl += kl * inv_m;
  acc.clip_fraction += (use_unclipped ? 0.0 : 1.0) * inv_m;
  acc.total += (surrogate + cfg.value_coef * value_term - cfg.entropy_coef * entropy +
                kl_weight * kl) *
               inv_m;

  if (!dlogits) return;

  // d(surrogate)/d(logp_a): the active min branch; the clamp saturates to zero
  double dsur_dlogp;
  if (use_unclipped) {
    dsur_dlogp = -ratio * advantage;
  } else {
    bool inside = ratio > 1.0 - cfg.clip_eps && ratio < 1.0 + cfg.clip_eps;
    dsur_dlogp = inside ? -ratio * advantage : 0.0;
  }
  for (uint32_t a = 0; a < num_actions; ++a) {
    double p = std::exp(lp[a]);
    double onehot = (int(a) == action) ? 1.0 : 0.0;
    double g = dsur_dlogp * (onehot - p);
    // entropy: dH/dl_a = -p (lp + H); loss holds -c_e H
    g -= cfg.entropy_coef * (-p * (lp[a] + entropy));
    if (kl_weight > 0.0) {
      if (cfg.kl_direction == KlDirection::forward) {
        g += kl_weight * p * ((lp[a] - anchor_lp[a]) - kl);
      } else {
        g += kl_weight * (p - std::exp(anchor_lp[a]));
      }
    }
    dlogits[a] = g * inv_m;
  }
  *dvalue = cfg.value_coef * 2.0 * verr * inv_m;
}

}  // namespace

PPOLossComponents ppo_kl_loss(const std::vector<double>& new_logits,
                              const std::vector<int>& actions,
                              const std::vector<double>& old_logps,
                              const std::vector<double>& advantages,
                              const std::vector<double>& returns,
                              const std::vector<double>& values,
                              const std::vector<double>& anchor_logits, uint32_t num_actions,
                              const PPOConfig& cfg) {
  size_t n = actions.size();
  if (n == 0) fail(Errc::empty, "ppo_kl_loss over zero positions");
  if (new_logits.size() != n * num_actions || anchor_logits.size() != n * num_actions ||
      old_logps.size() != n || advantages.size() != n || returns.size() != n ||
      values.size() != n)
    fail(Errc::invalid_arg, "ppo_kl_loss shapes disagree");

  PPOLossComponents acc;
  double inv_m = 1.0 / double(n);
  std::vector<double> anchor_lp(num_actions);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> anchor_cell(anchor_logits.begin() + long(i * num_actions),
                                    anchor_logits.begin() + long((i + 1) * num_actions));
    std::vector<double> alp = log_softmax(anchor_cell);
    ppo_position(new_logits.data() + i * num_actions, actions[i], old_logps[i], advantages[i],
                 returns[i], values[i], alp.data(), num_actions, cfg, inv_m, acc, nullptr,
                 nullptr);
  }
  if (!std::isfinite(acc.total)) fail(Errc::numeric, "non-finite ppo loss");
  return acc;
}

double PPOObjective::eval(const SeqBatch& batch, const std::vector<double>& logits,
                          const std::vector<double>& values, std::vector<double>* dlogits,
                          std::vector<double>* dvalues) const {
  size_t cells = batch.mask.size();
  uint32_t num_actions = uint32_t(logits.size() / cells);
  if (batch.actions.size() != cells || batch.old_logp.size() != cells ||
      batch.advantages.size() != cells || batch.returns.size() != cells ||
      batch.anchor_logp.size() != cells * num_actions)
    fail(Errc::invalid_arg, "ppo objective: batch is missing rollout fields");

  size_t masked = batch.masked_count();
  if (masked == 0) fail(Errc::empty, "ppo objective over an all-false mask");
  double inv_m = 1.0 / double(masked);

  last_ = PPOLossComponents{};
  for (size_t i = 0; i < cells; ++i) {
    if (!batch.mask[i]) continue;
    ppo_position(logits.data() + i * num_actions, batch.actions[i], batch.old_logp[i],
                 batch.advantages[i], batch.returns[i], values[i],
                 batch.anchor_logp.data() + i * num_actions, num_actions, cfg_, inv_m, last_,
                 dlogits ? dlogits->data() + i * num_actions : nullptr,
                 dvalues ? dvalues->data() + i : nullptr);
  }
  return last_.total;
}

namespace {

struct EnvSlot {
  std::unique_ptr<EnvInterface> env;
  std::vector<double> obs;
  PolicyState mem{{}};
  PolicyState anchor_mem{{}};
  bool first = true;
  Rng action_rng{0};
  uint64_t episode_counter = 0;
  double episode_return = 0.0;
  uint64_t episode_len = 0;

  // per-fragment outputs, merged deterministically after joining
  std::vector<std::pair<double, bool>> finished;  // (return, goal reached)
  uint64_t env_errors = 0;
};

bool info_flag(const Info& info, const char* key) {
  auto it = info.find(key);
  if (it == info.end()) return false;
  if (const double* v = std::get_if<double>(&it->second)) return *v != 0.0;
  return false;
}

void reset_slot(EnvSlot& slot, uint32_t env_index, const PPOConfig& cfg, uint32_t hidden,
                uint32_t anchor_hidden) {
  uint32_t failures = 0;
  while (true) {
    uint64_t seed = mix_seed(cfg.seed, env_index, slot.episode_counter);
    slot.episode_counter += 1;
    try {
      slot.obs = slot.env->reset(seed);
      break;
    } catch (const std::exception& e) {
      failures += 1;
      log_warn("env " + std::to_string(env_index) + " reset failed (" + e.what() + ")");
      if (failures >= cfg.max_consecutive_env_failures)
        fail(Errc::env_failure, "env " + std::to_string(env_index) + " failed " +
                                    std::to_string(failures) + " consecutive resets");
    }
  }
  slot.mem = PolicyState::zero(hidden);
  slot.anchor_mem = PolicyState::zero(anchor_hidden);
  slot.first = true;
  slot.episode_return = 0.0;
  slot.episode_len = 0;
}

void collect_fragment(EnvSlot& slot, uint32_t env_index, const PolicyParams& params,
                      const PolicyParams& anchor, const PPOConfig& cfg, RolloutBuffer& buffer) {
  const uint32_t hidden = params.dims.hidden;
  const uint32_t anchor_hidden = anchor.dims.hidden;
  buffer.initial_states[env_index] = slot.mem;
  for (uint32_t t = 0; t < cfg.fragment_len; ++t) {
    size_t cell = buffer.at(env_index, t);
    std::copy(slot.obs.begin(), slot.obs.end(), buffer.obs.begin() + long(cell * buffer.obs_dim));
    buffer.first[cell] = slot.first ? 1 : 0;

    PolicyOutput out = policy_step(params, slot.obs, slot.mem);
    PolicyOutput anchor_out = policy_step(anchor, slot.obs, slot.anchor_mem);
    std::vector<double> lp = log_softmax(out.logits);
    std::vector<double> alp = log_softmax(anchor_out.logits);
    int action = sample_from_logits(out.logits, slot.action_rng.uniform01());

    buffer.actions[cell] = action;
    buffer.logps[cell] = lp[size_t(action)];
    buffer.values[cell] = out.value;
    std::copy(alp.begin(), alp.end(),
              buffer.anchor_logp.begin() + long(cell * buffer.num_actions));

    double reward = 0.0;
    bool done = true;
    bool env_error = false;
    Info info;
    std::vector<double> next_obs;
    try {
      StepResult sr = slot.env->step(action);
      reward = sr.reward;
      done = sr.done;
      info = std::move(sr.info);
      next_obs = std::move(sr.obs);
    } catch (const std::exception& e) {
      env_error = true;
      slot.env_errors += 1;
      log_warn("env " + std::to_string(env_index) + " step failed (" + std::string(e.what()) +
               "); resetting");
    }
    if (cfg.kl_in_reward) {
      double kl = cfg.kl_direction == KlDirection::forward
                      ? kl_logits(out.logits, anchor_out.logits)
                      : kl_logits(anchor_out.logits, out.logits);
      reward -= cfg.kl_coef * kl;
    }
    buffer.rewards[cell] = reward;
    buffer.dones[cell] = done ? 1 : 0;
    slot.episode_return += reward;
    slot.episode_len += 1;

    if (done) {
      if (!env_error) slot.finished.emplace_back(slot.episode_return, info_flag(info, kEventGoalDone));
      reset_slot(slot, env_index, cfg, hidden, anchor_hidden);
    } else {
      slot.obs = std::move(next_obs);
      slot.mem = out.next_state;
      slot.anchor_mem = anchor_out.next_state;
      slot.first = false;
    }
  }
  buffer.bootstrap_values[env_index] = policy_step(params, slot.obs, slot.mem).value;
}

json metrics_to_json(const UpdateMetrics& m) {
  json j{{"env_steps", m.env_steps},
         {"updates", m.updates},
         {"mean_return", m.mean_return},
         {"success_rate", m.success_rate},
         {"loss", m.loss.total},
         {"surrogate", m.loss.surrogate},
         {"value_loss", m.loss.value_loss},
         {"entropy", m.loss.entropy},
         {"kl", m.loss.kl},
         {"clip_fraction", m.loss.clip_fraction},
         {"lr", m.lr},
         {"episodes", m.episodes},
         {"env_errors", m.env_errors}};
  if (m.eval_score) j["eval_score"] = *m.eval_score;
  return j;
}

}  // namespace

PPOResult train_ppo(const EnvFactory& env_factory, const PolicyParams& init_params,
                    const PolicyParams& anchor_params, const PPOConfig& cfg,
                    const EvalFn& eval_fn) {
  cfg.validate();
  if (init_params.dims.obs_dim != anchor_params.dims.obs_dim ||
      init_params.dims.num_actions != anchor_params.dims.num_actions)
    fail(Errc::invalid_arg, "anchor and policy disagree on obs/action dims");

  PPOResult result;
  result.params = init_params;

  std::vector<EnvSlot> slots(cfg.num_envs);
  for (uint32_t e = 0; e < cfg.num_envs; ++e) {
    slots[e].env = env_factory(e);
    if (!slots[e].env) fail(Errc::invalid_arg, "env_factory returned null");
    if (uint32_t(slots[e].env->obs_dim()) != init_params.dims.obs_dim)
      fail(Errc::invalid_arg, "env obs_dim does not match the policy");
    slots[e].action_rng = Rng(mix_seed(cfg.seed, e, 0x616374726E67ull));
    reset_slot(slots[e], e, cfg, init_params.dims.hidden, anchor_params.dims.hidden);
  }

  std::ofstream metrics_out;
  if (!cfg.metrics_path.empty()) {
    metrics_out.open(cfg.metrics_path, std::ios::trunc);
    if (!metrics_out) fail(Errc::io, "cannot open metrics log " + cfg.metrics_path);
    metrics_out << json{{"config", json::parse(cfg.to_json())}}.dump() << "\n";
  }

  Rng update_rng(mix_seed(cfg.seed, 0x75706473687566ull));
  std::deque<std::pair<double, bool>> recent_episodes;
  uint64_t env_steps = 0;
  uint64_t updates = 0;
  uint64_t total_episodes = 0;
  uint64_t total_env_errors = 0;
  uint64_t next_eval = cfg.eval_every_env_steps;

  RolloutBuffer buffer;
  buffer.num_envs = cfg.num_envs;
  buffer.fragment_len = cfg.fragment_len;
  buffer.obs_dim = init_params.dims.obs_dim;
  buffer.num_actions = init_params.dims.num_actions;
  size_t cells = size_t(cfg.num_envs) * cfg.fragment_len;
  buffer.obs.assign(cells * buffer.obs_dim, 0.0);
  buffer.first.assign(cells, 0);
  buffer.actions.assign(cells, 0);
  buffer.logps.assign(cells, 0.0);
  buffer.rewards.assign(cells, 0.0);
  buffer.values.assign(cells, 0.0);
  buffer.dones.assign(cells, 0);
  buffer.anchor_logp.assign(cells * buffer.num_actions, 0.0);
  buffer.initial_states.assign(cfg.num_envs, PolicyState::zero(init_params.dims.hidden));
  buffer.bootstrap_values.assign(cfg.num_envs, 0.0);

  while (env_steps < cfg.total_env_steps) {
    // ---- collect one fragment per env (workers own their env + a read-only
    // params snapshot; results merge in env order) ----
    if (cfg.num_envs == 1) {
      collect_fragment(slots[0], 0, result.params, anchor_params, cfg, buffer);
    } else {
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(cfg.num_envs);
      workers.reserve(cfg.num_envs);
      for (uint32_t e = 0; e < cfg.num_envs; ++e) {
        workers.emplace_back([&, e] {
          try {
            collect_fragment(slots[e], e, result.params, anchor_params, cfg, buffer);
          } catch (...) {
            errors[e] = std::current_exception();
          }
        });
      }
      for (auto& w : workers) w.join();
      for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
      }
    }
    env_steps += cells;

    for (auto& slot : slots) {
      for (auto& ep : slot.finished) {
        recent_episodes.push_back(ep);
        while (recent_episodes.size() > 100) recent_episodes.pop_front();
        total_episodes += 1;
      }
      slot.finished.clear();
      total_env_errors += slot.env_errors;
      slot.env_errors = 0;
    }

    // ---- advantages ----
    std::vector<double> advantages(cells, 0.0), returns(cells, 0.0);
    for (uint32_t e = 0; e < cfg.num_envs; ++e) {
      std::vector<double> r(buffer.rewards.begin() + long(buffer.at(e, 0)),
                            buffer.rewards.begin() + long(buffer.at(e, 0) + cfg.fragment_len));
      std::vector<double> v(buffer.values.begin() + long(buffer.at(e, 0)),
                            buffer.values.begin() + long(buffer.at(e, 0) + cfg.fragment_len));
      std::vector<uint8_t> d(buffer.dones.begin() + long(buffer.at(e, 0)),
                             buffer.dones.begin() + long(buffer.at(e, 0) + cfg.fragment_len));
      GaeResult gae = compute_gae(r, v, d, buffer.bootstrap_values[e], cfg.gamma, cfg.gae_lambda);
      std::copy(gae.advantages.begin(), gae.advantages.end(),
                advantages.begin() + long(buffer.at(e, 0)));
      std::copy(gae.returns.begin(), gae.returns.end(), returns.begin() + long(buffer.at(e, 0)));
    }

    // normalize advantages once per update, with a std guard
    double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / double(cells);
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    double stddev = std::max(std::sqrt(var / double(cells)), 1e-8);
    for (double& a : advantages) a = (a - mean) / stddev;

    // ---- epochs x minibatches over whole lanes ----
    std::vector<uint32_t> lane_order(cfg.num_envs);
    std::iota(lane_order.begin(), lane_order.end(), 0u);
    PPOLossComponents update_loss;
    uint32_t minibatches_done = 0;
    PPOObjective objective(cfg);
    for (uint32_t epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
      for (size_t i = lane_order.size(); i > 1; --i) {
        size_t j = size_t(update_rng.below(i));
        std::swap(lane_order[i - 1], lane_order[j]);
      }
      uint32_t chunk = (cfg.num_envs + cfg.minibatch_count - 1) / cfg.minibatch_count;
      for (uint32_t start = 0; start < cfg.num_envs; start += chunk) {
        uint32_t end = std::min(start + chunk, cfg.num_envs);
        SeqBatch seq;
        seq.lanes = end - start;
        seq.steps = cfg.fragment_len;
        seq.obs_dim = buffer.obs_dim;
        size_t mb_cells = size_t(seq.lanes) * seq.steps;
        seq.obs.resize(mb_cells * seq.obs_dim);
        seq.first.resize(mb_cells);
        seq.mask.assign(mb_cells, 1);
        seq.actions.resize(mb_cells);
        seq.old_logp.resize(mb_cells);
        seq.advantages.resize(mb_cells);
        seq.returns.resize(mb_cells);
        seq.anchor_logp.resize(mb_cells * buffer.num_actions);
        std::vector<PolicyState> states;
        states.reserve(seq.lanes);
        for (uint32_t k = 0; k < seq.lanes; ++k) {
          uint32_t env = lane_order[start + k];
          size_t src = buffer.at(env, 0);
          size_t dst = size_t(k) * seq.steps;
          std::copy_n(buffer.obs.begin() + long(src * seq.obs_dim), size_t(seq.steps) * seq.obs_dim,
                      seq.obs.begin() + long(dst * seq.obs_dim));
          std::copy_n(buffer.first.begin() + long(src), seq.steps, seq.first.begin() + long(dst));
          std::copy_n(buffer.actions.begin() + long(src), seq.steps,
                      seq.actions.begin() + long(dst));
          std::copy_n(buffer.logps.begin() + long(src), seq.steps,
                      seq.old_logp.begin() + long(dst));
          std::copy_n(advantages.begin() + long(src), seq.steps,
                      seq.advantages.begin() + long(dst));
          std::copy_n(returns.begin() + long(src), seq.steps, seq.returns.begin() + long(dst));
          std::copy_n(buffer.anchor_logp.begin() + long(src * buffer.num_actions),
                      size_t(seq.steps) * buffer.num_actions,
                      seq.anchor_logp.begin() + long(dst * buffer.num_actions));
          states.push_back(buffer.initial_states[env]);
        }

        GradResult grad = grad_loss(result.params, seq, states, objective);
        PolicyParams update = std::move(grad.grads);
        double norm = update.global_norm();
        if (norm > cfg.grad_clip_norm && norm > 0) update.scale(cfg.grad_clip_norm / norm);
        result.params.axpy(-cfg.lr, update);
        if (!result.params.all_finite())
          fail(Errc::numeric, "ppo parameters became non-finite at update " +
                                  std::to_string(updates));

        const PPOLossComponents& c = objective.last_components();
        update_loss.total += c.total;
        update_loss.surrogate += c.surrogate;
        update_loss.value_loss += c.value_loss;
        update_loss.entropy += c.entropy;
        update_loss.kl += c.kl;
        update_loss.clip_fraction += c.clip_fraction;
        minibatches_done += 1;
      }
    }
    updates += 1;

    UpdateMetrics m;
    m.env_steps = env_steps;
    m.updates = updates;
    if (!recent_episodes.empty()) {
      double ret = 0.0, succ = 0.0;
      for (const auto& [r, s] : recent_episodes) {
        ret += r;
        succ += s ? 1.0 : 0.0;
      }
      m.mean_return = ret / double(recent_episodes.size());
      m.success_rate = succ / double(recent_episodes.size());
    }
    double inv = minibatches_done ? 1.0 / double(minibatches_done) : 0.0;
    m.loss.total = update_loss.total * inv;
    m.loss.surrogate = update_loss.surrogate * inv;
    m.loss.value_loss = update_loss.value_loss * inv;
    m.loss.entropy = update_loss.entropy * inv;
    m.loss.kl = update_loss.kl * inv;
    m.loss.clip_fraction = update_loss.clip_fraction * inv;
    m.lr = cfg.lr;
    m.episodes = total_episodes;
    m.env_errors = total_env_errors;

    bool stop = false;
    if (eval_fn && cfg.eval_every_env_steps > 0 && env_steps >= next_eval) {
      double score = eval_fn(result.params);
      m.eval_score = score;
      next_eval += cfg.eval_every_env_steps;
      if (cfg.stop_at_eval_score >= 0.0 && score >= cfg.stop_at_eval_score) {
        log_info("ppo early stop at " + std::to_string(env_steps) + " env steps (eval " +
                 format_double(score) + ")");
        stop = true;
      }
    }

    result.metrics.push_back(m);
    if (metrics_out.is_open()) metrics_out << metrics_to_json(m).dump() << "\n";
    if (stop) break;
  }

  result.env_steps = env_steps;
  if (metrics_out.is_open()) metrics_out.flush();
  return result;
}

}  // namespace tf
