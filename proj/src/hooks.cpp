#include "hooks.hpp"

#include <chrono>
#include <filesystem>

#include "exchange.hpp"

namespace tf {

WrappedEnv::WrappedEnv(std::unique_ptr<GridEnv> inner, std::vector<CallbackPtr> callbacks)
    : inner_(std::move(inner)), callbacks_(std::move(callbacks)) {
  if (!inner_) fail(Errc::invalid_arg, "wrap() needs an environment");
}

std::unique_ptr<WrappedEnv> wrap(std::unique_ptr<GridEnv> env,
                                 std::vector<CallbackPtr> callbacks) {
  return std::make_unique<WrappedEnv>(std::move(env), std::move(callbacks));
}

void WrappedEnv::add_callback(CallbackPtr callback) {
  if (!callback) fail(Errc::invalid_arg, "null callback");
  callbacks_.push_back(std::move(callback));
}

void WrappedEnv::run_hook(const char* point,
                          const std::function<void(Callback&, HookContext&)>& fn,
                          HookContext& ctx) {
  for (const CallbackPtr& cb : callbacks_) {
    try {
      fn(*cb, ctx);
    } catch (const std::exception& e) {
      fail(Errc::callback, "callback '" + std::string(cb->name()) + "' failed at " + point +
                               ": " + e.what());
    }
  }
}

void WrappedEnv::drain_commands() {
  while (!pending_.empty()) {
    Command cmd = std::move(pending_.front());
    pending_.pop_front();
    inner_->apply_command(cmd);
  }
}

std::vector<double> WrappedEnv::reset(uint64_t seed) {
  int action = kActionNoop;
  double reward = 0.0;
  bool done = false;
  Info info;
  info["seed"] = std::to_string(seed);
  last_obs_.clear();
  HookContext ctx{last_obs_, action, reward, done, info, pending_};

  run_hook("on_reset_pre", [](Callback& cb, HookContext& c) { cb.on_reset_pre(c); }, ctx);
  inner_->reset(seed);
  drain_commands();
  last_obs_ = inner_->observe();
  run_hook("on_reset_post", [](Callback& cb, HookContext& c) { cb.on_reset_post(c); }, ctx);
  return last_obs_;
}

StepResult WrappedEnv::step(int action) {
  double reward = 0.0;
  bool done = false;
  Info info;
  HookContext ctx{last_obs_, action, reward, done, info, pending_};

  run_hook("on_step_pre", [](Callback& cb, HookContext& c) { cb.on_step_pre(c); }, ctx);
  drain_commands();
  StepResult physics = inner_->step(ctx.action);
  last_obs_ = std::move(physics.obs);
  reward = physics.reward;
  done = physics.done;
  for (auto& [key, value] : physics.info) info[key] = std::move(value);
  run_hook("on_step_post", [](Callback& cb, HookContext& c) { cb.on_step_post(c); }, ctx);

  StepResult result;
  result.obs = last_obs_;
  result.reward = reward;
  result.done = done;
  result.info = std::move(info);
  return result;
}

// ---------------------------------------------------------------------------

RewardOnEvent::RewardOnEvent(std::string event, double value)
    : event_(std::move(event)), value_(value), name_("reward_on_event(" + event_ + ")") {}

void RewardOnEvent::on_step_post(HookContext& ctx) {
  if (ctx.info.count(event_)) ctx.reward += value_;
}

CommandOnReset::CommandOnReset(std::vector<Command> commands) : commands_(std::move(commands)) {}

void CommandOnReset::on_reset_pre(HookContext& ctx) {
  for (const Command& cmd : commands_) ctx.queue(cmd);
}

ObservationOverride::ObservationOverride(std::function<void(std::vector<double>&)> fn)
    : fn_(std::move(fn)) {
  if (!fn_) fail(Errc::invalid_arg, "observation_override needs a function");
}

FpsMonitor::FpsMonitor(size_t window) : window_(window ? window : 1) {}

void FpsMonitor::on_step_post(HookContext& ctx) {
  using clock = std::chrono::steady_clock;
  double now = std::chrono::duration<double>(clock::now().time_since_epoch()).count();
  stamps_.push_back(now);
  while (stamps_.size() > window_) stamps_.pop_front();
  if (stamps_.size() >= 2) {
    double span = stamps_.back() - stamps_.front();
    ctx.info["fps"] = span > 0 ? double(stamps_.size() - 1) / span : 0.0;
  }
}

EpisodeLogger::EpisodeLogger(std::string dir, std::string task_id)
    : dir_(std::move(dir)), task_id_(std::move(task_id)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(Errc::io, "cannot create episode log directory " + dir_);
}

void EpisodeLogger::on_reset_pre(HookContext& ctx) {
  auto it = ctx.info.find("seed");
  seed_ = it != ctx.info.end() ? std::stoull(std::get<std::string>(it->second)) : 0;
  obs_.clear();
  actions_.clear();
  rewards_.clear();
}

void EpisodeLogger::on_reset_post(HookContext& ctx) { pre_obs_ = ctx.obs; }

void EpisodeLogger::on_step_post(HookContext& ctx) {
  obs_.push_back(pre_obs_);
  actions_.push_back(ctx.action);
  rewards_.push_back(ctx.reward);
  pre_obs_ = ctx.obs;
  if (!ctx.done) return;

  EpisodeRecord rec;
  rec.task_id = task_id_;
  rec.seed = seed_;
  rec.episode_id = derive_id(task_id_, seed_);
  rec.obs_dim = uint32_t(pre_obs_.size());
  int last_action = actions_.empty() ? kActionNoop : actions_.back();
  obs_.push_back(ctx.obs);  // terminal observation
  actions_.push_back(last_action);
  rewards_.push_back(0.0);
  rec.length = obs_.size();
  for (const auto& frame : obs_) rec.obs.insert(rec.obs.end(), frame.begin(), frame.end());
  rec.actions = actions_;
  rec.rewards = rewards_;
  for (double r : rewards_) rec.total_return += r;
  exchange_write(rec, dir_ + "/" + exchange_file_name(task_id_, seed_));
}

CallbackPtr make_builtin_callback(const std::string& name,
                                  const std::map<std::string, std::string>& params) {
  auto get = [&](const std::string& key) -> std::string {
    auto it = params.find(key);
    if (it == params.end())
      fail(Errc::invalid_arg, "callback '" + name + "' needs parameter '" + key + "'");
    return it->second;
  };
  if (name == "reward_on_event") return std::make_shared<RewardOnEvent>(get("event"), std::stod(get("value")));
  if (name == "fps_monitor") return std::make_shared<FpsMonitor>(std::stoul(get("window")));
  if (name == "episode_logger") return std::make_shared<EpisodeLogger>(get("path"), get("task_id"));
  fail(Errc::not_found, "unknown builtin callback '" + name + "'");
}

}  // namespace tf
