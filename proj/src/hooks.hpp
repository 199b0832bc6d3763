#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "env.hpp"

namespace tf {

// Mutable view of one env transition, passed through the callback stack.
// Callbacks run in list order and see each other's mutations; reward
// contributions accumulate in stack order. Queued commands are applied at a
// single defined point: after on_step_pre (before the physics update), and
// right after state initialization during reset.
struct HookContext {
  std::vector<double>& obs;
  int& action;
  double& reward;
  bool& done;
  Info& info;
  std::deque<Command>& commands;

  void queue(Command cmd) { commands.push_back(std::move(cmd)); }
};

class Callback {
 public:
  virtual ~Callback() = default;
  virtual std::string_view name() const = 0;
  virtual void on_reset_pre(HookContext&) {}
  virtual void on_reset_post(HookContext&) {}
  virtual void on_step_pre(HookContext&) {}
  virtual void on_step_post(HookContext&) {}
};

using CallbackPtr = std::shared_ptr<Callback>;

// Hook-driven wrapper. An empty callback list is behaviorally identical to
// the bare env.
class WrappedEnv : public EnvInterface {
 public:
  WrappedEnv(std::unique_ptr<GridEnv> inner, std::vector<CallbackPtr> callbacks);

  std::vector<double> reset(uint64_t seed) override;
  StepResult step(int action) override;
  int obs_dim() const override { return inner_->obs_dim(); }
  const GridConfig& config() const override { return inner_->config(); }
  bool done() const override { return inner_->done(); }

  GridEnv& inner() { return *inner_; }
  void add_callback(CallbackPtr callback);

 private:
  void run_hook(const char* point, const std::function<void(Callback&, HookContext&)>& fn,
                HookContext& ctx);
  void drain_commands();

  std::unique_ptr<GridEnv> inner_;
  std::vector<CallbackPtr> callbacks_;
  std::deque<Command> pending_;
  std::vector<double> last_obs_;
};

std::unique_ptr<WrappedEnv> wrap(std::unique_ptr<GridEnv> env, std::vector<CallbackPtr> callbacks);

// ---------------------------------------------------------------------------
// built-in callbacks

// adds `value` to the step reward whenever `event` appears in info
class RewardOnEvent : public Callback {
 public:
  RewardOnEvent(std::string event, double value);
  std::string_view name() const override { return name_; }
  void on_step_post(HookContext& ctx) override;

 private:
  std::string event_;
  double value_;
  std::string name_;
};

// queues a fixed command list at every reset
class CommandOnReset : public Callback {
 public:
  explicit CommandOnReset(std::vector<Command> commands);
  std::string_view name() const override { return "command_on_reset"; }
  void on_reset_pre(HookContext& ctx) override;

 private:
  std::vector<Command> commands_;
};

// rewrites the observation after reset and after every step
class ObservationOverride : public Callback {
 public:
  explicit ObservationOverride(std::function<void(std::vector<double>&)> fn);
  std::string_view name() const override { return "observation_override"; }
  void on_reset_post(HookContext& ctx) override { fn_(ctx.obs); }
  void on_step_post(HookContext& ctx) override { fn_(ctx.obs); }

 private:
  std::function<void(std::vector<double>&)> fn_;
};

// reports steps/sec over a sliding window into info["fps"]
class FpsMonitor : public Callback {
 public:
  explicit FpsMonitor(size_t window);
  std::string_view name() const override { return "fps_monitor"; }
  void on_step_post(HookContext& ctx) override;

 private:
  size_t window_;
  std::deque<double> stamps_;
};

// records (obs, action, reward) per step and writes one exchange file per
// episode into `dir` when the episode finishes
class EpisodeLogger : public Callback {
 public:
  EpisodeLogger(std::string dir, std::string task_id);
  std::string_view name() const override { return "episode_logger"; }
  void on_reset_pre(HookContext& ctx) override;
  void on_reset_post(HookContext& ctx) override;
  void on_step_post(HookContext& ctx) override;

 private:
  std::string dir_;
  std::string task_id_;
  uint64_t seed_ = 0;
  std::vector<std::vector<double>> obs_;
  std::vector<int> actions_;
  std::vector<double> rewards_;
  std::vector<double> pre_obs_;
};

// builds a builtin callback by name; params are a small key=value map
CallbackPtr make_builtin_callback(const std::string& name,
                                  const std::map<std::string, std::string>& params);

}  // namespace tf
