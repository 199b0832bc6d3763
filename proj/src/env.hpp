#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "common.hpp"

namespace tf {

// Deterministic gridworld. The agent starts at (0,0), the goal sits at
// (height-1, width-1), and reset() scatters `num_items` items over free
// cells with the documented xorshift64* stream. Interacting on an item picks
// it up; on the craft cell (when enabled) two inventory items become one
// tool; on the goal with inventory >= goal_inventory the episode ends.
// Movement clamps at the borders. Base reward is always zero — rewards come
// from callbacks layered on top (see hooks.hpp).

enum Action : int {
  kActionUp = 0,
  kActionDown = 1,
  kActionLeft = 2,
  kActionRight = 3,
  kActionInteract = 4,
  kActionNoop = 5,
};
constexpr int kNumActions = 6;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

struct GridConfig {
  int width = 8;
  int height = 8;
  int num_items = 1;
  int max_steps = 64;
  bool craft_cell = false;
  // inventory required for the goal interaction to finish the episode;
  // 0 means "same as num_items"
  int goal_inventory = 0;

  int required_inventory() const { return goal_inventory > 0 ? goal_inventory : num_items; }
  Cell goal() const { return {height - 1, width - 1}; }
  Cell craft() const { return {height / 2, width / 2}; }
  int obs_dim() const { return 3 * width * height + 2; }
};

struct GridState {
  Cell agent;
  std::set<Cell> items;
  Cell goal;
  int inventory = 0;
  int tools = 0;
  int step_count = 0;
  uint64_t rng_seed = 0;
};

using InfoValue = std::variant<double, std::string>;
using Info = std::map<std::string, InfoValue>;

// events reported through info by GridEnv::step
inline constexpr const char* kEventPickedItem = "picked_item";
inline constexpr const char* kEventCrafted = "crafted";
inline constexpr const char* kEventGoalDone = "goal_done";
inline constexpr const char* kEventTimeout = "timeout";

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
  Info info;
};

class EnvInterface {
 public:
  virtual ~EnvInterface() = default;
  virtual std::vector<double> reset(uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  virtual int obs_dim() const = 0;
  virtual int num_actions() const { return kNumActions; }
  virtual const GridConfig& config() const = 0;
  virtual bool done() const = 0;
};

// in-episode commands, applied at a single defined point of the step pipeline
struct CmdSetAgent {
  Cell cell;
};
struct CmdAddItem {
  Cell cell;
};
struct CmdClearItems {};
struct CmdSetMaxSteps {
  int max_steps = 0;
};
using Command = std::variant<CmdSetAgent, CmdAddItem, CmdClearItems, CmdSetMaxSteps>;

class GridEnv : public EnvInterface {
 public:
  explicit GridEnv(const GridConfig& config);

  std::vector<double> reset(uint64_t seed) override;
  StepResult step(int action) override;
  int obs_dim() const override { return base_.obs_dim(); }
  const GridConfig& config() const override { return cfg_; }
  bool done() const override { return done_; }

  void apply_command(const Command& cmd);
  std::vector<double> observe() const;
  const GridState& state() const { return state_; }

 private:
  void check_cell(const Cell& c, const char* what) const;

  GridConfig base_;  // as constructed; cfg_ may be altered per episode by commands
  GridConfig cfg_;
  GridState state_;
  bool started_ = false;
  bool done_ = false;
};

}  // namespace tf
