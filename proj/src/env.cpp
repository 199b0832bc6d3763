#include "env.hpp"

#include <algorithm>

namespace tf {

GridEnv::GridEnv(const GridConfig& config) : base_(config), cfg_(config) {
  if (config.width < 1 || config.height < 1) fail(Errc::invalid_arg, "grid must be at least 1x1");
  if (config.num_items < 0) fail(Errc::invalid_arg, "num_items must be >= 0");
  if (config.max_steps < 1) fail(Errc::invalid_arg, "max_steps must be >= 1");
}

void GridEnv::check_cell(const Cell& c, const char* what) const {
  if (c.row < 0 || c.row >= cfg_.height || c.col < 0 || c.col >= cfg_.width)
    fail(Errc::invalid_arg, std::string(what) + " cell (" + std::to_string(c.row) + "," +
                                std::to_string(c.col) + ") out of bounds");
}

std::vector<double> GridEnv::reset(uint64_t seed) {
  cfg_ = base_;
  state_ = GridState{};
  state_.agent = {0, 0};
  state_.goal = cfg_.goal();
  state_.rng_seed = seed;

  std::set<Cell> occupied{state_.agent, state_.goal};
  if (cfg_.craft_cell) {
    Cell craft = cfg_.craft();
    if (occupied.count(craft))
      fail(Errc::invalid_arg, "grid too small for a distinct craft cell");
    occupied.insert(craft);
  }
  int cells = cfg_.width * cfg_.height;
  if (cells - int(occupied.size()) < cfg_.num_items)
    fail(Errc::invalid_arg, "grid too small to place " + std::to_string(cfg_.num_items) +
                                " items on " + std::to_string(cfg_.width) + "x" +
                                std::to_string(cfg_.height));

  Rng rng(seed);
  while (int(state_.items.size()) < cfg_.num_items) {
    int flat = int(rng.below(uint64_t(cells)));
    Cell c{flat / cfg_.width, flat % cfg_.width};
    if (occupied.count(c) || state_.items.count(c)) continue;
    state_.items.insert(c);
  }

  started_ = true;
  done_ = false;
  return observe();
}

StepResult GridEnv::step(int action) {
  if (!started_) fail(Errc::state, "step before reset");
  if (done_) fail(Errc::state, "step after episode is done");
  if (action < 0 || action >= kNumActions)
    fail(Errc::invalid_arg, "action " + std::to_string(action) + " out of range");

  StepResult result;
  switch (action) {
    case kActionUp: state_.agent.row = std::max(0, state_.agent.row - 1); break;
    case kActionDown: state_.agent.row = std::min(cfg_.height - 1, state_.agent.row + 1); break;
    case kActionLeft: state_.agent.col = std::max(0, state_.agent.col - 1); break;
    case kActionRight: state_.agent.col = std::min(cfg_.width - 1, state_.agent.col + 1); break;
    case kActionNoop: break;
    case kActionInteract: {
      auto it = state_.items.find(state_.agent);
      if (it != state_.items.end()) {
        state_.items.erase(it);
        state_.inventory += 1;
        result.info[kEventPickedItem] = 1.0;
      } else if (cfg_.craft_cell && state_.agent == cfg_.craft() && state_.inventory >= 2) {
        state_.inventory -= 2;
        state_.tools += 1;
        result.info[kEventCrafted] = 1.0;
      } else if (state_.agent == state_.goal &&
                 state_.inventory >= cfg_.required_inventory()) {
        done_ = true;
        result.info[kEventGoalDone] = 1.0;
      }
      break;
    }
    default: break;
  }

  state_.step_count += 1;
  if (!done_ && state_.step_count >= cfg_.max_steps) {
    done_ = true;
    result.info[kEventTimeout] = 1.0;
  }

  result.obs = observe();
  result.reward = 0.0;
  result.done = done_;
  return result;
}

std::vector<double> GridEnv::observe() const {
  int wh = cfg_.width * cfg_.height;
  std::vector<double> obs(size_t(3 * wh + 2), 0.0);
  auto flat = [&](const Cell& c) { return size_t(c.row * cfg_.width + c.col); };
  obs[flat(state_.agent)] = 1.0;
  for (const Cell& c : state_.items) obs[size_t(wh) + flat(c)] = 1.0;
  obs[size_t(2 * wh) + flat(state_.goal)] = 1.0;
  obs[size_t(3 * wh)] = double(state_.inventory);
  obs[size_t(3 * wh) + 1] = double(state_.tools);
  return obs;
}

void GridEnv::apply_command(const Command& cmd) {
  if (!started_) fail(Errc::state, "command before reset");
  if (std::holds_alternative<CmdSetAgent>(cmd)) {
    Cell c = std::get<CmdSetAgent>(cmd).cell;
    check_cell(c, "set_agent");
    state_.agent = c;
  } else if (std::holds_alternative<CmdAddItem>(cmd)) {
    Cell c = std::get<CmdAddItem>(cmd).cell;
    check_cell(c, "add_item");
    if (c == state_.goal) {
      log_debug("add_item on the goal cell ignored");
      return;
    }
    state_.items.insert(c);
  } else if (std::holds_alternative<CmdClearItems>(cmd)) {
    state_.items.clear();
  } else if (std::holds_alternative<CmdSetMaxSteps>(cmd)) {
    int n = std::get<CmdSetMaxSteps>(cmd).max_steps;
    if (n < 1) fail(Errc::invalid_arg, "set_max_steps requires a positive value");
    cfg_.max_steps = n;
  }
}

}  // namespace tf
