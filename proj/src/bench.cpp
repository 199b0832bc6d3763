#include "bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "crc32.hpp"

using nlohmann::json;

namespace tf {

uint64_t TaskSpec::solution_step_bound() const {
  uint64_t legs = uint64_t(grid.num_items) + 1;
  uint64_t moves = legs * uint64_t(grid.width - 1 + grid.height - 1);
  uint64_t interacts = legs + (grid.craft_cell ? uint64_t(grid.num_items) : 0);
  return moves + interacts;
}

void TaskSpec::validate() const {
  if (task_id.empty()) fail(Errc::invalid_arg, "task needs an id");
  if (mode != "simple" && mode != "hard")
    fail(Errc::invalid_arg, "task mode must be 'simple' or 'hard'");
  int reserved = 2 + (grid.craft_cell ? 1 : 0);
  if (grid.width * grid.height < grid.num_items + reserved)
    fail(Errc::invalid_arg, "task " + task_id + " cannot place " +
                                std::to_string(grid.num_items) + " items");
  if (uint64_t(grid.max_steps) < solution_step_bound())
    fail(Errc::invalid_arg, "task " + task_id + " max_steps " +
                                std::to_string(grid.max_steps) +
                                " is below the solution bound " +
                                std::to_string(solution_step_bound()));
  if (success_predicate != "inventory_ge" && success_predicate != "at_goal_with_inventory" &&
      success_predicate != "tools_ge")
    fail(Errc::invalid_arg, "unknown success predicate '" + success_predicate + "'");
  if (eval_seeds.empty()) fail(Errc::invalid_arg, "task " + task_id + " has no eval seeds");
  for (size_t i = 1; i < eval_seeds.size(); ++i) {
    if (eval_seeds[i] != eval_seeds[i - 1] + 1)
      fail(Errc::invalid_arg, "task " + task_id + " eval seeds must be consecutive");
  }
}

namespace {

std::vector<uint64_t> seed_range(uint64_t base, uint32_t count) {
  std::vector<uint64_t> seeds(count);
  for (uint32_t i = 0; i < count; ++i) seeds[i] = base + i;
  return seeds;
}

TaskSpec make_task(std::string id, std::string mode, int side, int items, int max_steps,
                   bool craft, std::string predicate, double param,
                   std::vector<std::pair<std::string, double>> rewards) {
  TaskSpec t;
  t.task_id = std::move(id);
  t.mode = std::move(mode);
  t.grid.width = side;
  t.grid.height = side;
  t.grid.num_items = items;
  t.grid.max_steps = max_steps;
  t.grid.craft_cell = craft;
  t.reward_events = std::move(rewards);
  t.success_predicate = std::move(predicate);
  t.success_param = param;
  t.eval_seeds = seed_range(1, 100);
  t.validate();
  return t;
}

}  // namespace

std::vector<TaskSpec> builtin_suite() {
  std::vector<TaskSpec> suite;
  suite.push_back(make_task("collect_simple", "simple", 8, 1, 64, false, "inventory_ge", 1,
                            {{kEventPickedItem, 1.0}, {kEventGoalDone, 10.0}}));
  suite.push_back(make_task("collect_hard", "hard", 12, 3, 144, false, "inventory_ge", 3,
                            {{kEventPickedItem, 1.0}, {kEventGoalDone, 10.0}}));
  suite.push_back(make_task("deliver_simple", "simple", 8, 2, 96, false,
                            "at_goal_with_inventory", 2,
                            {{kEventPickedItem, 1.0}, {kEventGoalDone, 10.0}}));
  suite.push_back(make_task("deliver_hard", "hard", 12, 3, 160, false, "at_goal_with_inventory",
                            3, {{kEventPickedItem, 1.0}, {kEventGoalDone, 10.0}}));
  suite.push_back(make_task("combine_simple", "simple", 8, 2, 96, true, "tools_ge", 1,
                            {{kEventPickedItem, 1.0}, {kEventCrafted, 10.0}}));
  suite.push_back(make_task("combine_hard", "hard", 12, 4, 200, true, "tools_ge", 2,
                            {{kEventPickedItem, 1.0}, {kEventCrafted, 10.0}}));
  return suite;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& suite, const std::string& task_id) {
  for (const TaskSpec& t : suite) {
    if (t.task_id == task_id) return t;
  }
  fail(Errc::not_found, "unknown task '" + task_id + "'");
}

std::string suite_to_json(const std::vector<TaskSpec>& suite) {
  json tasks = json::array();
  for (const TaskSpec& t : suite) {
    json rewards = json::array();
    for (const auto& [event, value] : t.reward_events) rewards.push_back({event, value});
    tasks.push_back({{"task_id", t.task_id},
                     {"mode", t.mode},
                     {"width", t.grid.width},
                     {"height", t.grid.height},
                     {"items", t.grid.num_items},
                     {"max_steps", t.grid.max_steps},
                     {"craft_cell", t.grid.craft_cell},
                     {"goal_inventory", t.grid.goal_inventory},
                     {"rewards", rewards},
                     {"success", {{"predicate", t.success_predicate}, {"param", t.success_param}}},
                     {"eval_seed_base", t.eval_seeds.empty() ? 0 : t.eval_seeds.front()},
                     {"eval_seed_count", t.eval_seeds.size()}});
  }
  return json{{"format", "trajforge-suite-v1"}, {"tasks", tasks}}.dump(2);
}

namespace {

TaskSpec task_from_json(const json& tj) {
  TaskSpec t;
  t.task_id = tj.at("task_id").get<std::string>();
  t.mode = tj.value("mode", "simple");
  t.grid.width = tj.at("width").get<int>();
  t.grid.height = tj.at("height").get<int>();
  t.grid.num_items = tj.at("items").get<int>();
  t.grid.max_steps = tj.at("max_steps").get<int>();
  t.grid.craft_cell = tj.value("craft_cell", false);
  t.grid.goal_inventory = tj.value("goal_inventory", 0);
  for (const json& r : tj.value("rewards", json::array()))
    t.reward_events.emplace_back(r.at(0).get<std::string>(), r.at(1).get<double>());
  t.success_predicate = tj.at("success").at("predicate").get<std::string>();
  t.success_param = tj.at("success").at("param").get<double>();
  if (tj.count("eval_seeds")) {
    for (const json& s : tj["eval_seeds"]) t.eval_seeds.push_back(s.get<uint64_t>());
  } else {
    t.eval_seeds = seed_range(tj.at("eval_seed_base").get<uint64_t>(),
                              tj.at("eval_seed_count").get<uint32_t>());
  }
  t.validate();
  return t;
}

}  // namespace

std::vector<TaskSpec> suite_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::parse, std::string("bad suite file: ") + e.what());
  }
  if (j.value("format", "") != "trajforge-suite-v1")
    fail(Errc::parse, "unrecognized suite format");
  std::vector<TaskSpec> suite;
  for (const json& tj : j.at("tasks")) suite.push_back(task_from_json(tj));
  if (suite.empty()) fail(Errc::empty, "suite has no tasks");
  return suite;
}

TaskSpec task_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Errc::parse, std::string("bad task json: ") + e.what());
  }
  return task_from_json(j);
}

std::vector<TaskSpec> load_suite(const std::string& path_or_builtin) {
  if (path_or_builtin == "builtin") return builtin_suite();
  std::ifstream in(path_or_builtin);
  if (!in) fail(Errc::io, "cannot open suite file " + path_or_builtin);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return suite_from_json(text);
}

namespace {

struct FinalState {
  Cell agent;
  Cell goal;
  double inventory = 0.0;
  double tools = 0.0;
};

FinalState decode_final(const EpisodeRecord& rec, const GridConfig& grid) {
  int wh = grid.width * grid.height;
  if (rec.obs_dim != uint32_t(3 * wh + 2))
    fail(Errc::invalid_arg, "record obs_dim does not match the task grid");
  const double* obs = rec.final_obs();
  FinalState out;
  auto plane_argmax = [&](int plane) {
    int best = 0;
    for (int i = 1; i < wh; ++i) {
      if (obs[plane * wh + i] > obs[plane * wh + best]) best = i;
    }
    return Cell{best / grid.width, best % grid.width};
  };
  out.agent = plane_argmax(0);
  out.goal = plane_argmax(2);
  out.inventory = obs[3 * wh];
  out.tools = obs[3 * wh + 1];
  return out;
}

}  // namespace

SuccessChecker make_checker(const TaskSpec& task) {
  GridConfig grid = task.grid;
  std::string predicate = task.success_predicate;
  double param = task.success_param;
  return [grid, predicate, param](const EpisodeRecord& rec) {
    FinalState fin = decode_final(rec, grid);
    if (predicate == "inventory_ge") return fin.inventory >= param;
    if (predicate == "at_goal_with_inventory")
      return fin.agent == fin.goal && fin.inventory >= param;
    if (predicate == "tools_ge") return fin.tools >= param;
    fail(Errc::invalid_arg, "unknown success predicate '" + predicate + "'");
  };
}

std::unique_ptr<GridEnv> make_bare_task_env(const TaskSpec& task) {
  return std::make_unique<GridEnv>(task.grid);
}

std::unique_ptr<EnvInterface> make_task_env(const TaskSpec& task) {
  std::vector<CallbackPtr> callbacks;
  for (const auto& [event, value] : task.reward_events)
    callbacks.push_back(std::make_shared<RewardOnEvent>(event, value));
  return wrap(make_bare_task_env(task), std::move(callbacks));
}

namespace {

class ExpertAgent : public Agent {
 public:
  explicit ExpertAgent(TaskSpec task) : task_(std::move(task)) {}

  PolicyState initial_state() const override { return PolicyState::zero(1); }

  PolicyOutput step(const std::vector<double>& obs, const PolicyState&) override {
    int action = choose(obs);
    PolicyOutput out;
    out.logits.assign(kNumActions, 0.0);
    out.logits[size_t(action)] = 25.0;
    out.value = 0.0;
    out.next_state = PolicyState::zero(1);
    return out;
  }

  int num_actions() const override { return kNumActions; }

 private:
  int choose(const std::vector<double>& obs) const {
    const GridConfig& g = task_.grid;
    int wh = g.width * g.height;
    if (obs.size() != size_t(3 * wh + 2))
      fail(Errc::invalid_arg, "expert observation dim mismatch");
    Cell agent{0, 0};
    std::vector<Cell> items;
    for (int i = 0; i < wh; ++i) {
      if (obs[size_t(i)] > 0.5) agent = {i / g.width, i % g.width};
      if (obs[size_t(wh + i)] > 0.5) items.push_back({i / g.width, i % g.width});
    }
    double inventory = obs[size_t(3 * wh)];

    Cell target;
    if (!items.empty()) {
      // nearest item, ties by (row, col)
      target = items.front();
      int best = dist(agent, target);
      for (const Cell& c : items) {
        int d = dist(agent, c);
        if (d < best || (d == best && c < target)) {
          best = d;
          target = c;
        }
      }
    } else if (g.craft_cell) {
      if (inventory < 2.0) return kActionNoop;  // nothing left to craft
      target = g.craft();
    } else {
      target = g.goal();
    }

    if (agent == target) return kActionInteract;
    if (agent.row != target.row) return agent.row > target.row ? kActionUp : kActionDown;
    return agent.col > target.col ? kActionLeft : kActionRight;
  }

  static int dist(const Cell& a, const Cell& b) {
    return std::abs(a.row - b.row) + std::abs(a.col - b.col);
  }

  TaskSpec task_;
};

}  // namespace

AgentPtr scripted_expert(const TaskSpec& task) {
  task.validate();
  return std::make_unique<ExpertAgent>(task);
}

namespace {

uint64_t suite_fingerprint(const std::vector<TaskSpec>& suite, uint32_t seeds_per_task) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const TaskSpec& t : suite) {
    h = fnv1a64(t.task_id, h);
    for (uint64_t s : t.eval_seeds) {
      uint8_t bytes[8];
      put_u64be(bytes, s);
      h = fnv1a64(bytes, 8, h);
    }
  }
  uint8_t bytes[4];
  put_u32be(bytes, seeds_per_task);
  return fnv1a64(bytes, 4, h);
}

}  // namespace

BenchReport evaluate(const BenchAgentFactory& agent_factory, const std::string& agent_name,
                     const std::string& policy_hash, const std::vector<TaskSpec>& suite,
                     uint32_t seeds_per_task, const PipelineConfig& pipeline_cfg,
                     ActionSelect select) {
  if (suite.empty()) fail(Errc::empty, "cannot evaluate over an empty suite");
  BenchReport report;
  report.agent_name = agent_name;
  report.policy_hash = policy_hash.empty() ? "-" : policy_hash;
  report.seeds_per_task = seeds_per_task;
  report.suite_fingerprint = suite_fingerprint(suite, seeds_per_task);

  for (const TaskSpec& task : suite) {
    uint32_t n = uint32_t(task.eval_seeds.size());
    if (seeds_per_task > 0) n = std::min(n, seeds_per_task);

    PipelineConfig cfg = pipeline_cfg;
    cfg.report_path.clear();
    cfg.store_path.clear();
    cfg.seed_base = task.eval_seeds.front();
    cfg.num_generators = std::max<uint32_t>(1, cfg.num_generators);
    while (n % cfg.num_generators != 0) cfg.num_generators -= 1;  // cover seeds exactly
    cfg.episodes_per_generator = n / cfg.num_generators;

    SuccessChecker checker = make_checker(task);
    PipelineResult run = run_pipeline(
        [&](uint32_t) { return agent_factory(task); },
        [&](uint32_t) { return make_task_env(task); }, task.task_id, checker, select, cfg);

    TaskResult tr;
    tr.task_id = task.task_id;
    for (const EpisodeOutcome& o : run.outcomes) {
      if (o.status == OutcomeStatus::failed) {
        tr.failures += 1;
        continue;
      }
      tr.sample_count += 1;
      tr.success_rate += o.success ? 1.0 : 0.0;
      tr.mean_return += o.episode_return;
      tr.mean_length += double(o.length);
    }
    if (tr.sample_count > 0) {
      tr.success_rate /= double(tr.sample_count);
      tr.mean_return /= double(tr.sample_count);
      tr.mean_length /= double(tr.sample_count);
    }
    report.tasks.push_back(tr);
    report.episodes.insert(report.episodes.end(), run.outcomes.begin(), run.outcomes.end());
  }
  return report;
}

ComparisonTable compare(const std::vector<BenchReport>& reports) {
  if (reports.empty()) fail(Errc::empty, "nothing to compare");
  ComparisonTable table;
  for (const BenchReport& r : reports) table.agents.push_back(r.agent_name);
  for (const BenchReport& r : reports) {
    if (r.suite_fingerprint != reports.front().suite_fingerprint ||
        r.tasks.size() != reports.front().tasks.size())
      fail(Errc::invalid_arg, "reports cover different suites or seed lists");
  }

  for (size_t a = 0; a < reports.size(); ++a) {
    for (size_t b = a + 1; b < reports.size(); ++b) {
      PairwiseSummary pair;
      pair.agent_a = reports[a].agent_name;
      pair.agent_b = reports[b].agent_name;
      for (size_t t = 0; t < reports[a].tasks.size(); ++t) {
        double delta = reports[a].tasks[t].success_rate - reports[b].tasks[t].success_rate;
        pair.deltas.emplace_back(reports[a].tasks[t].task_id, delta);
        if (delta > 0) pair.wins_a += 1;
        else if (delta < 0) pair.wins_b += 1;
        else pair.ties += 1;
      }
      table.pairs.push_back(std::move(pair));
    }
  }

  std::string out;
  out += "agent comparison (success-rate deltas)\n";
  for (const PairwiseSummary& p : table.pairs) {
    out += p.agent_a + " vs " + p.agent_b + ": " + std::to_string(p.wins_a) + " wins / " +
           std::to_string(p.ties) + " ties / " + std::to_string(p.wins_b) + " losses\n";
    for (const auto& [task, delta] : p.deltas)
      out += "  " + task + ": " + format_double(delta) + "\n";
  }
  table.rendered = out;
  return table;
}

std::string render_bench_report(const std::vector<BenchReport>& reports,
                                const ComparisonTable& comparison,
                                const std::string& config_echo) {
  std::string out;
  out += "# trajforge bench report v1\n";
  out += "# run_id: " + derive_run_id(config_echo) + "\n";
  out += "# config: " + config_echo + "\n";
  for (const BenchReport& r : reports) {
    out += "agent " + r.agent_name + " policy_hash " + r.policy_hash + "\n";
    out += "  columns: task_id success_rate mean_return mean_length samples failures\n";
    for (const TaskResult& t : r.tasks) {
      out += "  " + t.task_id + " " + format_double(t.success_rate) + " " +
             format_double(t.mean_return) + " " + format_double(t.mean_length) + " " +
             std::to_string(t.sample_count) + " " + std::to_string(t.failures) + "\n";
    }
  }
  if (reports.size() > 1) out += comparison.rendered;
  return out;
}

std::string file_crc32_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path);
  uint32_t crc = crc32_init();
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    crc = crc32_update(crc, reinterpret_cast<const uint8_t*>(buf), size_t(in.gcount()));
    if (in.eof()) break;
  }
  return to_hex64(crc32_final(crc)).substr(8);
}

}  // namespace tf
