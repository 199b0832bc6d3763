#pragma once

#include <string>
#include <vector>

#include "agent.hpp"
#include "hooks.hpp"
#include "pipeline.hpp"

namespace tf {

// A benchmark task: gridworld shape, reward callbacks, a programmatic
// success predicate over the final episode frame, and a fixed list of eval
// seeds (contiguous, so the pipeline's deterministic seed partitioning can
// cover them exactly).
struct TaskSpec {
  std::string task_id;
  std::string mode = "simple";  // simple | hard
  GridConfig grid;
  std::vector<std::pair<std::string, double>> reward_events;
  std::string success_predicate;  // inventory_ge | at_goal_with_inventory | tools_ge
  double success_param = 1.0;
  std::vector<uint64_t> eval_seeds;

  // documented Manhattan tour upper bound on the scripted solution:
  // (k+1) legs of at most (w-1)+(h-1) moves, one interact per item plus the
  // final interact, plus k extra interacts when a craft cell is in play
  uint64_t solution_step_bound() const;
  void validate() const;
};

std::vector<TaskSpec> builtin_suite();
const TaskSpec& find_task(const std::vector<TaskSpec>& suite, const std::string& task_id);

// suite file: JSON document with one entry per task (see README)
std::string suite_to_json(const std::vector<TaskSpec>& suite);
std::vector<TaskSpec> suite_from_json(const std::string& text);
TaskSpec task_from_json_text(const std::string& text);
std::vector<TaskSpec> load_suite(const std::string& path_or_builtin);

// success predicate over the final frame of a finished record
SuccessChecker make_checker(const TaskSpec& task);

// environment with the task's reward callbacks attached
std::unique_ptr<EnvInterface> make_task_env(const TaskSpec& task);
std::unique_ptr<GridEnv> make_bare_task_env(const TaskSpec& task);

// Deterministic greedy demonstrator: walks Manhattan-shortest to the nearest
// item and interacts, repeats, then heads to the craft cell (craft tasks) or
// the goal. Succeeds on every feasible seed within the task's step bound.
AgentPtr scripted_expert(const TaskSpec& task);

struct TaskResult {
  std::string task_id;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  uint64_t sample_count = 0;
  uint64_t failures = 0;
};

struct BenchReport {
  std::string agent_name;
  std::string policy_hash;  // crc32 of the policy file, or "-"
  uint64_t suite_fingerprint = 0;
  uint32_t seeds_per_task = 0;
  std::vector<TaskResult> tasks;
  std::vector<EpisodeOutcome> episodes;  // sorted by (task_id, seed)
};

using BenchAgentFactory = std::function<AgentPtr(const TaskSpec& task)>;

// Runs every (task, seed) pair through the rollout pipeline with the task's
// checker. Pure function of (agent, suite, seeds, pipeline config).
BenchReport evaluate(const BenchAgentFactory& agent_factory, const std::string& agent_name,
                     const std::string& policy_hash, const std::vector<TaskSpec>& suite,
                     uint32_t seeds_per_task, const PipelineConfig& pipeline_cfg,
                     ActionSelect select = ActionSelect::greedy);

struct PairwiseSummary {
  std::string agent_a;
  std::string agent_b;
  uint32_t wins_a = 0;
  uint32_t ties = 0;
  uint32_t wins_b = 0;
  std::vector<std::pair<std::string, double>> deltas;  // per task: success_a - success_b
};

struct ComparisonTable {
  std::vector<std::string> agents;
  std::vector<PairwiseSummary> pairs;
  std::string rendered;  // plain-text table
};

// refuses to compare reports over different suites or seed lists
ComparisonTable compare(const std::vector<BenchReport>& reports);

std::string render_bench_report(const std::vector<BenchReport>& reports,
                                const ComparisonTable& comparison,
                                const std::string& config_echo);

std::string file_crc32_hex(const std::string& path);

}  // namespace tf
