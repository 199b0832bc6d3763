#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agent.hpp"
#include "episode.hpp"

namespace tf {

struct PipelineConfig {
  uint32_t num_generators = 1;
  uint32_t episodes_per_generator = 1;
  uint32_t queue_capacity = 16;
  uint32_t num_filter_workers = 2;
  std::string filter_spec;  // e.g. "truncate=100,success_only"
  std::string report_path;  // empty: report kept in memory only
  std::string store_path;   // optional trajstore sink
  uint32_t store_clip_len = 64;
  uint64_t seed_base = 0;

  void validate() const;
  std::string to_json() const;
};

// pure per-record predicate/transform; reject short-circuits the chain
struct Filter {
  std::string name;
  std::function<bool(EpisodeRecord&)> apply;
};

class FilterChain {
 public:
  FilterChain() = default;
  // spec: comma-separated list of success_only | min_return=<x> |
  // truncate=<n> | relabel=<label>. truncate re-checks success with
  // `checker` on the shortened record when one is supplied.
  static FilterChain parse(const std::string& spec, SuccessChecker checker = {});

  bool accept(EpisodeRecord& record) const;
  size_t size() const { return filters_.size(); }

 private:
  std::vector<Filter> filters_;
};

enum class OutcomeStatus { ok, filtered, failed };
const char* outcome_status_name(OutcomeStatus s);

struct EpisodeOutcome {
  std::string task_id;
  uint64_t seed = 0;
  OutcomeStatus status = OutcomeStatus::ok;
  double episode_return = 0.0;
  bool success = false;
  uint64_t length = 0;
  uint32_t generator_id = 0;
};

struct PipelineStats {
  uint64_t produced = 0;  // recorded + filtered_out + failed
  uint64_t recorded = 0;
  uint64_t filtered_out = 0;
  uint64_t failed = 0;
  std::vector<uint64_t> per_generator;
  double wall_time_sec = 0.0;
  double throughput_eps = 0.0;
};

struct PipelineResult {
  PipelineStats stats;
  std::vector<EpisodeOutcome> outcomes;  // sorted by (task_id, seed)
  std::string run_id;
};

using AgentFactory = std::function<AgentPtr(uint32_t generator_id)>;
using PipelineEnvFactory = std::function<std::unique_ptr<EnvInterface>(uint32_t generator_id)>;

// Asynchronous generator -> filter -> recorder pipeline. Generator g runs
// episodes with seeds seed_base + g*episodes_per_generator + i; every seed
// ends up as exactly one outcome (ok, filtered or failed). A generator that
// throws reports its remaining seeds as failed. The sorted report is
// byte-deterministic for a fixed config.
PipelineResult run_pipeline(const AgentFactory& agent_factory,
                            const PipelineEnvFactory& env_factory, const std::string& task_id,
                            const SuccessChecker& checker, ActionSelect select,
                            const PipelineConfig& cfg);

// writes one accepted record into the store, labeled with its task id over
// the full episode
EpisodeManifest record_to_store(const EpisodeRecord& record, Store& store, uint32_t clip_len);

std::string render_report(const PipelineResult& result, const std::string& config_echo);
std::string derive_run_id(const std::string& config_echo);

}  // namespace tf
