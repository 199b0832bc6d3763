#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "bench.hpp"
#include "pipeline.hpp"
#include "test_util.hpp"

using namespace tf;
using tftest::TempDir;

namespace {

const TaskSpec& task() {
  static std::vector<TaskSpec> suite = builtin_suite();
  return find_task(suite, "collect_simple");
}

AgentPtr random_agent(uint32_t) { return std::make_unique<RandomAgent>(kNumActions); }
std::unique_ptr<EnvInterface> task_env(uint32_t) { return make_task_env(task()); }

EpisodeRecord make_record(double ret, bool success, uint64_t length) {
  EpisodeRecord rec;
  rec.task_id = "t";
  rec.obs_dim = 2;
  rec.length = length;
  for (uint64_t i = 0; i < length; ++i) {
    rec.obs.insert(rec.obs.end(), {double(i), 0.0});
    rec.actions.push_back(0);
    rec.rewards.push_back(ret / double(length));
  }
  rec.total_return = ret;
  rec.success = success;
  return rec;
}

// uniform agent that dies after a fixed number of total steps
class CrashingAgent : public Agent {
 public:
  explicit CrashingAgent(uint32_t crash_after_steps) : remaining_(crash_after_steps) {}
  PolicyState initial_state() const override { return PolicyState::zero(1); }
  PolicyOutput step(const std::vector<double>&, const PolicyState&) override {
    if (remaining_ == 0) throw std::runtime_error("injected agent crash");
    --remaining_;
    PolicyOutput out;
    out.logits.assign(kNumActions, 0.0);
    out.next_state = PolicyState::zero(1);
    return out;
  }
  int num_actions() const override { return kNumActions; }

 private:
  uint32_t remaining_;
};

}  // namespace

TEST_CASE("filter chain: empty accepts everything unchanged") {
  FilterChain chain = FilterChain::parse("");
  EpisodeRecord rec = make_record(4.0, false, 5);
  EpisodeRecord copy = rec;
  CHECK(chain.accept(rec));
  CHECK(rec.length == copy.length);
  CHECK(rec.total_return == copy.total_return);
}

TEST_CASE("filter chain: min_return rejects below the bar") {
  FilterChain chain = FilterChain::parse("min_return=5");
  EpisodeRecord reject = make_record(4.0, true, 5);
  EpisodeRecord accept = make_record(5.0, true, 5);
  CHECK_FALSE(chain.accept(reject));
  CHECK(chain.accept(accept));
}

TEST_CASE("filter chain order matters: truncate before success_only") {
  // checker: success iff the record still holds at least 8 frames
  SuccessChecker checker = [](const EpisodeRecord& r) { return r.length >= 8; };

  EpisodeRecord rec = make_record(10.0, true, 12);
  FilterChain truncate_first = FilterChain::parse("truncate=6,success_only", checker);
  CHECK_FALSE(truncate_first.accept(rec));  // truncation re-checks success, then rejects

  EpisodeRecord rec2 = make_record(10.0, true, 12);
  FilterChain success_first = FilterChain::parse("success_only,truncate=6", checker);
  CHECK(success_first.accept(rec2));  // success tested on the full record
  CHECK(rec2.length == 6);            // then truncated
  CHECK(rec2.total_return == doctest::Approx(5.0));
}

TEST_CASE("filter chain: relabel rewrites the task id") {
  FilterChain chain = FilterChain::parse("relabel=curated");
  EpisodeRecord rec = make_record(1.0, true, 4);
  CHECK(chain.accept(rec));
  CHECK(rec.task_id == "curated");
}

TEST_CASE("unknown filter name is rejected") {
  CHECK_THROWS_AS(FilterChain::parse("bogus=1"), Error);
}

TEST_CASE("pipeline conserves episodes with a pass-all filter") {
  TempDir dir("pipe_conserve");
  PipelineConfig cfg;
  cfg.num_generators = 4;
  cfg.episodes_per_generator = 25;
  cfg.queue_capacity = 8;
  cfg.report_path = dir.file("report.txt");
  cfg.seed_base = 100;

  PipelineResult result = run_pipeline(random_agent, task_env, task().task_id,
                                       make_checker(task()), ActionSelect::sample, cfg);
  CHECK(result.stats.produced == 100);
  CHECK(result.stats.recorded == 100);
  CHECK(result.stats.filtered_out == 0);
  CHECK(result.stats.failed == 0);
  uint64_t per_gen = 0;
  for (uint64_t c : result.stats.per_generator) per_gen += c;
  CHECK(per_gen == result.stats.produced);

  // exactly-once: each assigned seed appears exactly once
  std::set<uint64_t> seeds;
  for (const auto& o : result.outcomes) CHECK(seeds.insert(o.seed).second);
  CHECK(seeds.size() == 100);
  CHECK(*seeds.begin() == 100);
  CHECK(*seeds.rbegin() == 199);
  CHECK(std::filesystem::exists(cfg.report_path));
}

TEST_CASE("pipeline with queue capacity 1 completes (backpressure)") {
  PipelineConfig cfg;
  cfg.num_generators = 3;
  cfg.episodes_per_generator = 5;
  cfg.queue_capacity = 1;
  cfg.num_filter_workers = 1;
  cfg.seed_base = 7;
  PipelineResult result = run_pipeline(random_agent, task_env, task().task_id,
                                       make_checker(task()), ActionSelect::sample, cfg);
  CHECK(result.stats.produced == 15);
  CHECK(result.stats.recorded + result.stats.filtered_out + result.stats.failed == 15);
}

TEST_CASE("success_only filter matches a sequential oracle count") {
  PipelineConfig cfg;
  cfg.num_generators = 4;
  cfg.episodes_per_generator = 10;
  cfg.filter_spec = "success_only";
  cfg.seed_base = 500;

  SuccessChecker checker = make_checker(task());
  PipelineResult result = run_pipeline(random_agent, task_env, task().task_id, checker,
                                       ActionSelect::sample, cfg);

  // independent sequential rerun of the same seeds
  uint64_t successes = 0;
  auto env = make_task_env(task());
  for (uint64_t seed = 500; seed < 540; ++seed) {
    RandomAgent agent(kNumActions);
    EpisodeRecord rec =
        run_episode(agent, *env, task().task_id, seed, ActionSelect::sample, checker);
    successes += rec.success ? 1 : 0;
  }
  CHECK(result.stats.recorded == successes);
  CHECK(result.stats.filtered_out == 40 - successes);
}

TEST_CASE("concurrent outcomes equal a sequential rerun seed by seed") {
  PipelineConfig cfg;
  cfg.num_generators = 5;
  cfg.episodes_per_generator = 6;
  cfg.queue_capacity = 2;
  cfg.seed_base = 900;

  SuccessChecker checker = make_checker(task());
  PipelineResult result = run_pipeline(random_agent, task_env, task().task_id, checker,
                                       ActionSelect::sample, cfg);

  auto env = make_task_env(task());
  for (const EpisodeOutcome& o : result.outcomes) {
    RandomAgent agent(kNumActions);
    EpisodeRecord rec =
        run_episode(agent, *env, task().task_id, o.seed, ActionSelect::sample, checker);
    CHECK(o.status == OutcomeStatus::ok);
    CHECK(o.episode_return == rec.total_return);
    CHECK(o.success == rec.success);
    CHECK(o.length == rec.length);
  }
}

TEST_CASE("generator crash reports current and remaining seeds as failed") {
  PipelineConfig cfg;
  cfg.num_generators = 3;
  cfg.episodes_per_generator = 8;
  cfg.seed_base = 0;

  uint32_t crash_generator = 1;
  AgentFactory factory = [&](uint32_t g) -> AgentPtr {
    // dies partway through its third episode (uniform noop-ish walks time out
    // at 64 steps on collect_simple)
    if (g == crash_generator) return std::make_unique<CrashingAgent>(150);
    return std::make_unique<RandomAgent>(kNumActions);
  };
  PipelineResult result = run_pipeline(factory, task_env, task().task_id, make_checker(task()),
                                       ActionSelect::sample, cfg);
  CHECK(result.stats.produced == 24);
  CHECK(result.stats.failed > 0);
  CHECK(result.stats.recorded + result.stats.filtered_out + result.stats.failed == 24);

  // failed seeds form a contiguous tail of the crashed generator's range
  std::vector<uint64_t> failed;
  for (const auto& o : result.outcomes) {
    if (o.status == OutcomeStatus::failed) failed.push_back(o.seed);
  }
  REQUIRE(!failed.empty());
  for (uint64_t s : failed) {
    CHECK(s >= uint64_t(crash_generator) * 8);
    CHECK(s < uint64_t(crash_generator + 1) * 8);
  }
  for (size_t i = 1; i < failed.size(); ++i) CHECK(failed[i] == failed[i - 1] + 1);
  CHECK(failed.back() == uint64_t(crash_generator + 1) * 8 - 1);
}

TEST_CASE("reports are byte-deterministic for a fixed config") {
  PipelineConfig cfg;
  cfg.num_generators = 4;
  cfg.episodes_per_generator = 5;
  cfg.seed_base = 77;
  SuccessChecker checker = make_checker(task());

  PipelineResult a = run_pipeline(random_agent, task_env, task().task_id, checker,
                                  ActionSelect::sample, cfg);
  PipelineResult b = run_pipeline(random_agent, task_env, task().task_id, checker,
                                  ActionSelect::sample, cfg);
  CHECK(render_report(a, cfg.to_json()) == render_report(b, cfg.to_json()));
  CHECK(a.run_id == b.run_id);
}

TEST_CASE("record_to_store closes the loop into the trajectory store") {
  TempDir dir("pipe_store");
  PipelineConfig cfg;
  cfg.num_generators = 2;
  cfg.episodes_per_generator = 3;
  cfg.seed_base = 42;
  cfg.store_path = dir.file("store");
  cfg.store_clip_len = 16;

  SuccessChecker checker = make_checker(task());
  PipelineResult result = run_pipeline(random_agent, task_env, task().task_id, checker,
                                       ActionSelect::sample, cfg);
  CHECK(result.stats.recorded == 6);

  auto store = Store::open(cfg.store_path);
  CHECK(store->episode_count() == 6);
  auto hits = store->find_by_label(task().task_id);
  CHECK(hits.size() == 6);

  // stored arrays equal an independent rerun of the same seed
  auto env = make_task_env(task());
  RandomAgent agent(kNumActions);
  EpisodeRecord expect =
      run_episode(agent, *env, task().task_id, 42, ActionSelect::sample, checker);
  EpisodeRecord stored = episode_data_from_store(*store, expect.episode_id);
  CHECK(stored.obs == expect.obs);
  CHECK(stored.actions == expect.actions);
  CHECK(stored.rewards == expect.rewards);

  // re-running into the same store hits duplicate ids: recorder failure with
  // a partial marker
  cfg.report_path = dir.file("second.txt");
  try {
    run_pipeline(random_agent, task_env, task().task_id, checker, ActionSelect::sample, cfg);
    FAIL("expected recorder failure on duplicate episodes");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io);
  }
  CHECK(std::filesystem::exists(cfg.report_path + ".partial"));
}
