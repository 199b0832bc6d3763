#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "queue.hpp"

using nlohmann::json;

namespace tf {

void PipelineConfig::validate() const {
  if (num_generators < 1 || episodes_per_generator < 1 || queue_capacity < 1 ||
      num_filter_workers < 1)
    fail(Errc::invalid_arg, "pipeline counts must all be >= 1");
  if (store_clip_len < 1) fail(Errc::invalid_arg, "store_clip_len must be >= 1");
}

std::string PipelineConfig::to_json() const {
  json j{{"num_generators", num_generators},
         {"episodes_per_generator", episodes_per_generator},
         {"queue_capacity", queue_capacity},
         {"num_filter_workers", num_filter_workers},
         {"filter_spec", filter_spec},
         {"report_path", report_path},
         {"store_path", store_path},
         {"store_clip_len", store_clip_len},
         {"seed_base", seed_base}};
  return j.dump();
}

const char* outcome_status_name(OutcomeStatus s) {
  switch (s) {
    case OutcomeStatus::ok: return "ok";
    case OutcomeStatus::filtered: return "filtered";
    case OutcomeStatus::failed: return "failed";
  }
  return "unknown";
}

FilterChain FilterChain::parse(const std::string& spec, SuccessChecker checker) {
  FilterChain chain;
  size_t pos = 0;
  while (pos <= spec.size() && !spec.empty()) {
    size_t comma = spec.find(',', pos);
    std::string item = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? spec.size() + 1 : comma + 1;
    if (item.empty()) continue;

    std::string name = item;
    std::string arg;
    size_t eq = item.find('=');
    if (eq != std::string::npos) {
      name = item.substr(0, eq);
      arg = item.substr(eq + 1);
    }

    if (name == "success_only") {
      chain.filters_.push_back({"success_only", [](EpisodeRecord& r) { return r.success; }});
    } else if (name == "min_return") {
      if (arg.empty()) fail(Errc::invalid_arg, "min_return needs a value");
      double threshold = std::stod(arg);
      chain.filters_.push_back({"min_return", [threshold](EpisodeRecord& r) {
                                  return r.total_return >= threshold;
                                }});
    } else if (name == "truncate") {
      if (arg.empty()) fail(Errc::invalid_arg, "truncate needs a length");
      uint64_t keep = std::stoull(arg);
      if (keep < 1) fail(Errc::invalid_arg, "truncate length must be >= 1");
      chain.filters_.push_back({"truncate", [keep, checker](EpisodeRecord& r) {
                                  if (r.length > keep) {
                                    r.length = keep;
                                    r.obs.resize(keep * r.obs_dim);
                                    r.actions.resize(keep);
                                    r.rewards.resize(keep);
                                    r.total_return = 0.0;
                                    for (double v : r.rewards) r.total_return += v;
                                    r.success = checker ? checker(r) : r.success;
                                  }
                                  return true;
                                }});
    } else if (name == "relabel") {
      if (arg.empty()) fail(Errc::invalid_arg, "relabel needs a label");
      chain.filters_.push_back({"relabel", [arg](EpisodeRecord& r) {
                                  r.task_id = arg;
                                  return true;
                                }});
    } else {
      fail(Errc::not_found, "unknown filter '" + name + "'");
    }
    if (comma == std::string::npos) break;
  }
  return chain;
}

bool FilterChain::accept(EpisodeRecord& record) const {
  for (const Filter& f : filters_) {
    if (!f.apply(record)) return false;
  }
  return true;
}

EpisodeManifest record_to_store(const EpisodeRecord& record, Store& store, uint32_t clip_len) {
  return store.write_episode(record_to_episode_data(record), clip_len);
}

std::string derive_run_id(const std::string& config_echo) {
  uint64_t h = fnv1a64(config_echo);
  std::string id;
  for (int i = 0; i < 3; ++i) {
    h = splitmix64(h);
    id += to_hex64(h);
  }
  return id.substr(0, 40);
}

namespace {

struct GenMsg {
  EpisodeRecord record;
  uint64_t seed = 0;
  uint32_t generator_id = 0;
  bool generation_failed = false;
};

struct RecMsg {
  EpisodeRecord record;
  uint64_t seed = 0;
  uint32_t generator_id = 0;
  OutcomeStatus status = OutcomeStatus::ok;
};

}  // namespace

PipelineResult run_pipeline(const AgentFactory& agent_factory,
                            const PipelineEnvFactory& env_factory, const std::string& task_id,
                            const SuccessChecker& checker, ActionSelect select,
                            const PipelineConfig& cfg) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();

  FilterChain chain = FilterChain::parse(cfg.filter_spec, checker);
  std::unique_ptr<Store> sink;
  if (!cfg.store_path.empty()) sink = Store::open(cfg.store_path);

  BoundedQueue<GenMsg> produced_q(cfg.queue_capacity);
  BoundedQueue<RecMsg> filtered_q(cfg.queue_capacity);

  // ---- generators ----
  std::vector<std::thread> generators;
  generators.reserve(cfg.num_generators);
  std::atomic<uint32_t> active_generators{cfg.num_generators};
  for (uint32_t g = 0; g < cfg.num_generators; ++g) {
    generators.emplace_back([&, g] {
      uint32_t i = 0;
      auto fail_rest = [&](const std::string& why) {
        log_warn("generator " + std::to_string(g) + " crashed: " + why);
        for (; i < cfg.episodes_per_generator; ++i) {
          uint64_t seed = cfg.seed_base + uint64_t(g) * cfg.episodes_per_generator + i;
          GenMsg msg;
          msg.seed = seed;
          msg.generator_id = g;
          msg.generation_failed = true;
          msg.record.task_id = task_id;
          msg.record.seed = seed;
          produced_q.push(std::move(msg));
        }
      };
      try {
        AgentPtr agent = agent_factory(g);
        std::unique_ptr<EnvInterface> env = env_factory(g);
        if (!agent || !env) fail(Errc::invalid_arg, "pipeline factory returned null");
        for (; i < cfg.episodes_per_generator; ++i) {
          uint64_t seed = cfg.seed_base + uint64_t(g) * cfg.episodes_per_generator + i;
          GenMsg msg;
          msg.record = run_episode(*agent, *env, task_id, seed, select, checker);
          msg.record.generator_id = g;
          msg.seed = seed;
          msg.generator_id = g;
          produced_q.push(std::move(msg));
        }
      } catch (const std::exception& e) {
        fail_rest(e.what());
      }
      if (active_generators.fetch_sub(1) == 1) produced_q.close();
    });
  }

  // ---- filter workers ----
  std::vector<std::thread> filters;
  filters.reserve(cfg.num_filter_workers);
  std::atomic<uint32_t> active_filters{cfg.num_filter_workers};
  for (uint32_t f = 0; f < cfg.num_filter_workers; ++f) {
    filters.emplace_back([&] {
      while (std::optional<GenMsg> msg = produced_q.pop()) {
        RecMsg out;
        out.seed = msg->seed;
        out.generator_id = msg->generator_id;
        if (msg->generation_failed) {
          out.status = OutcomeStatus::failed;
          out.record = std::move(msg->record);
        } else {
          bool ok = chain.accept(msg->record);
          out.status = ok ? OutcomeStatus::ok : OutcomeStatus::filtered;
          out.record = std::move(msg->record);
        }
        filtered_q.push(std::move(out));
      }
      if (active_filters.fetch_sub(1) == 1) filtered_q.close();
    });
  }

  // ---- recorder (single consumer) ----
  PipelineResult result;
  result.stats.per_generator.assign(cfg.num_generators, 0);
  std::string recorder_error;
  std::thread recorder([&] {
    while (std::optional<RecMsg> msg = filtered_q.pop()) {
      result.stats.produced += 1;
      result.stats.per_generator[msg->generator_id] += 1;
      EpisodeOutcome outcome;
      outcome.task_id = msg->record.task_id.empty() ? task_id : msg->record.task_id;
      outcome.seed = msg->seed;
      outcome.status = msg->status;
      outcome.episode_return = msg->record.total_return;
      outcome.success = msg->record.success;
      outcome.length = msg->record.length;
      outcome.generator_id = msg->generator_id;
      switch (msg->status) {
        case OutcomeStatus::ok: {
          if (sink && recorder_error.empty()) {
            try {
              record_to_store(msg->record, *sink, cfg.store_clip_len);
            } catch (const std::exception& e) {
              recorder_error = e.what();
            }
          }
          result.stats.recorded += 1;
          break;
        }
        case OutcomeStatus::filtered: result.stats.filtered_out += 1; break;
        case OutcomeStatus::failed: result.stats.failed += 1; break;
      }
      result.outcomes.push_back(std::move(outcome));
    }
  });

  for (auto& t : generators) t.join();
  for (auto& t : filters) t.join();
  recorder.join();

  std::sort(result.outcomes.begin(), result.outcomes.end(),
            [](const EpisodeOutcome& a, const EpisodeOutcome& b) {
              if (a.task_id != b.task_id) return a.task_id < b.task_id;
              return a.seed < b.seed;
            });

  result.stats.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.stats.throughput_eps = result.stats.wall_time_sec > 0
                                    ? double(result.stats.produced) / result.stats.wall_time_sec
                                    : 0.0;
  std::string echo = cfg.to_json();
  result.run_id = derive_run_id("task=" + task_id + " cfg=" + echo);

  if (!recorder_error.empty()) {
    if (!cfg.report_path.empty()) {
      std::ofstream marker(cfg.report_path + ".partial", std::ios::trunc);
      marker << "recorder aborted: " << recorder_error << "\n";
    }
    fail(Errc::io, "recorder failed: " + recorder_error);
  }

  if (!cfg.report_path.empty()) {
    std::string text = render_report(result, echo);
    std::ofstream out(cfg.report_path, std::ios::trunc | std::ios::binary);
    out.write(text.data(), long(text.size()));
    out.flush();
    if (!out) {
      std::ofstream marker(cfg.report_path + ".partial", std::ios::trunc);
      marker << "report write failed\n";
      fail(Errc::io, "cannot write report " + cfg.report_path);
    }
  }
  return result;
}

std::string render_report(const PipelineResult& result, const std::string& config_echo) {
  std::string out;
  out += "# trajforge rollout report v1\n";
  out += "# run_id: " + result.run_id + "\n";
  out += "# config: " + config_echo + "\n";
  out += "# columns: task_id seed status return success length generator\n";
  for (const EpisodeOutcome& o : result.outcomes) {
    out += o.task_id;
    out += ' ';
    out += std::to_string(o.seed);
    out += ' ';
    out += outcome_status_name(o.status);
    out += ' ';
    out += format_double(o.episode_return);
    out += ' ';
    out += o.success ? '1' : '0';
    out += ' ';
    out += std::to_string(o.length);
    out += ' ';
    out += std::to_string(o.generator_id);
    out += '\n';
  }
  out += "# produced: " + std::to_string(result.stats.produced) + "\n";
  out += "# recorded: " + std::to_string(result.stats.recorded) + "\n";
  out += "# filtered_out: " + std::to_string(result.stats.filtered_out) + "\n";
  out += "# failed: " + std::to_string(result.stats.failed) + "\n";
  return out;
}

}  // namespace tf
