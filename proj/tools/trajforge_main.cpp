// trajforge command-line tool. Wires the full workflow — generate demos,
// ingest, inspect, pre-train, fine-tune, roll out, benchmark — on top of the
// public C API only.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajforge.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string last_error() {
  char buf[1024];
  tf_last_error(buf, sizeof(buf));
  return buf;
}

int report_failure(const char* what, tf_status status) {
  std::cerr << "error: " << what << " failed (" << tf_status_name(status) << "): " << last_error()
            << "\n";
  return kExitRuntime;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    return "";
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// merges --key value overrides into a config JSON string (flat keys only)
std::string apply_overrides(std::string config,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  if (config.empty()) config = "{}";
  for (const auto& [key, value] : overrides) {
    // splice "key": value before the closing brace; later keys win in our parser
    size_t brace = config.rfind('}');
    if (brace == std::string::npos) return config;
    std::string entry = "\"" + key + "\": " + value;
    bool empty_object = config.find_first_not_of(" \t\n", config.find('{') + 1) == brace;
    config = config.substr(0, brace) + (empty_object ? "" : ", ") + entry + "}";
  }
  return config;
}

void echo_config(const std::string& name, const std::string& config) {
  std::cout << "[" << name << "] resolved config: " << (config.empty() ? "{}" : config) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajforge: gridworld agent toolkit (store, sampler, training, rollout, bench)"};
  app.require_subcommand(1);

  // ---- gen-demos ----
  auto* gen = app.add_subcommand("gen-demos", "generate scripted-expert demonstration episodes");
  std::string gen_task, gen_out;
  uint32_t gen_episodes = 10;
  uint64_t gen_seed = 0;
  gen->add_option("--task", gen_task, "task id, suite.json#task, or task JSON")->required();
  gen->add_option("--episodes", gen_episodes, "number of episodes")->required();
  gen->add_option("--seed", gen_seed, "base seed (episode i uses seed+i)")->required();
  gen->add_option("--out", gen_out, "output directory for .tfe exchange files")->required();

  // ---- ingest ----
  auto* ingest = app.add_subcommand("ingest", "load exchange files into a trajectory store");
  std::string ingest_input, ingest_store;
  uint32_t ingest_clip_len = 64;
  ingest->add_option("--input", ingest_input, "directory of .tfe files")->required();
  ingest->add_option("--store", ingest_store, "store directory")->required();
  ingest->add_option("--clip-len", ingest_clip_len, "frames per clip (default 64)");

  // ---- inspect ----
  auto* inspect = app.add_subcommand("inspect", "print store, episode or label details");
  std::string inspect_store, inspect_episode, inspect_label;
  inspect->add_option("--store", inspect_store, "store directory")->required();
  inspect->add_option("--episode", inspect_episode, "episode id (32 hex chars)");
  inspect->add_option("--label", inspect_label, "list intervals with this label");

  // ---- train-bc ----
  auto* bc = app.add_subcommand("train-bc", "behavior-cloning pre-training");
  std::string bc_store, bc_config, bc_out, bc_curve;
  std::vector<std::pair<std::string, std::string>> bc_overrides;
  uint64_t bc_steps = 0, bc_seed_flag = 0;
  bool bc_steps_set = false, bc_seed_set = false;
  bc->add_option("--store", bc_store, "store directory")->required();
  bc->add_option("--config", bc_config, "train config JSON file");
  bc->add_option("--out", bc_out, "output policy file")->required();
  bc->add_option("--loss-curve", bc_curve, "write per-step loss (two columns)");
  bc->add_option("--steps", bc_steps, "override total_steps")->each([&](const std::string&) {
    bc_steps_set = true;
  });
  bc->add_option("--seed", bc_seed_flag, "override seed")->each([&](const std::string&) {
    bc_seed_set = true;
  });

  // ---- train-ppo ----
  auto* ppo = app.add_subcommand("train-ppo", "KL-constrained PPO fine-tuning");
  std::string ppo_task, ppo_anchor, ppo_config, ppo_out, ppo_metrics;
  uint64_t ppo_steps = 0, ppo_seed_flag = 0;
  bool ppo_steps_set = false, ppo_seed_set = false;
  ppo->add_option("--task", ppo_task, "task id, suite.json#task, or task JSON")->required();
  ppo->add_option("--anchor", ppo_anchor, "pre-trained anchor policy file")->required();
  ppo->add_option("--config", ppo_config, "ppo config JSON file");
  ppo->add_option("--out", ppo_out, "output policy file")->required();
  ppo->add_option("--metrics", ppo_metrics, "metrics log path (JSON lines)");
  ppo->add_option("--steps", ppo_steps, "override total_env_steps")->each([&](const std::string&) {
    ppo_steps_set = true;
  });
  ppo->add_option("--seed", ppo_seed_flag, "override seed")->each([&](const std::string&) {
    ppo_seed_set = true;
  });

  // ---- rollout ----
  auto* rollout = app.add_subcommand("rollout", "asynchronous generator/filter/recorder rollout");
  std::string ro_policy, ro_task, ro_report, ro_store, ro_filters, ro_select = "greedy";
  uint32_t ro_generators = 4, ro_episodes = 25;
  uint64_t ro_seed_base = 0;
  rollout->add_option("--policy", ro_policy, "policy file, or 'expert'/'random'")->required();
  rollout->add_option("--task", ro_task, "task id, suite.json#task, or task JSON")->required();
  rollout->add_option("--generators", ro_generators, "generator worker count");
  rollout->add_option("--episodes", ro_episodes, "episodes per generator");
  rollout->add_option("--seed-base", ro_seed_base, "first seed (generator g episode i uses seed-base + g*episodes + i)");
  rollout->add_option("--select", ro_select, "action selection: greedy|sample");
  rollout->add_option("--filters", ro_filters, "filter chain, e.g. 'truncate=100,success_only'");
  rollout->add_option("--report", ro_report, "report file")->required();
  rollout->add_option("--to-store", ro_store, "also record accepted episodes into this store");

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "run the benchmark suite and compare agents");
  std::string bench_suite = "builtin", bench_report;
  std::vector<std::string> bench_policies;
  uint32_t bench_seeds = 0, bench_generators = 4;
  bench->add_option("--suite", bench_suite, "suite JSON file or 'builtin'");
  bench->add_option("--policy", bench_policies, "policy file, 'expert' or 'random' (repeatable)")
      ->required();
  bench->add_option("--seeds", bench_seeds, "seeds per task (0 = the task's full list)");
  bench->add_option("--generators", bench_generators, "pipeline generators per task");
  bench->add_option("--report", bench_report, "report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help() << "\n";
    return kExitUsage;
  }

  if (gen->parsed()) {
    std::ostringstream echo;
    echo << "{\"task\": \"" << gen_task << "\", \"episodes\": " << gen_episodes
         << ", \"seed\": " << gen_seed << ", \"out\": \"" << gen_out << "\"}";
    echo_config("gen-demos", echo.str());
    tf_status rc = tf_gen_demos(gen_task.c_str(), gen_episodes, gen_seed, gen_out.c_str());
    if (rc != TF_OK) return report_failure("gen-demos", rc);
    std::cout << "wrote " << gen_episodes << " episodes to " << gen_out << "\n";
    return kExitOk;
  }

  if (ingest->parsed()) {
    uint64_t count = 0;
    tf_status rc =
        tf_ingest(ingest_input.c_str(), ingest_store.c_str(), ingest_clip_len, &count);
    if (rc != TF_OK) return report_failure("ingest", rc);
    std::cout << "ingested " << count << " episodes into " << ingest_store << "\n";
    return kExitOk;
  }

  if (inspect->parsed()) {
    size_t needed = 0;
    tf_status rc = tf_inspect(inspect_store.c_str(),
                              inspect_episode.empty() ? nullptr : inspect_episode.c_str(),
                              inspect_label.empty() ? nullptr : inspect_label.c_str(), nullptr, 0,
                              &needed);
    if (rc != TF_OK) return report_failure("inspect", rc);
    std::string text(needed, '\0');
    rc = tf_inspect(inspect_store.c_str(),
                    inspect_episode.empty() ? nullptr : inspect_episode.c_str(),
                    inspect_label.empty() ? nullptr : inspect_label.c_str(), text.data(),
                    text.size(), nullptr);
    if (rc != TF_OK) return report_failure("inspect", rc);
    std::cout << text.c_str();
    return kExitOk;
  }

  if (bc->parsed()) {
    std::string config = bc_config.empty() ? "{}" : read_file(bc_config);
    if (config.empty() && !bc_config.empty()) return kExitRuntime;
    std::vector<std::pair<std::string, std::string>> overrides;
    if (bc_steps_set) overrides.emplace_back("total_steps", std::to_string(bc_steps));
    if (bc_seed_set) overrides.emplace_back("seed", std::to_string(bc_seed_flag));
    config = apply_overrides(config, overrides);
    echo_config("train-bc", config);
    tf_status rc = tf_train_bc(bc_store.c_str(), config.c_str(), bc_out.c_str(),
                               bc_curve.empty() ? nullptr : bc_curve.c_str());
    if (rc != TF_OK) return report_failure("train-bc", rc);
    std::cout << "policy written to " << bc_out << "\n";
    return kExitOk;
  }

  if (ppo->parsed()) {
    std::string config = ppo_config.empty() ? "{}" : read_file(ppo_config);
    if (config.empty() && !ppo_config.empty()) return kExitRuntime;
    std::vector<std::pair<std::string, std::string>> overrides;
    if (ppo_steps_set) overrides.emplace_back("total_env_steps", std::to_string(ppo_steps));
    if (ppo_seed_set) overrides.emplace_back("seed", std::to_string(ppo_seed_flag));
    config = apply_overrides(config, overrides);
    echo_config("train-ppo", config);
    tf_status rc = tf_train_ppo(ppo_task.c_str(), ppo_anchor.c_str(), config.c_str(),
                                ppo_out.c_str(), ppo_metrics.empty() ? nullptr : ppo_metrics.c_str());
    if (rc != TF_OK) return report_failure("train-ppo", rc);
    std::cout << "policy written to " << ppo_out << "\n";
    return kExitOk;
  }

  if (rollout->parsed()) {
    std::string stats(4096, '\0');
    const char* policy =
        (ro_policy == "expert") ? nullptr : ro_policy.c_str();  // expert runs without a file
    tf_status rc = tf_rollout(policy, ro_task.c_str(), ro_generators, ro_episodes, ro_seed_base,
                              ro_select.c_str(), ro_filters.empty() ? nullptr : ro_filters.c_str(),
                              ro_report.c_str(), ro_store.empty() ? nullptr : ro_store.c_str(),
                              stats.data(), stats.size());
    if (rc != TF_OK) return report_failure("rollout", rc);
    std::cout << "rollout stats: " << stats.c_str() << "\n";
    std::cout << "report written to " << ro_report << "\n";
    return kExitOk;
  }

  if (bench->parsed()) {
    std::vector<const char*> policies;
    policies.reserve(bench_policies.size());
    for (const std::string& p : bench_policies) policies.push_back(p.c_str());
    tf_status rc = tf_bench(bench_suite.c_str(), policies.data(), policies.size(), bench_seeds,
                            bench_generators, bench_report.c_str());
    if (rc != TF_OK) return report_failure("bench", rc);
    std::string text = read_file(bench_report);
    std::cout << text;
    return kExitOk;
  }

  std::cerr << "usage error: no subcommand\n" << app.help() << "\n";
  return kExitUsage;
}
