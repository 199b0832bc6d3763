// Acceptance suite: one test case per criterion, each printing a PASS/FAIL
// line. Everything runs at desk scale against independent oracles (source
// arrays, brute-force accounting, finite differences, sequential reruns).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "bench.hpp"
#include "exchange.hpp"
#include "finetune.hpp"
#include "pipeline.hpp"
#include "pretrain.hpp"
#include "test_util.hpp"

using namespace tf;
using tftest::TempDir;

namespace {

void report(int criterion, const std::string& name, bool pass, const std::string& detail = "") {
  std::printf("[acceptance] criterion %2d (%s): %s%s\n", criterion, name.c_str(),
              pass ? "PASS" : "FAIL", detail.empty() ? "" : (" — " + detail).c_str());
  std::fflush(stdout);
}

double now_sec() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------------------
// shared fixture: expert demos on collect_simple + a behavior-cloned policy

struct Fixture {
  TempDir dir{"acceptance_fixture"};
  std::unique_ptr<Store> demo_store;
  TaskSpec task;
  PolicyParams bc_policy = PolicyParams::zeros({1, 1, 1});
  double bc_agreement = 0.0;
  uint64_t bc_train_steps = 0;
};

TrainConfig acceptance_bc_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.seq_len = 16;
  cfg.total_steps = 2000;
  cfg.base_lr = 0.08;
  cfg.warmup_steps = 100;
  cfg.grad_clip_norm = 1.0;
  cfg.seed = 1;
  cfg.hidden_dim = 64;
  return cfg;
}

// teacher-forced action agreement along expert trajectories
double action_agreement(const PolicyParams& params, const TaskSpec& task,
                        const std::vector<uint64_t>& seeds) {
  AgentPtr expert = scripted_expert(task);
  auto env = make_task_env(task);
  SuccessChecker checker = make_checker(task);
  uint64_t agree = 0, total = 0;
  for (uint64_t seed : seeds) {
    EpisodeRecord rec =
        run_episode(*expert, *env, task.task_id, seed, ActionSelect::greedy, checker);
    PolicyState state = PolicyState::zero(params.dims.hidden);
    for (uint64_t t = 0; t < rec.length; ++t) {
      PolicyOutput out = policy_step(params, rec.frame(t), state);
      if (argmax(out.logits) == rec.actions[t]) ++agree;
      ++total;
      state = out.next_state;
    }
  }
  return double(agree) / double(total);
}

const Fixture& fixture() {
  static Fixture f = [] {
    Fixture fx;
    fx.task = find_task(builtin_suite(), "collect_simple");
    fx.demo_store = Store::open(fx.dir.file("demo_store"));
    AgentPtr expert = scripted_expert(fx.task);
    auto env = make_task_env(fx.task);
    SuccessChecker checker = make_checker(fx.task);
    for (uint64_t seed = 1000; seed < 1200; ++seed) {  // held-out eval uses seeds 1..100
      EpisodeRecord rec =
          run_episode(*expert, *env, fx.task.task_id, seed, ActionSelect::greedy, checker);
      fx.demo_store->write_episode(record_to_episode_data(rec), 64);
    }
    TrainConfig cfg = acceptance_bc_config();
    TrainResult result = train_bc(*fx.demo_store, cfg);
    fx.bc_policy = result.params;
    fx.bc_train_steps = cfg.total_steps;
    fx.bc_agreement = action_agreement(fx.bc_policy, fx.task, fx.task.eval_seeds);
    return fx;
  }();
  return f;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("criterion 1: storage round-trip at scale") {
  double t0 = now_sec();
  TempDir dir("acc_storage");
  auto store = Store::open(dir.str());
  Rng rng(20260801);
  const uint32_t clip_choices[3] = {1, 4, 64};

  bool all_equal = true;
  uint64_t episodes = 1000, reads = 0;
  for (uint64_t e = 0; e < episodes; ++e) {
    uint64_t length = 1 + rng.below(512);
    uint32_t clip_len = clip_choices[rng.below(3)];
    EpisodeData ep;
    ep.id = derive_id("acc_storage", e);
    ModalityFrames obs;
    obs.frame_size = 1 + uint32_t(rng.below(8));
    obs.bytes.resize(length * obs.frame_size);
    for (auto& b : obs.bytes) b = uint8_t(rng.below(256));
    ModalityFrames act;
    act.frame_size = 1;
    act.bytes.resize(length);
    for (auto& b : act.bytes) b = uint8_t(rng.below(256));
    ep.modalities[Modality::observation] = obs;
    ep.modalities[Modality::action] = act;
    store->write_episode(ep, clip_len);

    auto check_range = [&](uint64_t start, uint64_t len) {
      Segment seg =
          store->read_segment(ep.id, start, len, {Modality::observation, Modality::action});
      ++reads;
      bool ok =
          std::equal(seg.frames.at(Modality::observation).bytes.begin(),
                     seg.frames.at(Modality::observation).bytes.end(),
                     obs.bytes.begin() + long(start * obs.frame_size)) &&
          std::equal(seg.frames.at(Modality::action).bytes.begin(),
                     seg.frames.at(Modality::action).bytes.end(), act.bytes.begin() + long(start));
      all_equal = all_equal && ok;
    };
    for (int k = 0; k < 10; ++k) {
      uint64_t start = rng.below(length);
      uint64_t len = 1 + rng.below(length - start);
      check_range(start, len);
    }
    check_range(0, length);
  }
  double elapsed = now_sec() - t0;
  bool pass = all_equal && elapsed < 60.0;
  report(1, "storage round-trip", pass,
         std::to_string(episodes) + " episodes, " + std::to_string(reads) + " reads in " +
             fmt(elapsed) + " s");
  CHECK(pass);
}

TEST_CASE("criterion 2: corruption detection on single-bit flips") {
  TempDir dir("acc_corrupt");
  auto store = Store::open(dir.str());
  Rng rng(4242);

  struct ClipRef {
    EpisodeId id;
    uint64_t offset;         // of the 21-byte key
    uint64_t payload_len;
    uint32_t clip_index;
    uint64_t start_frame;
    uint64_t frame_count;
  };
  std::vector<ClipRef> clips;
  for (uint64_t e = 0; e < 40; ++e) {
    uint64_t length = 1 + rng.below(60);
    uint32_t clip_len = 1 + uint32_t(rng.below(8));
    EpisodeData ep;
    ep.id = derive_id("acc_corrupt", e);
    ModalityFrames obs;
    obs.frame_size = 1 + uint32_t(rng.below(4));
    obs.bytes.resize(length * obs.frame_size);
    for (auto& b : obs.bytes) b = uint8_t(rng.below(256));
    ep.modalities[Modality::observation] = std::move(obs);
    EpisodeManifest m = store->write_episode(ep, clip_len);
    const ManifestModality& info = m.modalities.at(Modality::observation);
    for (uint32_t c = 0; c < info.clips.size(); ++c) {
      clips.push_back({m.id, info.clips[c].offset,
                       uint64_t(m.frame_count_of_clip(c)) * info.frame_size, c,
                       uint64_t(c) * clip_len, m.frame_count_of_clip(c)});
    }
  }

  int detected = 0;
  const int trials = 100;
  std::fstream file(dir.file("data.bin"), std::ios::in | std::ios::out | std::ios::binary);
  for (int t = 0; t < trials; ++t) {
    const ClipRef& clip = clips[rng.below(clips.size())];
    uint64_t byte_off = clip.offset + 21 + 4 + 1 + 2 + rng.below(clip.payload_len);
    int bit = int(rng.below(8));

    char original;
    file.seekg(long(byte_off));
    file.read(&original, 1);
    char flipped = char(original ^ (1 << bit));
    file.seekp(long(byte_off));
    file.write(&flipped, 1);
    file.flush();

    try {
      store->read_segment(clip.id, clip.start_frame, clip.frame_count, {Modality::observation});
    } catch (const Error& e) {
      std::string what = e.what();
      if (e.code() == Errc::corrupt && what.find(id_to_hex(clip.id)) != std::string::npos &&
          what.find("clip=" + std::to_string(clip.clip_index)) != std::string::npos)
        ++detected;
    }

    file.seekp(long(byte_off));
    file.write(&original, 1);
    file.flush();
  }
  bool pass = detected == trials;
  report(2, "corruption detection", pass,
         std::to_string(detected) + "/" + std::to_string(trials) + " flips caught and named");
  CHECK(pass);
}

TEST_CASE("criterion 3: sampler coverage and continuity across shards") {
  Rng rng(99);
  bool pass = true;
  std::string detail;
  for (int trial = 0; trial < 10 && pass; ++trial) {
    TempDir dir("acc_sampler");
    auto store = Store::open(dir.str());
    uint32_t episodes = 1 + uint32_t(rng.below(50));
    std::map<uint32_t, uint64_t> lengths;
    for (uint32_t e = 0; e < episodes; ++e) {
      uint64_t length = 1 + rng.below(50);
      lengths[e] = length;
      EpisodeData ep;
      ep.id = derive_id("acc_sampler", mix_seed(trial, e));
      ModalityFrames frames;
      frames.frame_size = 8;
      frames.bytes.resize(length * 8);
      for (uint64_t f = 0; f < length; ++f) {
        put_u32be(frames.bytes.data() + f * 8, e);
        put_u32be(frames.bytes.data() + f * 8 + 4, uint32_t(f));
      }
      ep.modalities[Modality::observation] = std::move(frames);
      store->write_episode(ep, 1 + uint32_t(rng.below(16)));
    }
    uint32_t batch_size = 1 + uint32_t(rng.below(4));
    uint32_t seq_len = 1 + uint32_t(rng.below(9));

    for (uint32_t num_shards : {1u, 2u, 4u}) {
      std::map<std::pair<uint32_t, uint32_t>, int> emitted;
      for (uint32_t shard = 0; shard < num_shards; ++shard) {
        SamplerPlan plan;
        try {
          plan = build_plan(store->manifests(), batch_size, seq_len, num_shards, shard,
                            mix_seed(trial, num_shards));
        } catch (const Error& e) {
          pass = pass && e.code() == Errc::empty;
          continue;
        }
        std::vector<std::pair<uint32_t, uint32_t>> prev(batch_size);
        std::vector<bool> prev_valid(batch_size, false);
        for (uint64_t k = 0;; ++k) {
          auto batch = next_batch(plan, k, *store, {Modality::observation});
          if (!batch) break;
          for (uint32_t lane = 0; lane < batch_size; ++lane) {
            for (uint32_t t = 0; t < seq_len; ++t) {
              size_t cell = batch->at(lane, t);
              if (!batch->mask[cell]) continue;
              const uint8_t* p = batch->frame(Modality::observation, lane, t);
              uint32_t tag = get_u32be(p), frame = get_u32be(p + 4);
              emitted[{tag, frame}] += 1;
              if ((batch->first[cell] == 1) != (frame == 0)) pass = false;
              if (!batch->first[cell]) {
                if (!prev_valid[lane] || prev[lane].first != tag ||
                    prev[lane].second + 1 != frame)
                  pass = false;  // continuity breach
              }
              prev[lane] = {tag, frame};
              prev_valid[lane] = true;
            }
          }
        }
      }
      uint64_t expected = 0;
      for (auto& [e, len] : lengths) expected += len;
      if (emitted.size() != expected) pass = false;
      for (auto& [key, count] : emitted) {
        if (count != 1 || key.second >= lengths[key.first]) pass = false;
      }
      if (!pass) detail = "trial " + std::to_string(trial) + " shards " + std::to_string(num_shards);
    }
  }
  report(3, "sampler coverage & continuity", pass, detail);
  CHECK(pass);
}

namespace {

SeqBatch random_bc_batch(Rng& rng, const PolicyDims& d, uint32_t lanes, uint32_t steps) {
  SeqBatch batch;
  batch.lanes = lanes;
  batch.steps = steps;
  batch.obs_dim = d.obs_dim;
  size_t cells = size_t(lanes) * steps;
  batch.obs.resize(cells * d.obs_dim);
  for (double& v : batch.obs) v = 2.0 * rng.uniform01() - 1.0;
  batch.first.assign(cells, 0);
  batch.mask.assign(cells, 1);
  batch.actions.resize(cells);
  for (auto& a : batch.actions) a = int(rng.below(d.num_actions));
  for (uint32_t l = 0; l < lanes; ++l) {
    batch.first[batch.at(l, 0)] = rng.below(2) ? 1 : 0;
    for (uint32_t t = 1; t < steps; ++t) batch.first[batch.at(l, t)] = rng.below(4) == 0;
    if (rng.below(2)) {
      for (uint32_t t = steps - 1 - uint32_t(rng.below(2)); t < steps; ++t)
        batch.mask[batch.at(l, t)] = 0;
    }
  }
  if (batch.masked_count() == 0) batch.mask[0] = 1;
  return batch;
}

void attach_ppo_fields(Rng& rng, const PolicyParams& params, SeqBatch& batch,
                       double old_logp_noise) {
  const PolicyDims& d = params.dims;
  size_t cells = batch.mask.size();
  std::vector<PolicyState> states(batch.lanes, PolicyState::zero(d.hidden));
  SeqOutputs out = evaluate_sequence(params, batch, states);
  PolicyParams anchor = init_params(d.obs_dim, d.hidden, d.num_actions, rng.next());
  SeqOutputs anchor_out = evaluate_sequence(anchor, batch, states);
  batch.old_logp.resize(cells);
  batch.advantages.resize(cells);
  batch.returns.resize(cells);
  batch.anchor_logp.resize(cells * d.num_actions);
  for (size_t i = 0; i < cells; ++i) {
    std::vector<double> logits(out.logits.begin() + long(i * d.num_actions),
                               out.logits.begin() + long((i + 1) * d.num_actions));
    std::vector<double> lp = log_softmax(logits);
    batch.old_logp[i] = lp[size_t(batch.actions[i])] + (rng.uniform01() - 0.5) * 2 * old_logp_noise;
    batch.advantages[i] = 2.0 * rng.uniform01() - 1.0;
    batch.returns[i] = 2.0 * rng.uniform01() - 1.0;
    std::vector<double> alog(anchor_out.logits.begin() + long(i * d.num_actions),
                             anchor_out.logits.begin() + long((i + 1) * d.num_actions));
    std::vector<double> alp = log_softmax(alog);
    std::copy(alp.begin(), alp.end(), batch.anchor_logp.begin() + long(i * d.num_actions));
  }
}

double fd_worst_error(PolicyParams params, const SeqBatch& batch, const Objective& objective) {
  std::vector<PolicyState> states(batch.lanes, PolicyState::zero(params.dims.hidden));
  GradResult grad = grad_loss(params, batch, states, objective);
  std::vector<double*> entries, grads;
  params.for_each_array([&](std::vector<double>& a) {
    for (double& v : a) entries.push_back(&v);
  });
  grad.grads.for_each_array([&](std::vector<double>& a) {
    for (double& v : a) grads.push_back(&v);
  });
  auto loss_at = [&] {
    SeqOutputs out = evaluate_sequence(params, batch, states);
    return objective.eval(batch, out.logits, out.values, nullptr, nullptr);
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    double saved = *entries[i];
    *entries[i] = saved + h;
    double up = loss_at();
    *entries[i] = saved - h;
    double down = loss_at();
    *entries[i] = saved;
    double fd = (up - down) / (2 * h);
    double err = std::abs(fd - *grads[i]) / std::max({std::abs(fd), std::abs(*grads[i]), 1e-3});
    worst = std::max(worst, err);
  }
  return worst;
}

bool ratios_near_clip(const PolicyParams& params, const SeqBatch& batch, double eps) {
  std::vector<PolicyState> states(batch.lanes, PolicyState::zero(params.dims.hidden));
  SeqOutputs out = evaluate_sequence(params, batch, states);
  uint32_t na = params.dims.num_actions;
  for (size_t i = 0; i < batch.mask.size(); ++i) {
    if (!batch.mask[i]) continue;
    std::vector<double> logits(out.logits.begin() + long(i * na),
                               out.logits.begin() + long((i + 1) * na));
    double ratio = std::exp(log_softmax(logits)[size_t(batch.actions[i])] - batch.old_logp[i]);
    if (std::abs(ratio - (1.0 - eps)) < 1e-3 || std::abs(ratio - (1.0 + eps)) < 1e-3) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("criterion 4: gradients match finite differences") {
  Rng rng(314159);
  double worst_bc = 0.0, worst_ppo = 0.0;
  int bc_instances = 0, ppo_instances = 0;
  while (bc_instances < 30) {
    PolicyParams params = init_params(3, 4, 3, rng.next());
    SeqBatch batch = random_bc_batch(rng, params.dims, 2, 4);
    ++bc_instances;
    worst_bc = std::max(worst_bc, fd_worst_error(params, batch, BCObjective{}));
  }
  PPOConfig cfg;
  cfg.clip_eps = 0.2;
  cfg.kl_coef = 0.3;
  cfg.value_coef = 0.5;
  cfg.entropy_coef = 0.01;
  while (ppo_instances < 30) {
    PolicyParams params = init_params(3, 4, 3, rng.next());
    SeqBatch batch = random_bc_batch(rng, params.dims, 2, 4);
    attach_ppo_fields(rng, params, batch, 0.4);
    if (ratios_near_clip(params, batch, cfg.clip_eps)) continue;  // avoid the clip kink
    ++ppo_instances;
    worst_ppo = std::max(worst_ppo, fd_worst_error(params, batch, PPOObjective{cfg}));
  }
  bool pass = worst_bc < 1e-4 && worst_ppo < 1e-4;
  report(4, "gradient correctness", pass,
         "worst rel err: bc " + fmt(worst_bc) + ", ppo " + fmt(worst_ppo) + " over " +
             std::to_string(bc_instances + ppo_instances) + " instances");
  CHECK(pass);
}

TEST_CASE("criterion 5: truncated-BPTT forward equivalence") {
  Rng rng(2718);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PolicyParams params = init_params(4, 6, 5, rng.next());
    SeqBatch whole = random_bc_batch(rng, params.dims, 2, 12);
    std::fill(whole.mask.begin(), whole.mask.end(), 1);
    std::vector<PolicyState> init(2, PolicyState::zero(6));
    SeqOutputs full = evaluate_sequence(params, whole, init);

    uint32_t window = 3;
    std::vector<PolicyState> carry = init;
    for (uint32_t from = 0; from < 12; from += window) {
      SeqBatch w;
      w.lanes = 2;
      w.steps = window;
      w.obs_dim = 4;
      w.obs.resize(size_t(2) * window * 4);
      w.first.resize(size_t(2) * window);
      w.mask.assign(size_t(2) * window, 1);
      for (uint32_t l = 0; l < 2; ++l) {
        for (uint32_t t = 0; t < window; ++t) {
          size_t src = whole.at(l, from + t);
          std::copy_n(whole.obs.begin() + long(src * 4), 4, w.obs.begin() + long(w.at(l, t) * 4));
          w.first[w.at(l, t)] = whole.first[src];
        }
      }
      SeqOutputs part = evaluate_sequence(params, w, carry);
      carry = part.final_states;
      for (uint32_t l = 0; l < 2; ++l) {
        for (uint32_t t = 0; t < window; ++t) {
          for (uint32_t a = 0; a < 5; ++a) {
            double diff = std::abs(part.logits[(w.at(l, t)) * 5 + a] -
                                   full.logits[whole.at(l, from + t) * 5 + a]);
            worst = std::max(worst, diff);
          }
        }
      }
    }
  }
  bool pass = worst <= 1e-12;
  report(5, "windowed forward equivalence", pass, "worst per-logit diff " + fmt(worst));
  CHECK(pass);
}

TEST_CASE("criterion 6: recursive GAE equals the direct-summation oracle exactly") {
  Rng rng(161803);
  bool exact = true;
  for (int trial = 0; trial < 1000 && exact; ++trial) {
    size_t n = 1 + rng.below(10);
    std::vector<double> rewards(n), values(n);
    std::vector<uint8_t> dones(n);
    for (size_t i = 0; i < n; ++i) {
      rewards[i] = 4.0 * rng.uniform01() - 2.0;
      values[i] = 4.0 * rng.uniform01() - 2.0;
      dones[i] = rng.below(4) == 0;
    }
    double bootstrap = 4.0 * rng.uniform01() - 2.0;
    double gamma = rng.uniform01(), lambda = rng.uniform01();
    GaeResult fast = compute_gae(rewards, values, dones, bootstrap, gamma, lambda);
    for (size_t t = 0; t < n && exact; ++t) {
      double acc = 0.0;  // expand the sum for position t, innermost first
      for (size_t j = n; j-- > t;) {
        double nonterminal = dones[j] ? 0.0 : 1.0;
        double next_value = (j + 1 < n) ? values[j + 1] : bootstrap;
        double delta = rewards[j] + gamma * next_value * nonterminal - values[j];
        acc = delta + gamma * lambda * nonterminal * acc;
      }
      if (acc != fast.advantages[t]) exact = false;
      if (fast.returns[t] != fast.advantages[t] + values[t]) exact = false;
    }
  }
  report(6, "GAE oracle equivalence", exact, "1000 randomized instances, exact equality");
  CHECK(exact);
}

TEST_CASE("criterion 7: a huge KL coefficient pins the policy to its anchor") {
  const Fixture& fx = fixture();
  PPOConfig cfg;
  cfg.kl_coef = 1000.0;
  cfg.num_envs = 8;
  cfg.fragment_len = 64;
  cfg.epochs_per_update = 2;
  cfg.minibatch_count = 2;
  cfg.lr = 3e-3;
  cfg.total_env_steps = 30000;
  cfg.seed = 11;

  PPOResult result = train_ppo([&](uint32_t) { return make_task_env(fx.task); }, fx.bc_policy,
                               fx.bc_policy, cfg);

  // mean per-state KL over fresh greedy rollouts of the trained policy
  PolicyAgent agent(result.params);
  auto env = make_task_env(fx.task);
  double kl_sum = 0.0;
  uint64_t states = 0;
  for (uint64_t seed : fx.task.eval_seeds) {
    std::vector<double> obs = env->reset(seed);
    PolicyState mem = agent.initial_state();
    PolicyState anchor_mem = PolicyState::zero(fx.bc_policy.dims.hidden);
    while (true) {
      PolicyOutput out = policy_step(result.params, obs, mem);
      PolicyOutput anchor_out = policy_step(fx.bc_policy, obs, anchor_mem);
      kl_sum += kl_logits(out.logits, anchor_out.logits);
      ++states;
      StepResult sr = env->step(argmax(out.logits));
      if (sr.done) break;
      obs = sr.obs;
      mem = out.next_state;
      anchor_mem = anchor_out.next_state;
    }
  }
  double mean_kl = kl_sum / double(states);
  bool pass = mean_kl <= 0.01;
  report(7, "KL pinning (rho=1000)", pass, "mean KL " + fmt(mean_kl) + " over " +
                                               std::to_string(states) + " states");
  CHECK(pass);
}

TEST_CASE("criterion 8: learning end-to-end (BC then PPO)") {
  double t0 = now_sec();
  const Fixture& fx = fixture();
  bool bc_pass = fx.bc_agreement >= 0.90 && fx.bc_train_steps <= 2000;

  PPOConfig cfg;
  cfg.kl_coef = 0.2;
  cfg.num_envs = 8;
  cfg.fragment_len = 64;
  cfg.epochs_per_update = 2;
  cfg.minibatch_count = 2;
  cfg.lr = 5e-3;
  cfg.entropy_coef = 0.01;
  cfg.total_env_steps = 200000;
  cfg.seed = 2;
  cfg.eval_every_env_steps = 4096;
  cfg.stop_at_eval_score = 0.8;

  SuccessChecker checker = make_checker(fx.task);
  EvalFn eval_fn = [&](const PolicyParams& params) {
    PolicyAgent agent(params);
    auto env = make_task_env(fx.task);
    double successes = 0;
    for (uint64_t seed : fx.task.eval_seeds) {
      EpisodeRecord rec =
          run_episode(agent, *env, fx.task.task_id, seed, ActionSelect::greedy, checker);
      successes += rec.success ? 1.0 : 0.0;
    }
    return successes / double(fx.task.eval_seeds.size());
  };

  PPOResult result = train_ppo([&](uint32_t) { return make_task_env(fx.task); }, fx.bc_policy,
                               fx.bc_policy, cfg, eval_fn);
  double final_success = eval_fn(result.params);
  double elapsed = now_sec() - t0;
  bool ppo_pass = final_success >= 0.8 && result.env_steps <= 200000 && elapsed < 1800.0;

  bool pass = bc_pass && ppo_pass;
  report(8, "end-to-end learning", pass,
         "bc agreement " + fmt(fx.bc_agreement) + " (steps " + std::to_string(fx.bc_train_steps) +
             "), ppo success " + fmt(final_success) + " at " + std::to_string(result.env_steps) +
             " env steps in " + fmt(elapsed) + " s");
  CHECK(pass);
}

TEST_CASE("criterion 9: pipeline conservation and oracle equivalence") {
  // small dedicated task so randomized configs run quickly
  TaskSpec task;
  task.task_id = "acc_pipe";
  task.mode = "simple";
  task.grid.width = 5;
  task.grid.height = 5;
  task.grid.num_items = 1;
  task.grid.max_steps = 24;
  task.reward_events = {{kEventPickedItem, 1.0}, {kEventGoalDone, 5.0}};
  task.success_predicate = "inventory_ge";
  task.success_param = 1;
  task.eval_seeds = {1};
  task.validate();
  SuccessChecker checker = make_checker(task);

  Rng rng(606);
  bool pass = true;
  std::string detail;
  const uint32_t caps[3] = {1, 4, 64};
  for (int trial = 0; trial < 20 && pass; ++trial) {
    PipelineConfig cfg;
    cfg.num_generators = 1 + uint32_t(rng.below(8));
    cfg.episodes_per_generator = 2 + uint32_t(rng.below(5));
    cfg.queue_capacity = caps[rng.below(3)];
    cfg.num_filter_workers = 1 + uint32_t(rng.below(3));
    cfg.seed_base = rng.below(10000);
    if (rng.below(2)) cfg.filter_spec = "success_only";

    // fault injection: one generator dies partway through
    bool inject = rng.below(2) == 0;
    uint32_t faulty = uint32_t(rng.below(cfg.num_generators));
    uint32_t crash_after = 1 + uint32_t(rng.below(cfg.episodes_per_generator * 20));
    AgentFactory agents = [&](uint32_t g) -> AgentPtr {
      struct Doomed : Agent {
        uint32_t remaining;
        explicit Doomed(uint32_t n) : remaining(n) {}
        PolicyState initial_state() const override { return PolicyState::zero(1); }
        PolicyOutput step(const std::vector<double>&, const PolicyState&) override {
          if (remaining == 0) throw std::runtime_error("fault injection");
          --remaining;
          PolicyOutput out;
          out.logits.assign(kNumActions, 0.0);
          out.next_state = PolicyState::zero(1);
          return out;
        }
        int num_actions() const override { return kNumActions; }
      };
      if (inject && g == faulty) return std::make_unique<Doomed>(crash_after);
      return std::make_unique<RandomAgent>(kNumActions);
    };

    PipelineResult result =
        run_pipeline(agents, [&](uint32_t) { return make_task_env(task); }, task.task_id,
                     checker, ActionSelect::sample, cfg);

    uint64_t total = uint64_t(cfg.num_generators) * cfg.episodes_per_generator;
    if (result.stats.produced != total ||
        result.stats.recorded + result.stats.filtered_out + result.stats.failed != total) {
      pass = false;
      detail = "conservation breach in trial " + std::to_string(trial);
      break;
    }

    // exactly-once per seed, and outcome equality against a sequential rerun
    std::set<uint64_t> seen;
    auto env = make_task_env(task);
    for (const EpisodeOutcome& o : result.outcomes) {
      if (!seen.insert(o.seed).second) {
        pass = false;
        detail = "duplicate seed in trial " + std::to_string(trial);
        break;
      }
      if (o.status == OutcomeStatus::failed) continue;
      RandomAgent oracle_agent(kNumActions);
      EpisodeRecord rec =
          run_episode(oracle_agent, *env, task.task_id, o.seed, ActionSelect::sample, checker);
      bool expect_recorded = cfg.filter_spec.empty() || rec.success;
      bool matches = o.episode_return == rec.total_return && o.success == rec.success &&
                     o.length == rec.length &&
                     (o.status == OutcomeStatus::ok) == expect_recorded;
      if (!matches) {
        pass = false;
        detail = "oracle mismatch at seed " + std::to_string(o.seed);
        break;
      }
    }
    if (seen.size() != total) {
      pass = false;
      detail = "missing seeds in trial " + std::to_string(trial);
    }
  }
  report(9, "pipeline conservation & oracle equivalence", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion 10: byte-identical repeated runs") {
  const Fixture& fx = fixture();
  TempDir dir("acc_determinism");

  auto read_bytes = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };

  // gen-demos twice
  bool demos_equal = true;
  AgentPtr expert = scripted_expert(fx.task);
  auto env = make_task_env(fx.task);
  SuccessChecker checker = make_checker(fx.task);
  for (int run = 0; run < 2; ++run) {
    std::string out = dir.file("demos" + std::to_string(run));
    std::filesystem::create_directories(out);
    for (uint64_t seed = 30; seed < 40; ++seed) {
      EpisodeRecord rec =
          run_episode(*expert, *env, fx.task.task_id, seed, ActionSelect::greedy, checker);
      exchange_write(rec, out + "/" + exchange_file_name(fx.task.task_id, seed));
    }
  }
  for (uint64_t seed = 30; seed < 40; ++seed) {
    std::string name = "/" + exchange_file_name(fx.task.task_id, seed);
    demos_equal = demos_equal &&
                  read_bytes(dir.file("demos0") + name) == read_bytes(dir.file("demos1") + name);
  }

  // train-bc twice (policy file + loss curve)
  TrainConfig cfg = acceptance_bc_config();
  cfg.total_steps = 120;
  bool train_equal = true;
  for (int run = 0; run < 2; ++run) {
    TrainResult result = train_bc(*fx.demo_store, cfg);
    save_policy(result.params, dir.file("bc" + std::to_string(run) + ".policy"));
    write_loss_curve(result.loss_curve, dir.file("curve" + std::to_string(run) + ".txt"));
  }
  train_equal = read_bytes(dir.file("bc0.policy")) == read_bytes(dir.file("bc1.policy")) &&
                read_bytes(dir.file("curve0.txt")) == read_bytes(dir.file("curve1.txt"));

  // evaluate twice
  std::vector<TaskSpec> suite{fx.task};
  PipelineConfig pipe;
  pipe.num_generators = 4;
  auto eval_once = [&] {
    BenchReport r = evaluate(
        [&](const TaskSpec&) { return std::make_unique<PolicyAgent>(fx.bc_policy); }, "bc", "x",
        suite, 20, pipe);
    return render_bench_report({r}, {}, "criterion-10");
  };
  bool eval_equal = eval_once() == eval_once();

  bool pass = demos_equal && train_equal && eval_equal;
  report(10, "determinism of artifacts", pass,
         std::string("demos ") + (demos_equal ? "ok" : "DIFFER") + ", train " +
             (train_equal ? "ok" : "DIFFER") + ", evaluate " + (eval_equal ? "ok" : "DIFFER"));
  CHECK(pass);
}

TEST_CASE("criterion 11: closed loop from rollout back into training") {
  const Fixture& fx = fixture();
  TempDir dir("acc_closed_loop");

  PipelineConfig cfg;
  cfg.num_generators = 4;
  cfg.episodes_per_generator = 15;
  cfg.seed_base = 5000;
  cfg.store_path = dir.file("loop_store");
  cfg.store_clip_len = 64;

  SuccessChecker checker = make_checker(fx.task);
  PipelineResult rollout = run_pipeline(
      [&](uint32_t) { return std::make_unique<PolicyAgent>(fx.bc_policy); },
      [&](uint32_t) { return make_task_env(fx.task); }, fx.task.task_id, checker,
      ActionSelect::greedy, cfg);

  auto store = Store::open(cfg.store_path);
  bool ingestible = store->episode_count() == rollout.stats.recorded &&
                    rollout.stats.recorded == 60;

  TrainConfig train_cfg;
  train_cfg.batch_size = 8;
  train_cfg.seq_len = 16;
  train_cfg.total_steps = 500;
  train_cfg.base_lr = 0.08;
  train_cfg.warmup_steps = 50;
  train_cfg.hidden_dim = 32;
  train_cfg.seed = 4;
  TrainResult result = train_bc(*store, train_cfg);

  double first = result.loss_curve.front().second;
  double best = first;
  for (const auto& [step, loss] : result.loss_curve) best = std::min(best, loss);
  bool halved = best <= 0.5 * first;

  bool pass = ingestible && halved;
  report(11, "closed-loop data workflow", pass,
         "recorded " + std::to_string(rollout.stats.recorded) + ", loss " + fmt(first) + " -> " +
             fmt(best));
  CHECK(pass);
}
