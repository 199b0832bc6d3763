#include <doctest.h>

#include <cmath>
#include <fstream>

#include "policy.hpp"
#include "pretrain.hpp"
#include "test_util.hpp"

using namespace tf;
using tftest::TempDir;

namespace {

PolicyParams tiny_fixed_params() {
  PolicyParams p = PolicyParams::zeros({3, 2, 2});
  p.w1 = {0.1, -0.2, 0.3, 0.05, 0.15, -0.25};
  p.b1 = {0.01, -0.02};
  p.wm = {0.2, -0.1, 0.15, 0.05};
  p.wh = {-0.3, 0.25, 0.1, 0.2};
  p.bm = {0.03, -0.01};
  p.wa = {0.5, -0.4, -0.2, 0.6};
  p.ba = {0.02, -0.03};
  p.wv = {0.7, -0.8};
  p.bv = {0.04};
  return p;
}

SeqBatch random_batch(Rng& rng, uint32_t lanes, uint32_t steps, uint32_t obs_dim,
                      uint32_t num_actions, bool with_padding) {
  SeqBatch batch;
  batch.lanes = lanes;
  batch.steps = steps;
  batch.obs_dim = obs_dim;
  batch.obs.resize(size_t(lanes) * steps * obs_dim);
  for (double& v : batch.obs) v = 2.0 * rng.uniform01() - 1.0;
  batch.first.assign(size_t(lanes) * steps, 0);
  batch.mask.assign(size_t(lanes) * steps, 1);
  batch.actions.resize(size_t(lanes) * steps);
  for (auto& a : batch.actions) a = int(rng.below(num_actions));
  for (uint32_t l = 0; l < lanes; ++l) {
    batch.first[batch.at(l, 0)] = rng.below(2) ? 1 : 0;
    for (uint32_t t = 1; t < steps; ++t) batch.first[batch.at(l, t)] = rng.below(4) == 0;
    if (with_padding && rng.below(2)) {
      uint32_t cut = 1 + uint32_t(rng.below(steps));
      for (uint32_t t = cut; t < steps; ++t) batch.mask[batch.at(l, t)] = 0;
    }
  }
  return batch;
}

std::vector<double*> param_entries(PolicyParams& p) {
  std::vector<double*> out;
  p.for_each_array([&](std::vector<double>& a) {
    for (double& v : a) out.push_back(&v);
  });
  return out;
}

// hybrid relative error used for finite-difference checks
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double evaluate_bc_loss(const PolicyParams& p, const SeqBatch& batch) {
  std::vector<PolicyState> states(batch.lanes, PolicyState::zero(p.dims.hidden));
  SeqOutputs out = evaluate_sequence(p, batch, states);
  BCObjective objective;
  return objective.eval(batch, out.logits, out.values, nullptr, nullptr);
}

}  // namespace

TEST_CASE("forward pass matches the straight-line oracle") {
  PolicyParams p = tiny_fixed_params();
  std::vector<double> obs{0.5, -1.0, 0.25};
  PolicyState state{{0.1, -0.2}};
  PolicyOutput out = policy_step(p, obs, state);

  // frozen outputs, computed with an independent straight-line evaluation of
  // the cell equations before the implementation existed
  CHECK(out.logits[0] == doctest::Approx(-0.01349825645025848).epsilon(1e-14));
  CHECK(out.logits[1] == doctest::Approx(-0.02259041650893088).epsilon(1e-14));
  CHECK(out.value == doctest::Approx(-0.003630439527252269).epsilon(1e-14));
  CHECK(out.next_state.memory[0] == doctest::Approx(-0.07788691124421564).epsilon(1e-14));
  CHECK(out.next_state.memory[1] == doctest::Approx(-0.013612997929623344).epsilon(1e-14));

  // in-test oracle recomputation, kept alongside the frozen constants
  auto tanh_vec = [](std::vector<double> v) {
    for (double& x : v) x = std::tanh(x);
    return v;
  };
  std::vector<double> h = tanh_vec({p.w1[0] * obs[0] + p.w1[1] * obs[1] + p.w1[2] * obs[2] + p.b1[0],
                                    p.w1[3] * obs[0] + p.w1[4] * obs[1] + p.w1[5] * obs[2] + p.b1[1]});
  std::vector<double> m = tanh_vec(
      {p.wm[0] * 0.1 + p.wm[1] * -0.2 + p.wh[0] * h[0] + p.wh[1] * h[1] + p.bm[0],
       p.wm[2] * 0.1 + p.wm[3] * -0.2 + p.wh[2] * h[0] + p.wh[3] * h[1] + p.bm[1]});
  CHECK(out.next_state.memory[0] == doctest::Approx(m[0]).epsilon(1e-15));
  CHECK(out.logits[0] == doctest::Approx(p.wa[0] * m[0] + p.wa[1] * m[1] + p.ba[0]).epsilon(1e-15));
  CHECK(out.value == doctest::Approx(p.wv[0] * m[0] + p.wv[1] * m[1] + p.bv[0]).epsilon(1e-15));
}

TEST_CASE("zero parameters yield uniform logits and tanh-bounded memory") {
  PolicyParams p = PolicyParams::zeros({5, 4, 6});
  std::vector<double> obs{1.0, -2.0, 0.5, 3.0, -0.25};
  PolicyOutput out = policy_step(p, obs, PolicyState::zero(4));
  for (double l : out.logits) CHECK(l == 0.0);
  CHECK(out.value == 0.0);
  std::vector<double> probs = softmax(out.logits);
  for (double pr : probs) CHECK(pr == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  double sum = 0;
  for (double pr : probs) sum += pr;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  PolicyParams r = init_params(5, 4, 6, 3);
  PolicyOutput out2 = policy_step(r, obs, PolicyState::zero(4));
  for (double mval : out2.next_state.memory) {
    CHECK(mval > -1.0);
    CHECK(mval < 1.0);
  }
}

TEST_CASE("init_params is deterministic with zero biases and bounded weights") {
  PolicyParams a = init_params(7, 5, 6, 99);
  PolicyParams b = init_params(7, 5, 6, 99);
  CHECK(a.w1 == b.w1);
  CHECK(a.wm == b.wm);
  CHECK(a.wa == b.wa);
  for (double v : a.b1) CHECK(v == 0.0);
  for (double v : a.bm) CHECK(v == 0.0);
  for (double v : a.ba) CHECK(v == 0.0);
  CHECK(a.bv[0] == 0.0);
  double bound = 1.0 / std::sqrt(7.0);
  for (double v : a.w1) CHECK(std::abs(v) <= bound);
  PolicyParams c = init_params(7, 5, 6, 100);
  CHECK(a.w1 != c.w1);
}

TEST_CASE("policy file round-trips byte-exactly") {
  TempDir dir("policy_io");
  PolicyParams p = init_params(9, 6, 6, 4242);
  std::string path = dir.file("p.policy");
  save_policy(p, path);
  PolicyParams q = load_policy(path);
  CHECK(p.dims == q.dims);
  CHECK(p.w1 == q.w1);
  CHECK(p.b1 == q.b1);
  CHECK(p.wm == q.wm);
  CHECK(p.wh == q.wh);
  CHECK(p.bm == q.bm);
  CHECK(p.wa == q.wa);
  CHECK(p.ba == q.ba);
  CHECK(p.wv == q.wv);
  CHECK(p.bv == q.bv);

  // file header: magic + version + dims
  std::ifstream in(path, std::ios::binary);
  char head[17];
  in.read(head, 17);
  CHECK(std::string(head, 4) == "TFPL");
  CHECK(head[4] == 1);
  CHECK(get_u32be(reinterpret_cast<uint8_t*>(head) + 5) == 9);

  // save twice: byte-identical
  std::string path2 = dir.file("p2.policy");
  save_policy(p, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("policy load rejects truncation, bad magic, and dim mismatches") {
  TempDir dir("policy_bad");
  PolicyParams p = init_params(4, 3, 6, 1);
  std::string path = dir.file("p.policy");
  save_policy(p, path);

  // truncated
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir.file("trunc.policy"), std::ios::binary);
    out.write(bytes.data(), long(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_policy(dir.file("trunc.policy")), Error);

  // bad magic
  {
    std::ofstream out(dir.file("junk.policy"), std::ios::binary);
    out << "NOPE junk";
  }
  try {
    load_policy(dir.file("junk.policy"));
    FAIL("expected corrupt");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::corrupt);
  }

  // wrong expected dims
  try {
    load_policy(path, PolicyDims{5, 3, 6});
    FAIL("expected dim mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_arg);
  }
  CHECK(load_policy(path, PolicyDims{4, 3, 6}).dims == p.dims);
}

TEST_CASE("evaluate_sequence with first everywhere equals independent steps") {
  Rng rng(55);
  PolicyParams p = init_params(4, 3, 5, 8);
  SeqBatch batch = random_batch(rng, 2, 5, 4, 5, false);
  std::fill(batch.first.begin(), batch.first.end(), 1);

  std::vector<PolicyState> states(2, PolicyState{{0.3, -0.2, 0.9}});  // ignored: first resets
  SeqOutputs out = evaluate_sequence(p, batch, states);
  for (uint32_t l = 0; l < 2; ++l) {
    for (uint32_t t = 0; t < 5; ++t) {
      size_t cell = batch.at(l, t);
      std::vector<double> obs(batch.obs.begin() + long(cell * 4),
                              batch.obs.begin() + long((cell + 1) * 4));
      PolicyOutput step = policy_step(p, obs, PolicyState::zero(3));
      for (uint32_t a = 0; a < 5; ++a) CHECK(out.logits[cell * 5 + a] == step.logits[a]);
      CHECK(out.values[cell] == step.value);
    }
  }
}

TEST_CASE("windowed evaluation with state carry equals the whole sequence") {
  Rng rng(66);
  PolicyParams p = init_params(5, 4, 6, 17);
  SeqBatch whole = random_batch(rng, 2, 8, 5, 6, false);
  // one long lane: first only at t=0 sometimes
  std::vector<PolicyState> init(2, PolicyState::zero(4));
  SeqOutputs full = evaluate_sequence(p, whole, init);

  auto window = [&](uint32_t from, uint32_t len) {
    SeqBatch w;
    w.lanes = 2;
    w.steps = len;
    w.obs_dim = 5;
    w.obs.assign(size_t(2) * len * 5, 0.0);
    w.first.assign(size_t(2) * len, 0);
    w.mask.assign(size_t(2) * len, 1);
    for (uint32_t l = 0; l < 2; ++l) {
      for (uint32_t t = 0; t < len; ++t) {
        size_t src = whole.at(l, from + t);
        std::copy_n(whole.obs.begin() + long(src * 5), 5, w.obs.begin() + long(w.at(l, t) * 5));
        w.first[w.at(l, t)] = whole.first[src];
      }
    }
    return w;
  };

  SeqOutputs w0 = evaluate_sequence(p, window(0, 4), init);
  SeqOutputs w1 = evaluate_sequence(p, window(4, 4), w0.final_states);
  for (uint32_t l = 0; l < 2; ++l) {
    for (uint32_t t = 0; t < 8; ++t) {
      const SeqOutputs& win = t < 4 ? w0 : w1;
      size_t wcell = size_t(l) * 4 + (t % 4);
      size_t fcell = whole.at(l, t);
      for (uint32_t a = 0; a < 6; ++a)
        CHECK(std::abs(win.logits[wcell * 6 + a] - full.logits[fcell * 6 + a]) <= 1e-12);
      CHECK(std::abs(win.values[wcell] - full.values[fcell]) <= 1e-12);
    }
    for (uint32_t h = 0; h < 4; ++h)
      CHECK(w1.final_states[l].memory[h] == full.final_states[l].memory[h]);
  }
}

TEST_CASE("masked tail does not advance memory") {
  Rng rng(77);
  PolicyParams p = init_params(3, 4, 4, 5);
  SeqBatch batch = random_batch(rng, 1, 6, 3, 4, false);
  std::fill(batch.first.begin(), batch.first.end(), 0);
  batch.first[0] = 1;
  batch.mask[4] = 0;
  batch.mask[5] = 0;

  SeqOutputs out = evaluate_sequence(p, batch, {PolicyState::zero(4)});

  SeqBatch shorter = batch;
  shorter.steps = 4;
  shorter.obs.resize(size_t(4) * 3);
  shorter.first.resize(4);
  shorter.mask.resize(4);
  SeqOutputs expect = evaluate_sequence(p, shorter, {PolicyState::zero(4)});
  CHECK(out.final_states[0].memory == expect.final_states[0].memory);
}

TEST_CASE("memory reset makes outputs independent of frames before first") {
  Rng rng(88);
  PolicyParams p = init_params(4, 3, 4, 21);
  SeqBatch batch = random_batch(rng, 1, 6, 4, 4, false);
  std::fill(batch.first.begin(), batch.first.end(), 0);
  batch.first[0] = 1;
  batch.first[3] = 1;  // episode boundary at t=3

  SeqOutputs before = evaluate_sequence(p, batch, {PolicyState::zero(3)});
  // perturb all frames before the boundary
  for (uint32_t t = 0; t < 3; ++t) {
    for (uint32_t i = 0; i < 4; ++i) batch.obs[batch.at(0, t) * 4 + i] = rng.uniform01() * 10;
  }
  SeqOutputs after = evaluate_sequence(p, batch, {PolicyState::zero(3)});
  for (uint32_t t = 3; t < 6; ++t) {
    for (uint32_t a = 0; a < 4; ++a)
      CHECK(before.logits[batch.at(0, t) * 4 + a] == after.logits[batch.at(0, t) * 4 + a]);
  }
}

TEST_CASE("bc gradient matches central finite differences") {
  Rng rng(4242);
  int instances = 0;
  double worst = 0.0;
  while (instances < 12) {
    PolicyParams p = init_params(3, 4, 3, rng.next());
    SeqBatch batch = random_batch(rng, 2, 4, 3, 3, true);
    if (batch.masked_count() == 0) continue;
    ++instances;

    BCObjective objective;
    GradResult grad = grad_loss(p, batch, {PolicyState::zero(4), PolicyState::zero(4)}, objective);

    PolicyParams probe = p;
    std::vector<double*> entries = param_entries(probe);
    std::vector<double*> grads = param_entries(grad.grads);
    const double h = 1e-5;
    for (size_t i = 0; i < entries.size(); ++i) {
      double saved = *entries[i];
      *entries[i] = saved + h;
      double up = evaluate_bc_loss(probe, batch);
      *entries[i] = saved - h;
      double down = evaluate_bc_loss(probe, batch);
      *entries[i] = saved;
      double fd = (up - down) / (2 * h);
      worst = std::max(worst, rel_err(fd, *grads[i]));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient of masked-out steps is exactly zero") {
  Rng rng(31);
  PolicyParams p = init_params(3, 3, 3, 2);
  SeqBatch batch = random_batch(rng, 1, 5, 3, 3, false);
  batch.mask[3] = 0;
  batch.mask[4] = 0;

  BCObjective objective;
  GradResult full = grad_loss(p, batch, {PolicyState::zero(3)}, objective);
  // scrambling masked-out frames and targets changes nothing
  for (uint32_t t = 3; t < 5; ++t) {
    batch.actions[t] = int(rng.below(3));
    for (uint32_t i = 0; i < 3; ++i) batch.obs[t * 3 + i] = rng.uniform01() * 100;
  }
  GradResult scrambled = grad_loss(p, batch, {PolicyState::zero(3)}, objective);
  CHECK(full.loss == scrambled.loss);
  CHECK(full.grads.w1 == scrambled.grads.w1);
  CHECK(full.grads.wm == scrambled.grads.wm);
  CHECK(full.grads.wa == scrambled.grads.wa);
}
