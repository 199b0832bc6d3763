#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace tf {

// Recurrent policy template: input embedding h = tanh(W1 x + b1), cell
// m' = tanh(Wm m + Wh h + bm), action head logits = Wa m' + ba, value head
// v = wv . m' + bv. Everything is float64; sequence evaluation resets memory
// to zero wherever `first` is set and carries it as a constant across
// windows (truncated BPTT: no gradient flows between windows).

struct PolicyDims {
  uint32_t obs_dim = 0;
  uint32_t hidden = 0;
  uint32_t num_actions = 0;

  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

struct PolicyParams {
  PolicyDims dims;
  std::vector<double> w1;  // hidden x obs_dim, row-major
  std::vector<double> b1;  // hidden
  std::vector<double> wm;  // hidden x hidden
  std::vector<double> wh;  // hidden x hidden
  std::vector<double> bm;  // hidden
  std::vector<double> wa;  // num_actions x hidden
  std::vector<double> ba;  // num_actions
  std::vector<double> wv;  // hidden
  std::vector<double> bv;  // 1

  static PolicyParams zeros(const PolicyDims& dims);

  // field order matches the policy file layout
  template <typename Fn>
  void for_each_array(Fn&& fn) {
    fn(w1); fn(b1); fn(wm); fn(wh); fn(bm); fn(wa); fn(ba); fn(wv); fn(bv);
  }
  template <typename Fn>
  void for_each_array(Fn&& fn) const {
    fn(w1); fn(b1); fn(wm); fn(wh); fn(bm); fn(wa); fn(ba); fn(wv); fn(bv);
  }

  size_t parameter_count() const;
  double global_norm() const;
  void scale(double s);
  void axpy(double a, const PolicyParams& other);  // this += a * other
  bool all_finite() const;
};

struct PolicyState {
  std::vector<double> memory;

  static PolicyState zero(uint32_t hidden) { return {std::vector<double>(hidden, 0.0)}; }
};

struct PolicyOutput {
  std::vector<double> logits;
  double value = 0.0;
  PolicyState next_state;
};

PolicyParams init_params(uint32_t obs_dim, uint32_t hidden, uint32_t num_actions, uint64_t seed);

PolicyOutput policy_step(const PolicyParams& params, const double* obs, const PolicyState& state);
PolicyOutput policy_step(const PolicyParams& params, const std::vector<double>& obs,
                         const PolicyState& state);

// ---------------------------------------------------------------------------
// sequence evaluation

// A lane-major training window. `actions` carries BC targets / taken actions;
// the PPO fields stay empty for behavior cloning.
struct SeqBatch {
  uint32_t lanes = 0;
  uint32_t steps = 0;
  uint32_t obs_dim = 0;
  std::vector<double> obs;       // lanes * steps * obs_dim
  std::vector<uint8_t> first;    // lanes * steps
  std::vector<uint8_t> mask;     // lanes * steps
  std::vector<int> actions;      // lanes * steps

  std::vector<double> old_logp;     // lanes * steps
  std::vector<double> advantages;   // lanes * steps
  std::vector<double> returns;      // lanes * steps
  std::vector<double> anchor_logp;  // lanes * steps * num_actions

  size_t at(uint32_t lane, uint32_t t) const { return size_t(lane) * steps + t; }
  size_t masked_count() const;
};

struct SeqOutputs {
  std::vector<double> logits;  // lanes * steps * num_actions (zero where masked out)
  std::vector<double> values;  // lanes * steps
  std::vector<PolicyState> final_states;
};

SeqOutputs evaluate_sequence(const PolicyParams& params, const SeqBatch& batch,
                             const std::vector<PolicyState>& initial_states);

// Per-position loss term over sequence outputs. eval() returns the scalar
// loss; when dlogits/dvalues are non-null it also writes d(loss)/d(output)
// for every masked position (zero elsewhere).
class Objective {
 public:
  virtual ~Objective() = default;
  virtual double eval(const SeqBatch& batch, const std::vector<double>& logits,
                      const std::vector<double>& values, std::vector<double>* dlogits,
                      std::vector<double>* dvalues) const = 0;
};

// Ordered list of weighted loss terms, summed. Trainers take these as their
// objective-callback hook; a single term with weight 1 is the common case.
using ObjectiveTerm = std::pair<double, std::shared_ptr<const Objective>>;

class CompositeObjective : public Objective {
 public:
  explicit CompositeObjective(std::vector<ObjectiveTerm> terms);
  double eval(const SeqBatch& batch, const std::vector<double>& logits,
              const std::vector<double>& values, std::vector<double>* dlogits,
              std::vector<double>* dvalues) const override;

 private:
  std::vector<ObjectiveTerm> terms_;
};

struct GradResult {
  double loss = 0.0;
  PolicyParams grads;
  SeqOutputs outputs;
};

// Exact reverse-mode gradient of the objective under truncated-BPTT
// semantics: memory resets at first=true, masked-out positions contribute
// nothing and do not advance memory, and no gradient crosses the window's
// initial states.
GradResult grad_loss(const PolicyParams& params, const SeqBatch& batch,
                     const std::vector<PolicyState>& initial_states, const Objective& objective);

// ---------------------------------------------------------------------------
// persistence: magic "TFPL", version byte, dims as u32be, then every weight
// array row-major as f64be in PolicyParams field order

void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);
PolicyParams load_policy(const std::string& path, const PolicyDims& expected);

// ---------------------------------------------------------------------------
// categorical helpers

std::vector<double> softmax(const std::vector<double>& logits);
std::vector<double> log_softmax(const std::vector<double>& logits);
double entropy_of_logits(const std::vector<double>& logits);
// KL(p || q) for two logit vectors
double kl_logits(const std::vector<double>& p_logits, const std::vector<double>& q_logits);
int argmax(const std::vector<double>& values);
// inverse-CDF draw with one uniform sample
int sample_from_logits(const std::vector<double>& logits, double u);

}  // namespace tf
