#include "policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tf {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'P', 'L'};
constexpr uint8_t kVersion = 1;

void check_dims(const PolicyDims& d) {
  if (d.obs_dim < 1 || d.hidden < 1 || d.num_actions < 1)
    fail(Errc::invalid_arg, "policy dims must all be >= 1");
}

// y = M x, M is rows x cols row-major
void matvec(const std::vector<double>& m, const double* x, uint32_t rows, uint32_t cols,
            double* y) {
  for (uint32_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = m.data() + size_t(r) * cols;
    for (uint32_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// y += M^T g, M is rows x cols row-major, g has rows entries, y has cols
void matvec_transpose_add(const std::vector<double>& m, const double* g, uint32_t rows,
                          uint32_t cols, double* y) {
  for (uint32_t r = 0; r < rows; ++r) {
    const double* row = m.data() + size_t(r) * cols;
    double gr = g[r];
    for (uint32_t c = 0; c < cols; ++c) y[c] += row[c] * gr;
  }
}

// M += g (rows) outer x (cols)
void outer_add(std::vector<double>& m, const double* g, const double* x, uint32_t rows,
               uint32_t cols) {
  for (uint32_t r = 0; r < rows; ++r) {
    double* row = m.data() + size_t(r) * cols;
    double gr = g[r];
    for (uint32_t c = 0; c < cols; ++c) row[c] += gr * x[c];
  }
}

// single shared forward step so stepwise and sequence evaluation are
// bit-identical
void forward_cell(const PolicyParams& p, const double* obs, const double* m_in, double* h,
                  double* m_out, double* logits, double* value) {
  const PolicyDims& d = p.dims;
  matvec(p.w1, obs, d.hidden, d.obs_dim, h);
  for (uint32_t i = 0; i < d.hidden; ++i) h[i] = std::tanh(h[i] + p.b1[i]);

  std::vector<double> a(d.hidden);
  matvec(p.wm, m_in, d.hidden, d.hidden, a.data());
  std::vector<double> wh_h(d.hidden);
  matvec(p.wh, h, d.hidden, d.hidden, wh_h.data());
  for (uint32_t i = 0; i < d.hidden; ++i) m_out[i] = std::tanh(a[i] + wh_h[i] + p.bm[i]);

  matvec(p.wa, m_out, d.num_actions, d.hidden, logits);
  for (uint32_t i = 0; i < d.num_actions; ++i) logits[i] += p.ba[i];

  double v = p.bv[0];
  for (uint32_t i = 0; i < d.hidden; ++i) v += p.wv[i] * m_out[i];
  *value = v;
}

}  // namespace

PolicyParams PolicyParams::zeros(const PolicyDims& dims) {
  check_dims(dims);
  PolicyParams p;
  p.dims = dims;
  p.w1.assign(size_t(dims.hidden) * dims.obs_dim, 0.0);
  p.b1.assign(dims.hidden, 0.0);
  p.wm.assign(size_t(dims.hidden) * dims.hidden, 0.0);
  p.wh.assign(size_t(dims.hidden) * dims.hidden, 0.0);
  p.bm.assign(dims.hidden, 0.0);
  p.wa.assign(size_t(dims.num_actions) * dims.hidden, 0.0);
  p.ba.assign(dims.num_actions, 0.0);
  p.wv.assign(dims.hidden, 0.0);
  p.bv.assign(1, 0.0);
  return p;
}

size_t PolicyParams::parameter_count() const {
  size_t n = 0;
  for_each_array([&](const std::vector<double>& a) { n += a.size(); });
  return n;
}

double PolicyParams::global_norm() const {
  double sq = 0.0;
  for_each_array([&](const std::vector<double>& a) {
    for (double v : a) sq += v * v;
  });
  return std::sqrt(sq);
}

void PolicyParams::scale(double s) {
  for_each_array([&](std::vector<double>& a) {
    for (double& v : a) v *= s;
  });
}

void PolicyParams::axpy(double a, const PolicyParams& other) {
  if (!(dims == other.dims)) fail(Errc::invalid_arg, "axpy dims mismatch");
  auto apply = [a](std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
  };
  apply(w1, other.w1); apply(b1, other.b1); apply(wm, other.wm); apply(wh, other.wh);
  apply(bm, other.bm); apply(wa, other.wa); apply(ba, other.ba); apply(wv, other.wv);
  apply(bv, other.bv);
}

bool PolicyParams::all_finite() const {
  bool ok = true;
  for_each_array([&](const std::vector<double>& a) {
    for (double v : a) ok = ok && std::isfinite(v);
  });
  return ok;
}

PolicyParams init_params(uint32_t obs_dim, uint32_t hidden, uint32_t num_actions, uint64_t seed) {
  PolicyDims dims{obs_dim, hidden, num_actions};
  PolicyParams p = PolicyParams::zeros(dims);
  Rng rng(mix_seed(seed, 0x706F6C696379ull));
  auto fill = [&rng](std::vector<double>& a, uint32_t fan_in) {
    double s = 1.0 / std::sqrt(double(fan_in));
    for (double& v : a) v = (2.0 * rng.uniform01() - 1.0) * s;
  };
  fill(p.w1, obs_dim);
  fill(p.wm, hidden);
  fill(p.wh, hidden);
  fill(p.wa, hidden);
  fill(p.wv, hidden);
  return p;
}

PolicyOutput policy_step(const PolicyParams& params, const double* obs,
                         const PolicyState& state) {
  const PolicyDims& d = params.dims;
  if (state.memory.size() != d.hidden)
    fail(Errc::invalid_arg, "policy state has dim " + std::to_string(state.memory.size()) +
                                ", expected " + std::to_string(d.hidden));
  for (uint32_t i = 0; i < d.obs_dim; ++i) {
    if (!std::isfinite(obs[i])) fail(Errc::numeric, "non-finite observation input");
  }

  PolicyOutput out;
  out.logits.resize(d.num_actions);
  out.next_state.memory.resize(d.hidden);
  std::vector<double> h(d.hidden);
  forward_cell(params, obs, state.memory.data(), h.data(), out.next_state.memory.data(),
               out.logits.data(), &out.value);
  return out;
}

PolicyOutput policy_step(const PolicyParams& params, const std::vector<double>& obs,
                         const PolicyState& state) {
  if (obs.size() != params.dims.obs_dim)
    fail(Errc::invalid_arg, "observation has dim " + std::to_string(obs.size()) + ", expected " +
                                std::to_string(params.dims.obs_dim));
  return policy_step(params, obs.data(), state);
}

size_t SeqBatch::masked_count() const {
  size_t n = 0;
  for (uint8_t m : mask) n += m ? 1 : 0;
  return n;
}

namespace {

struct ForwardCache {
  std::vector<double> h;      // lanes*steps*hidden
  std::vector<double> m_in;   // lanes*steps*hidden
  std::vector<double> m_out;  // lanes*steps*hidden
};

SeqOutputs run_forward(const PolicyParams& params, const SeqBatch& batch,
                       const std::vector<PolicyState>& initial_states, ForwardCache* cache) {
  const PolicyDims& d = params.dims;
  if (batch.obs_dim != d.obs_dim)
    fail(Errc::invalid_arg, "batch obs_dim " + std::to_string(batch.obs_dim) +
                                " != policy obs_dim " + std::to_string(d.obs_dim));
  if (initial_states.size() != batch.lanes)
    fail(Errc::invalid_arg, "got " + std::to_string(initial_states.size()) +
                                " initial states for " + std::to_string(batch.lanes) + " lanes");

  size_t cells = size_t(batch.lanes) * batch.steps;
  SeqOutputs out;
  out.logits.assign(cells * d.num_actions, 0.0);
  out.values.assign(cells, 0.0);
  out.final_states.reserve(batch.lanes);
  if (cache) {
    cache->h.assign(cells * d.hidden, 0.0);
    cache->m_in.assign(cells * d.hidden, 0.0);
    cache->m_out.assign(cells * d.hidden, 0.0);
  }

  std::vector<double> zero_state(d.hidden, 0.0);
  std::vector<double> h(d.hidden), m_out(d.hidden);
  for (uint32_t lane = 0; lane < batch.lanes; ++lane) {
    if (initial_states[lane].memory.size() != d.hidden)
      fail(Errc::invalid_arg, "initial state dim mismatch on lane " + std::to_string(lane));
    std::vector<double> memory = initial_states[lane].memory;
    for (uint32_t t = 0; t < batch.steps; ++t) {
      size_t cell = batch.at(lane, t);
      if (!batch.mask[cell]) continue;  // padding advances nothing
      const double* m_in = batch.first[cell] ? zero_state.data() : memory.data();
      double value = 0.0;
      forward_cell(params, batch.obs.data() + cell * d.obs_dim, m_in, h.data(), m_out.data(),
                   out.logits.data() + cell * d.num_actions, &value);
      out.values[cell] = value;
      if (cache) {
        std::copy(h.begin(), h.end(), cache->h.begin() + long(cell * d.hidden));
        std::copy(m_in, m_in + d.hidden, cache->m_in.begin() + long(cell * d.hidden));
        std::copy(m_out.begin(), m_out.end(), cache->m_out.begin() + long(cell * d.hidden));
      }
      memory.assign(m_out.begin(), m_out.end());
    }
    out.final_states.push_back(PolicyState{std::move(memory)});
  }
  return out;
}

}  // namespace

SeqOutputs evaluate_sequence(const PolicyParams& params, const SeqBatch& batch,
                             const std::vector<PolicyState>& initial_states) {
  return run_forward(params, batch, initial_states, nullptr);
}

CompositeObjective::CompositeObjective(std::vector<ObjectiveTerm> terms)
    : terms_(std::move(terms)) {
  if (terms_.empty()) fail(Errc::invalid_arg, "composite objective needs at least one term");
  for (const auto& [weight, term] : terms_) {
    (void)weight;
    if (!term) fail(Errc::invalid_arg, "null objective term");
  }
}

double CompositeObjective::eval(const SeqBatch& batch, const std::vector<double>& logits,
                                const std::vector<double>& values, std::vector<double>* dlogits,
                                std::vector<double>* dvalues) const {
  double total = 0.0;
  std::vector<double> term_dlogits, term_dvalues;
  for (const auto& [weight, term] : terms_) {
    if (dlogits || dvalues) {
      term_dlogits.assign(logits.size(), 0.0);
      term_dvalues.assign(values.size(), 0.0);
      total += weight * term->eval(batch, logits, values, &term_dlogits, &term_dvalues);
      if (dlogits) {
        for (size_t i = 0; i < term_dlogits.size(); ++i) (*dlogits)[i] += weight * term_dlogits[i];
      }
      if (dvalues) {
        for (size_t i = 0; i < term_dvalues.size(); ++i) (*dvalues)[i] += weight * term_dvalues[i];
      }
    } else {
      total += weight * term->eval(batch, logits, values, nullptr, nullptr);
    }
  }
  return total;
}

GradResult grad_loss(const PolicyParams& params, const SeqBatch& batch,
                     const std::vector<PolicyState>& initial_states, const Objective& objective) {
  const PolicyDims& d = params.dims;
  ForwardCache cache;
  GradResult result;
  result.outputs = run_forward(params, batch, initial_states, &cache);

  size_t cells = size_t(batch.lanes) * batch.steps;
  std::vector<double> dlogits(cells * d.num_actions, 0.0);
  std::vector<double> dvalues(cells, 0.0);
  result.loss =
      objective.eval(batch, result.outputs.logits, result.outputs.values, &dlogits, &dvalues);
  if (!std::isfinite(result.loss)) fail(Errc::numeric, "non-finite loss");

  result.grads = PolicyParams::zeros(d);
  PolicyParams& g = result.grads;

  std::vector<double> g_m(d.hidden), g_a(d.hidden), g_h(d.hidden), g_z(d.hidden);
  std::vector<double> carry(d.hidden);
  for (uint32_t lane = 0; lane < batch.lanes; ++lane) {
    std::fill(carry.begin(), carry.end(), 0.0);
    for (int t = int(batch.steps) - 1; t >= 0; --t) {
      size_t cell = batch.at(lane, uint32_t(t));
      if (!batch.mask[cell]) continue;
      const double* gl = dlogits.data() + cell * d.num_actions;
      double gv = dvalues[cell];
      const double* h = cache.h.data() + cell * d.hidden;
      const double* m_in = cache.m_in.data() + cell * d.hidden;
      const double* m_out = cache.m_out.data() + cell * d.hidden;
      const double* x = batch.obs.data() + cell * d.obs_dim;

      // heads
      std::fill(g_m.begin(), g_m.end(), 0.0);
      matvec_transpose_add(params.wa, gl, d.num_actions, d.hidden, g_m.data());
      for (uint32_t i = 0; i < d.hidden; ++i) g_m[i] += params.wv[i] * gv + carry[i];
      outer_add(g.wa, gl, m_out, d.num_actions, d.hidden);
      for (uint32_t i = 0; i < d.num_actions; ++i) g.ba[i] += gl[i];
      for (uint32_t i = 0; i < d.hidden; ++i) g.wv[i] += gv * m_out[i];
      g.bv[0] += gv;

      // recurrent cell
      for (uint32_t i = 0; i < d.hidden; ++i) g_a[i] = g_m[i] * (1.0 - m_out[i] * m_out[i]);
      outer_add(g.wm, g_a.data(), m_in, d.hidden, d.hidden);
      outer_add(g.wh, g_a.data(), h, d.hidden, d.hidden);
      for (uint32_t i = 0; i < d.hidden; ++i) g.bm[i] += g_a[i];

      // input embedding
      std::fill(g_h.begin(), g_h.end(), 0.0);
      matvec_transpose_add(params.wh, g_a.data(), d.hidden, d.hidden, g_h.data());
      for (uint32_t i = 0; i < d.hidden; ++i) g_z[i] = g_h[i] * (1.0 - h[i] * h[i]);
      outer_add(g.w1, g_z.data(), x, d.hidden, d.obs_dim);
      for (uint32_t i = 0; i < d.hidden; ++i) g.b1[i] += g_z[i];

      // gradient into the previous step's memory; episode starts cut it
      std::fill(carry.begin(), carry.end(), 0.0);
      if (!batch.first[cell]) {
        matvec_transpose_add(params.wm, g_a.data(), d.hidden, d.hidden, carry.data());
      }
    }
  }
  return result;
}

void save_policy(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(Errc::io, "cannot open " + path + " for writing");
  out.write(kMagic, 4);
  char version = char(kVersion);
  out.write(&version, 1);
  uint8_t dims[12];
  put_u32be(dims, params.dims.obs_dim);
  put_u32be(dims + 4, params.dims.hidden);
  put_u32be(dims + 8, params.dims.num_actions);
  out.write(reinterpret_cast<char*>(dims), sizeof(dims));
  params.for_each_array([&](const std::vector<double>& a) {
    std::vector<uint8_t> buf(a.size() * 8);
    for (size_t i = 0; i < a.size(); ++i) put_f64be(buf.data() + i * 8, a[i]);
    out.write(reinterpret_cast<char*>(buf.data()), long(buf.size()));
  });
  out.flush();
  if (!out) fail(Errc::io, "write to " + path + " failed");
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open policy file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    fail(Errc::corrupt, path + " is not a policy file (bad magic)");
  char version = 0;
  in.read(&version, 1);
  if (!in) fail(Errc::corrupt, "truncated policy file " + path);
  if (uint8_t(version) != kVersion)
    fail(Errc::unsupported, "policy file version " + std::to_string(int(version)) +
                                " not supported (expected " + std::to_string(int(kVersion)) + ")");
  uint8_t dims[12];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) fail(Errc::corrupt, "truncated policy file " + path);
  PolicyDims d{get_u32be(dims), get_u32be(dims + 4), get_u32be(dims + 8)};
  check_dims(d);

  PolicyParams p = PolicyParams::zeros(d);
  p.for_each_array([&](std::vector<double>& a) {
    std::vector<uint8_t> buf(a.size() * 8);
    in.read(reinterpret_cast<char*>(buf.data()), long(buf.size()));
    if (!in) fail(Errc::corrupt, "truncated policy file " + path);
    for (size_t i = 0; i < a.size(); ++i) a[i] = get_f64be(buf.data() + i * 8);
  });
  char extra = 0;
  if (in.read(&extra, 1) && in.gcount() > 0)
    fail(Errc::corrupt, "trailing bytes in policy file " + path);
  return p;
}

PolicyParams load_policy(const std::string& path, const PolicyDims& expected) {
  PolicyParams p = load_policy(path);
  if (!(p.dims == expected))
    fail(Errc::invalid_arg,
         "policy dims (" + std::to_string(p.dims.obs_dim) + "," + std::to_string(p.dims.hidden) +
             "," + std::to_string(p.dims.num_actions) + ") do not match expected (" +
             std::to_string(expected.obs_dim) + "," + std::to_string(expected.hidden) + "," +
             std::to_string(expected.num_actions) + ")");
  return p;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p = log_softmax(logits);
  for (double& v : p) v = std::exp(v);
  return p;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max);
  double lse = max + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double entropy_of_logits(const std::vector<double>& logits) {
  std::vector<double> lp = log_softmax(logits);
  double h = 0.0;
  for (double v : lp) h -= std::exp(v) * v;
  return h;
}

double kl_logits(const std::vector<double>& p_logits, const std::vector<double>& q_logits) {
  if (p_logits.size() != q_logits.size()) fail(Errc::invalid_arg, "KL over mismatched supports");
  std::vector<double> lp = log_softmax(p_logits);
  std::vector<double> lq = log_softmax(q_logits);
  double kl = 0.0;
  for (size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

int argmax(const std::vector<double>& values) {
  return int(std::max_element(values.begin(), values.end()) - values.begin());
}

int sample_from_logits(const std::vector<double>& logits, double u) {
  std::vector<double> p = softmax(logits);
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return int(i);
  }
  return int(p.size()) - 1;
}

}  // namespace tf
