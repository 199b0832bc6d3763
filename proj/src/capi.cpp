#include "trajforge.h"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "agent.hpp"
#include "bench.hpp"
#include "common.hpp"
#include "crc32.hpp"
#include "env.hpp"
#include "exchange.hpp"
#include "finetune.hpp"
#include "hooks.hpp"
#include "pipeline.hpp"
#include "policy.hpp"
#include "pretrain.hpp"
#include "sampler.hpp"
#include "store.hpp"

using nlohmann::json;

// ---------------------------------------------------------------------------
// handles

struct tf_store {
  std::unique_ptr<tf::Store> impl;
};
struct tf_plan {
  tf::SamplerPlan plan;
};
struct tf_batch {
  tf::Batch batch;
};
struct tf_env {
  tf::TaskSpec task;
  std::unique_ptr<tf::WrappedEnv> env;
};
struct tf_policy {
  tf::PolicyParams params;
};
struct tf_hookctx {
  tf::HookContext* ctx;
};

namespace {

thread_local std::string g_last_error;

tf_status map_errc(tf::Errc code) {
  switch (code) {
    case tf::Errc::invalid_arg: return TF_ERR_INVALID_ARG;
    case tf::Errc::not_found: return TF_ERR_NOT_FOUND;
    case tf::Errc::exists: return TF_ERR_EXISTS;
    case tf::Errc::range: return TF_ERR_RANGE;
    case tf::Errc::corrupt: return TF_ERR_CORRUPT;
    case tf::Errc::io: return TF_ERR_IO;
    case tf::Errc::state: return TF_ERR_STATE;
    case tf::Errc::busy: return TF_ERR_BUSY;
    case tf::Errc::parse: return TF_ERR_PARSE;
    case tf::Errc::empty: return TF_ERR_EMPTY;
    case tf::Errc::numeric: return TF_ERR_NUMERIC;
    case tf::Errc::callback: return TF_ERR_CALLBACK;
    case tf::Errc::env_failure: return TF_ERR_ENV_FAILURE;
    case tf::Errc::unsupported: return TF_ERR_UNSUPPORTED;
    case tf::Errc::internal: return TF_ERR_INTERNAL;
  }
  return TF_ERR_INTERNAL;
}

template <typename Fn>
tf_status guard(Fn&& fn) {
  try {
    return fn();
  } catch (const tf::Error& e) {
    g_last_error = e.what();
    return map_errc(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TF_ERR_INTERNAL;
  }
}

tf_status arg_error(const char* what) {
  g_last_error = what;
  return TF_ERR_INVALID_ARG;
}

std::string copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf && cap > 0) {
    size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  }
  return text;
}

// task argument forms: builtin id, inline task JSON, or "suite.json#task_id"
tf::TaskSpec resolve_task(const std::string& spec) {
  if (!spec.empty() && spec.front() == '{') return tf::task_from_json_text(spec);
  size_t hash = spec.find('#');
  if (hash != std::string::npos) {
    std::vector<tf::TaskSpec> suite = tf::load_suite(spec.substr(0, hash));
    return tf::find_task(suite, spec.substr(hash + 1));
  }
  return tf::find_task(tf::builtin_suite(), spec);
}

tf::AgentPtr make_named_agent(const std::string& name, const tf::TaskSpec& task) {
  if (name == "expert") return tf::scripted_expert(task);
  if (name == "random") return std::make_unique<tf::RandomAgent>(tf::kNumActions);
  tf::PolicyParams params = tf::load_policy(name);
  if (params.dims.obs_dim != uint32_t(task.grid.obs_dim()))
    tf::fail(tf::Errc::invalid_arg, "policy " + name + " obs_dim does not match task " +
                                        task.task_id);
  return std::make_unique<tf::PolicyAgent>(std::move(params));
}

std::map<std::string, std::string> parse_kv(const std::string& params) {
  std::map<std::string, std::string> out;
  size_t pos = 0;
  while (pos < params.size()) {
    size_t comma = params.find(',', pos);
    std::string item =
        params.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? params.size() : comma + 1;
    if (item.empty()) continue;
    size_t eq = item.find('=');
    if (eq == std::string::npos)
      tf::fail(tf::Errc::parse, "expected key=value in '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

class CApiCallback : public tf::Callback {
 public:
  explicit CApiCallback(const tf_callbacks& fns)
      : fns_(fns), name_(fns.name ? fns.name : "c_callback") {}

  std::string_view name() const override { return name_; }
  void on_reset_pre(tf::HookContext& ctx) override { invoke(fns_.on_reset_pre, ctx); }
  void on_reset_post(tf::HookContext& ctx) override { invoke(fns_.on_reset_post, ctx); }
  void on_step_pre(tf::HookContext& ctx) override { invoke(fns_.on_step_pre, ctx); }
  void on_step_post(tf::HookContext& ctx) override { invoke(fns_.on_step_post, ctx); }

 private:
  void invoke(int32_t (*fn)(tf_hookctx*, void*), tf::HookContext& ctx) {
    if (!fn) return;
    tf_hookctx wrapper{&ctx};
    int32_t rc = fn(&wrapper, fns_.user);
    if (rc != 0)
      tf::fail(tf::Errc::callback, name_ + " returned " + std::to_string(rc));
  }

  tf_callbacks fns_;
  std::string name_;
};

}  // namespace

// ---------------------------------------------------------------------------

extern "C" {

const char* tf_status_name(tf_status status) {
  switch (status) {
    case TF_OK: return "ok";
    case TF_END: return "end";
    case TF_ERR_INVALID_ARG: return "invalid_arg";
    case TF_ERR_NOT_FOUND: return "not_found";
    case TF_ERR_EXISTS: return "exists";
    case TF_ERR_RANGE: return "range";
    case TF_ERR_CORRUPT: return "corrupt";
    case TF_ERR_IO: return "io";
    case TF_ERR_STATE: return "state";
    case TF_ERR_BUSY: return "busy";
    case TF_ERR_PARSE: return "parse";
    case TF_ERR_EMPTY: return "empty";
    case TF_ERR_NUMERIC: return "numeric";
    case TF_ERR_CALLBACK: return "callback";
    case TF_ERR_ENV_FAILURE: return "env_failure";
    case TF_ERR_UNSUPPORTED: return "unsupported";
    case TF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* tf_version(void) { return "0.1.0"; }

void tf_last_error(char* buf, size_t cap) {
  if (!buf || cap == 0) return;
  size_t n = std::min(cap - 1, g_last_error.size());
  std::memcpy(buf, g_last_error.data(), n);
  buf[n] = '\0';
}

// ------------------------------------------------------------------- store

tf_status tf_store_open(const char* dir, tf_store** out) {
  if (!dir || !out) return arg_error("tf_store_open: null argument");
  return guard([&] {
    auto handle = std::make_unique<tf_store>();
    handle->impl = tf::Store::open(dir);
    *out = handle.release();
    return TF_OK;
  });
}

void tf_store_close(tf_store* store) { delete store; }

tf_status tf_store_write_episode(tf_store* store, const char* episode_id_hex,
                                 const tf_modality_frames* modalities, size_t num_modalities,
                                 const tf_label_span* labels, size_t num_labels,
                                 const char* source, uint32_t clip_len) {
  if (!store || !episode_id_hex || (!modalities && num_modalities > 0))
    return arg_error("tf_store_write_episode: null argument");
  return guard([&] {
    tf::EpisodeData data;
    data.id = tf::id_from_hex(episode_id_hex);
    data.source = source ? source : "";
    for (size_t i = 0; i < num_modalities; ++i) {
      const tf_modality_frames& m = modalities[i];
      tf::ModalityFrames frames;
      frames.frame_size = m.frame_size;
      frames.bytes.assign(m.data, m.data + m.frame_count * m.frame_size);
      data.modalities[tf::Modality(m.modality)] = std::move(frames);
    }
    for (size_t i = 0; i < num_labels; ++i)
      data.labels.push_back({labels[i].label ? labels[i].label : "", labels[i].start,
                             labels[i].end});
    store->impl->write_episode(data, clip_len);
    return TF_OK;
  });
}

tf_status tf_store_read_segment(tf_store* store, const char* episode_id_hex, uint64_t start,
                                uint64_t len, tf_modality modality, uint8_t* out,
                                size_t out_cap) {
  if (!store || !episode_id_hex || !out)
    return arg_error("tf_store_read_segment: null argument");
  return guard([&] {
    tf::Segment seg = store->impl->read_segment(tf::id_from_hex(episode_id_hex), start, len,
                                                {tf::Modality(modality)});
    const tf::ModalityFrames& frames = seg.frames.at(tf::Modality(modality));
    if (frames.bytes.size() > out_cap)
      tf::fail(tf::Errc::invalid_arg,
               "output buffer holds " + std::to_string(out_cap) + " bytes, need " +
                   std::to_string(frames.bytes.size()));
    std::memcpy(out, frames.bytes.data(), frames.bytes.size());
    return TF_OK;
  });
}

tf_status tf_store_episode_length(tf_store* store, const char* episode_id_hex,
                                  uint64_t* out_length) {
  if (!store || !episode_id_hex || !out_length)
    return arg_error("tf_store_episode_length: null argument");
  return guard([&] {
    *out_length = store->impl->manifest(tf::id_from_hex(episode_id_hex)).length;
    return TF_OK;
  });
}

tf_status tf_store_frame_size(tf_store* store, const char* episode_id_hex, tf_modality modality,
                              uint32_t* out_frame_size) {
  if (!store || !episode_id_hex || !out_frame_size)
    return arg_error("tf_store_frame_size: null argument");
  return guard([&] {
    tf::EpisodeManifest m = store->impl->manifest(tf::id_from_hex(episode_id_hex));
    auto it = m.modalities.find(tf::Modality(modality));
    if (it == m.modalities.end())
      tf::fail(tf::Errc::not_found, "modality not stored for this episode");
    *out_frame_size = it->second.frame_size;
    return TF_OK;
  });
}

tf_status tf_store_episode_count(tf_store* store, uint64_t* out_count) {
  if (!store || !out_count) return arg_error("tf_store_episode_count: null argument");
  return guard([&] {
    *out_count = store->impl->episode_count();
    return TF_OK;
  });
}

tf_status tf_store_list_episodes(tf_store* store, char* buf, size_t cap, size_t* needed) {
  if (!store) return arg_error("tf_store_list_episodes: null store");
  return guard([&] {
    std::string text;
    for (const auto& m : store->impl->manifests()) {
      text += tf::id_to_hex(m.id);
      text += '\n';
    }
    copy_out(text, buf, cap, needed);
    return TF_OK;
  });
}

tf_status tf_store_find_by_label(tf_store* store, const char* label, char* buf, size_t cap,
                                 size_t* needed) {
  if (!store || !label) return arg_error("tf_store_find_by_label: null argument");
  return guard([&] {
    std::string text;
    for (const auto& hit : store->impl->find_by_label(label)) {
      text += tf::id_to_hex(hit.episode_id) + "\t" + std::to_string(hit.start) + "\t" +
              std::to_string(hit.end) + "\n";
    }
    copy_out(text, buf, cap, needed);
    return TF_OK;
  });
}

tf_status tf_store_compact(tf_store* store, uint64_t* bytes_reclaimed, uint64_t* clips_removed) {
  if (!store) return arg_error("tf_store_compact: null store");
  return guard([&] {
    tf::CompactStats stats = store->impl->compact();
    if (bytes_reclaimed) *bytes_reclaimed = stats.bytes_reclaimed;
    if (clips_removed) *clips_removed = stats.clips_removed;
    return TF_OK;
  });
}

uint32_t tf_checksum32(const uint8_t* data, size_t len) {
  return tf::checksum32(data, len);
}

// ----------------------------------------------------------------- sampler

tf_status tf_plan_build(tf_store* store, uint32_t batch_size, uint32_t seq_len,
                        uint32_t num_shards, uint32_t shard_id, uint64_t epoch_seed,
                        tf_plan** out) {
  if (!store || !out) return arg_error("tf_plan_build: null argument");
  return guard([&] {
    auto handle = std::make_unique<tf_plan>();
    handle->plan = tf::build_plan(store->impl->manifests(), batch_size, seq_len, num_shards,
                                  shard_id, epoch_seed);
    *out = handle.release();
    return TF_OK;
  });
}

void tf_plan_free(tf_plan* plan) { delete plan; }

tf_status tf_plan_steps_per_epoch(const tf_plan* plan, uint64_t* out_steps) {
  if (!plan || !out_steps) return arg_error("tf_plan_steps_per_epoch: null argument");
  *out_steps = plan->plan.steps_per_epoch();
  return TF_OK;
}

tf_status tf_batch_next(const tf_plan* plan, tf_store* store, uint64_t step_index,
                        const tf_modality* modalities, size_t num_modalities, tf_batch** out) {
  if (!plan || !store || !out || (!modalities && num_modalities > 0))
    return arg_error("tf_batch_next: null argument");
  return guard([&]() -> tf_status {
    std::vector<tf::Modality> mods;
    for (size_t i = 0; i < num_modalities; ++i) mods.push_back(tf::Modality(modalities[i]));
    std::optional<tf::Batch> batch = tf::next_batch(plan->plan, step_index, *store->impl, mods);
    if (!batch) return TF_END;
    auto handle = std::make_unique<tf_batch>();
    handle->batch = std::move(*batch);
    *out = handle.release();
    return TF_OK;
  });
}

void tf_batch_free(tf_batch* batch) { delete batch; }

tf_status tf_batch_dims(const tf_batch* batch, uint32_t* batch_size, uint32_t* seq_len) {
  if (!batch) return arg_error("tf_batch_dims: null batch");
  if (batch_size) *batch_size = batch->batch.batch_size;
  if (seq_len) *seq_len = batch->batch.seq_len;
  return TF_OK;
}

tf_status tf_batch_modality(const tf_batch* batch, tf_modality modality, const uint8_t** data,
                            uint32_t* frame_size) {
  if (!batch || !data) return arg_error("tf_batch_modality: null argument");
  return guard([&] {
    auto it = batch->batch.modalities.find(tf::Modality(modality));
    if (it == batch->batch.modalities.end())
      tf::fail(tf::Errc::not_found, "modality not present in batch");
    *data = it->second.data.data();
    if (frame_size) *frame_size = it->second.frame_size;
    return TF_OK;
  });
}

tf_status tf_batch_flags(const tf_batch* batch, const uint8_t** first, const uint8_t** mask) {
  if (!batch) return arg_error("tf_batch_flags: null batch");
  if (first) *first = batch->batch.first.data();
  if (mask) *mask = batch->batch.mask.data();
  return TF_OK;
}

// --------------------------------------------------------------------- env

tf_status tf_env_create(const char* task, tf_env** out) {
  if (!task || !out) return arg_error("tf_env_create: null argument");
  return guard([&] {
    auto handle = std::make_unique<tf_env>();
    handle->task = resolve_task(task);
    std::vector<tf::CallbackPtr> callbacks;
    for (const auto& [event, value] : handle->task.reward_events)
      callbacks.push_back(std::make_shared<tf::RewardOnEvent>(event, value));
    handle->env = tf::wrap(tf::make_bare_task_env(handle->task), std::move(callbacks));
    *out = handle.release();
    return TF_OK;
  });
}

void tf_env_free(tf_env* env) { delete env; }

tf_status tf_env_obs_dim(const tf_env* env, uint32_t* out_dim) {
  if (!env || !out_dim) return arg_error("tf_env_obs_dim: null argument");
  *out_dim = uint32_t(env->env->obs_dim());
  return TF_OK;
}

tf_status tf_env_num_actions(const tf_env* env, uint32_t* out_actions) {
  if (!env || !out_actions) return arg_error("tf_env_num_actions: null argument");
  *out_actions = uint32_t(env->env->num_actions());
  return TF_OK;
}

tf_status tf_env_reset(tf_env* env, uint64_t seed, double* obs_out) {
  if (!env || !obs_out) return arg_error("tf_env_reset: null argument");
  return guard([&] {
    std::vector<double> obs = env->env->reset(seed);
    std::copy(obs.begin(), obs.end(), obs_out);
    return TF_OK;
  });
}

tf_status tf_env_step(tf_env* env, int32_t action, double* obs_out, double* reward_out,
                      int32_t* done_out) {
  if (!env || !obs_out || !reward_out || !done_out)
    return arg_error("tf_env_step: null argument");
  return guard([&] {
    tf::StepResult sr = env->env->step(int(action));
    std::copy(sr.obs.begin(), sr.obs.end(), obs_out);
    *reward_out = sr.reward;
    *done_out = sr.done ? 1 : 0;
    return TF_OK;
  });
}

tf_status tf_env_add_callback(tf_env* env, const tf_callbacks* callbacks) {
  if (!env || !callbacks) return arg_error("tf_env_add_callback: null argument");
  return guard([&] {
    env->env->add_callback(std::make_shared<CApiCallback>(*callbacks));
    return TF_OK;
  });
}

tf_status tf_env_add_builtin_callback(tf_env* env, const char* name, const char* params) {
  if (!env || !name) return arg_error("tf_env_add_builtin_callback: null argument");
  return guard([&] {
    env->env->add_callback(tf::make_builtin_callback(name, parse_kv(params ? params : "")));
    return TF_OK;
  });
}

tf_status tf_hookctx_reward_add(tf_hookctx* ctx, double delta) {
  if (!ctx || !ctx->ctx) return arg_error("tf_hookctx_reward_add: null context");
  ctx->ctx->reward += delta;
  return TF_OK;
}

tf_status tf_hookctx_get_action(tf_hookctx* ctx, int32_t* out_action) {
  if (!ctx || !ctx->ctx || !out_action) return arg_error("tf_hookctx_get_action: null argument");
  *out_action = ctx->ctx->action;
  return TF_OK;
}

tf_status tf_hookctx_set_action(tf_hookctx* ctx, int32_t action) {
  if (!ctx || !ctx->ctx) return arg_error("tf_hookctx_set_action: null context");
  ctx->ctx->action = int(action);
  return TF_OK;
}

tf_status tf_hookctx_set_done(tf_hookctx* ctx, int32_t done) {
  if (!ctx || !ctx->ctx) return arg_error("tf_hookctx_set_done: null context");
  ctx->ctx->done = done != 0;
  return TF_OK;
}

tf_status tf_hookctx_get_obs(tf_hookctx* ctx, const double** obs, size_t* len) {
  if (!ctx || !ctx->ctx || !obs) return arg_error("tf_hookctx_get_obs: null argument");
  *obs = ctx->ctx->obs.data();
  if (len) *len = ctx->ctx->obs.size();
  return TF_OK;
}

tf_status tf_hookctx_info_get(tf_hookctx* ctx, const char* key, double* out_value) {
  if (!ctx || !ctx->ctx || !key || !out_value)
    return arg_error("tf_hookctx_info_get: null argument");
  auto it = ctx->ctx->info.find(key);
  if (it == ctx->ctx->info.end() || !std::holds_alternative<double>(it->second)) {
    g_last_error = std::string("info key '") + key + "' not present";
    return TF_ERR_NOT_FOUND;
  }
  *out_value = std::get<double>(it->second);
  return TF_OK;
}

tf_status tf_hookctx_info_set(tf_hookctx* ctx, const char* key, double value) {
  if (!ctx || !ctx->ctx || !key) return arg_error("tf_hookctx_info_set: null argument");
  ctx->ctx->info[key] = value;
  return TF_OK;
}

tf_status tf_hookctx_queue_command(tf_hookctx* ctx, const char* command) {
  if (!ctx || !ctx->ctx || !command) return arg_error("tf_hookctx_queue_command: null argument");
  return guard([&] {
    std::string cmd(command);
    std::string name = cmd;
    std::string arg;
    size_t eq = cmd.find('=');
    if (eq != std::string::npos) {
      name = cmd.substr(0, eq);
      arg = cmd.substr(eq + 1);
    }
    auto parse_cell = [&]() {
      size_t comma = arg.find(',');
      if (comma == std::string::npos)
        tf::fail(tf::Errc::parse, "command '" + name + "' needs r,c");
      return tf::Cell{std::stoi(arg.substr(0, comma)), std::stoi(arg.substr(comma + 1))};
    };
    if (name == "set_agent") ctx->ctx->queue(tf::CmdSetAgent{parse_cell()});
    else if (name == "add_item") ctx->ctx->queue(tf::CmdAddItem{parse_cell()});
    else if (name == "clear_items") ctx->ctx->queue(tf::CmdClearItems{});
    else if (name == "set_max_steps") ctx->ctx->queue(tf::CmdSetMaxSteps{std::stoi(arg)});
    else tf::fail(tf::Errc::not_found, "unknown command '" + name + "'");
    return TF_OK;
  });
}

// ------------------------------------------------------------------ policy

tf_status tf_policy_init(uint32_t obs_dim, uint32_t hidden, uint32_t num_actions, uint64_t seed,
                         tf_policy** out) {
  if (!out) return arg_error("tf_policy_init: null out");
  return guard([&] {
    auto handle = std::make_unique<tf_policy>();
    handle->params = tf::init_params(obs_dim, hidden, num_actions, seed);
    *out = handle.release();
    return TF_OK;
  });
}

tf_status tf_policy_load(const char* path, tf_policy** out) {
  if (!path || !out) return arg_error("tf_policy_load: null argument");
  return guard([&] {
    auto handle = std::make_unique<tf_policy>();
    handle->params = tf::load_policy(path);
    *out = handle.release();
    return TF_OK;
  });
}

tf_status tf_policy_save(const tf_policy* policy, const char* path) {
  if (!policy || !path) return arg_error("tf_policy_save: null argument");
  return guard([&] {
    tf::save_policy(policy->params, path);
    return TF_OK;
  });
}

void tf_policy_free(tf_policy* policy) { delete policy; }

tf_status tf_policy_dims(const tf_policy* policy, uint32_t* obs_dim, uint32_t* hidden,
                         uint32_t* num_actions) {
  if (!policy) return arg_error("tf_policy_dims: null policy");
  if (obs_dim) *obs_dim = policy->params.dims.obs_dim;
  if (hidden) *hidden = policy->params.dims.hidden;
  if (num_actions) *num_actions = policy->params.dims.num_actions;
  return TF_OK;
}

tf_status tf_policy_step(const tf_policy* policy, const double* obs, double* state,
                         double* logits_out, double* value_out) {
  if (!policy || !obs || !state || !logits_out || !value_out)
    return arg_error("tf_policy_step: null argument");
  return guard([&] {
    tf::PolicyState st;
    st.memory.assign(state, state + policy->params.dims.hidden);
    tf::PolicyOutput out = tf::policy_step(policy->params, obs, st);
    std::copy(out.logits.begin(), out.logits.end(), logits_out);
    std::copy(out.next_state.memory.begin(), out.next_state.memory.end(), state);
    *value_out = out.value;
    return TF_OK;
  });
}

// --------------------------------------------------------------- workflows

tf_status tf_train_bc(const char* store_dir, const char* config_json, const char* out_policy,
                      const char* loss_curve_path) {
  if (!store_dir || !config_json || !out_policy) return arg_error("tf_train_bc: null argument");
  return guard([&] {
    std::unique_ptr<tf::Store> store = tf::Store::open(store_dir);
    tf::TrainConfig cfg = tf::TrainConfig::from_json(config_json);
    cfg.validate();
    tf::log_info("train_bc config: " + cfg.to_json());
    tf::TrainResult result = tf::train_bc(*store, cfg);
    tf::save_policy(result.params, out_policy);
    if (loss_curve_path) tf::write_loss_curve(result.loss_curve, loss_curve_path);
    return TF_OK;
  });
}

tf_status tf_train_ppo(const char* task, const char* anchor_policy, const char* config_json,
                       const char* out_policy, const char* metrics_path) {
  if (!task || !anchor_policy || !config_json || !out_policy)
    return arg_error("tf_train_ppo: null argument");
  return guard([&] {
    tf::TaskSpec spec = resolve_task(task);
    tf::PolicyParams anchor = tf::load_policy(anchor_policy);
    if (anchor.dims.obs_dim != uint32_t(spec.grid.obs_dim()))
      tf::fail(tf::Errc::invalid_arg, "anchor policy does not match task observation dim");
    tf::PPOConfig cfg = tf::PPOConfig::from_json(config_json);
    if (metrics_path) cfg.metrics_path = metrics_path;
    cfg.validate();
    tf::log_info("train_ppo config: " + cfg.to_json());

    tf::EnvFactory env_factory = [spec](uint32_t) { return tf::make_task_env(spec); };
    tf::SuccessChecker checker = tf::make_checker(spec);
    tf::EvalFn eval_fn = [&spec, &checker](const tf::PolicyParams& params) {
      tf::PolicyAgent agent(params);
      std::unique_ptr<tf::EnvInterface> env = tf::make_task_env(spec);
      double successes = 0;
      for (uint64_t seed : spec.eval_seeds) {
        tf::EpisodeRecord rec = tf::run_episode(agent, *env, spec.task_id, seed,
                                                tf::ActionSelect::greedy, checker);
        successes += rec.success ? 1.0 : 0.0;
      }
      return successes / double(spec.eval_seeds.size());
    };

    tf::PPOResult result = tf::train_ppo(env_factory, anchor, anchor, cfg, eval_fn);
    tf::save_policy(result.params, out_policy);
    return TF_OK;
  });
}

tf_status tf_gen_demos(const char* task, uint32_t episodes, uint64_t seed, const char* out_dir) {
  if (!task || !out_dir) return arg_error("tf_gen_demos: null argument");
  return guard([&] {
    tf::TaskSpec spec = resolve_task(task);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) tf::fail(tf::Errc::io, "cannot create " + std::string(out_dir));
    tf::AgentPtr expert = tf::scripted_expert(spec);
    std::unique_ptr<tf::EnvInterface> env = tf::make_task_env(spec);
    tf::SuccessChecker checker = tf::make_checker(spec);
    for (uint32_t i = 0; i < episodes; ++i) {
      uint64_t ep_seed = seed + i;
      tf::EpisodeRecord rec = tf::run_episode(*expert, *env, spec.task_id, ep_seed,
                                              tf::ActionSelect::greedy, checker);
      tf::exchange_write(rec, std::string(out_dir) + "/" +
                                  tf::exchange_file_name(spec.task_id, ep_seed));
    }
    return TF_OK;
  });
}

tf_status tf_ingest(const char* input_dir, const char* store_dir, uint32_t clip_len,
                    uint64_t* episodes_ingested) {
  if (!input_dir || !store_dir) return arg_error("tf_ingest: null argument");
  return guard([&] {
    std::vector<std::string> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(input_dir, ec)) {
      if (entry.is_regular_file() && entry.path().extension() == ".tfe")
        files.push_back(entry.path().string());
    }
    if (ec) tf::fail(tf::Errc::io, "cannot list " + std::string(input_dir));
    if (files.empty()) tf::fail(tf::Errc::empty, "no .tfe files in " + std::string(input_dir));
    std::sort(files.begin(), files.end());

    std::unique_ptr<tf::Store> store = tf::Store::open(store_dir);
    uint64_t count = 0;
    for (const std::string& path : files) {
      tf::EpisodeRecord rec = tf::exchange_read(path);
      store->write_episode(tf::record_to_episode_data(rec), clip_len);
      count += 1;
    }
    if (episodes_ingested) *episodes_ingested = count;
    return TF_OK;
  });
}

tf_status tf_rollout(const char* policy_path, const char* task, uint32_t generators,
                     uint32_t episodes_per_generator, uint64_t seed_base, const char* select,
                     const char* filter_spec, const char* report_path, const char* to_store_dir,
                     char* stats_json, size_t stats_cap) {
  if (!task || !report_path) return arg_error("tf_rollout: null argument");
  return guard([&] {
    tf::TaskSpec spec = resolve_task(task);
    std::string agent_name = policy_path ? policy_path : "expert";
    tf::ActionSelect mode = tf::ActionSelect::greedy;
    if (select && *select) {
      std::string s(select);
      if (s == "sample") mode = tf::ActionSelect::sample;
      else if (s != "greedy") tf::fail(tf::Errc::invalid_arg, "select must be 'greedy' or 'sample'");
    }

    tf::PipelineConfig cfg;
    cfg.num_generators = generators;
    cfg.episodes_per_generator = episodes_per_generator;
    cfg.filter_spec = filter_spec ? filter_spec : "";
    cfg.report_path = report_path;
    cfg.store_path = to_store_dir ? to_store_dir : "";
    cfg.seed_base = seed_base;

    tf::SuccessChecker checker = tf::make_checker(spec);
    tf::PipelineResult result = tf::run_pipeline(
        [&](uint32_t) { return make_named_agent(agent_name, spec); },
        [&](uint32_t) { return tf::make_task_env(spec); }, spec.task_id, checker, mode, cfg);

    json stats{{"produced", result.stats.produced},
               {"recorded", result.stats.recorded},
               {"filtered_out", result.stats.filtered_out},
               {"failed", result.stats.failed},
               {"throughput_eps", result.stats.throughput_eps},
               {"run_id", result.run_id}};
    copy_out(stats.dump(), stats_json, stats_cap, nullptr);
    return TF_OK;
  });
}

tf_status tf_bench(const char* suite, const char* const* policies, size_t num_policies,
                   uint32_t seeds_per_task, uint32_t generators, const char* report_path) {
  if (!suite || !policies || num_policies == 0 || !report_path)
    return arg_error("tf_bench: null argument");
  return guard([&] {
    std::vector<tf::TaskSpec> tasks = tf::load_suite(suite);
    tf::PipelineConfig pipeline_cfg;
    pipeline_cfg.num_generators = generators ? generators : 4;
    pipeline_cfg.queue_capacity = 16;

    std::vector<tf::BenchReport> reports;
    for (size_t i = 0; i < num_policies; ++i) {
      std::string name = policies[i];
      std::string hash = "-";
      if (name != "expert" && name != "random") hash = tf::file_crc32_hex(name);
      reports.push_back(tf::evaluate(
          [name](const tf::TaskSpec& t) { return make_named_agent(name, t); }, name, hash,
          tasks, seeds_per_task, pipeline_cfg));
    }

    std::string echo = "suite=" + std::string(suite) +
                       " seeds_per_task=" + std::to_string(seeds_per_task) +
                       " generators=" + std::to_string(pipeline_cfg.num_generators);
    tf::ComparisonTable comparison =
        reports.size() > 1 ? tf::compare(reports) : tf::ComparisonTable{};
    std::string text = tf::render_bench_report(reports, comparison, echo);
    std::ofstream out(report_path, std::ios::trunc | std::ios::binary);
    out.write(text.data(), long(text.size()));
    out.flush();
    if (!out) tf::fail(tf::Errc::io, "cannot write report " + std::string(report_path));
    return TF_OK;
  });
}

tf_status tf_inspect(const char* store_dir, const char* episode_id_hex, const char* label,
                     char* buf, size_t cap, size_t* needed) {
  if (!store_dir) return arg_error("tf_inspect: null store_dir");
  return guard([&] {
    std::unique_ptr<tf::Store> store = tf::Store::open(store_dir);
    std::string text;
    if (label) {
      text += "label " + std::string(label) + "\n";
      for (const auto& hit : store->find_by_label(label))
        text += "  " + tf::id_to_hex(hit.episode_id) + " [" + std::to_string(hit.start) + ", " +
                std::to_string(hit.end) + ")\n";
    } else if (episode_id_hex) {
      tf::EpisodeManifest m = store->manifest(tf::id_from_hex(episode_id_hex));
      text += "episode_id: " + tf::id_to_hex(m.id) + "\n";
      text += "length: " + std::to_string(m.length) + "\n";
      text += "clip_len: " + std::to_string(m.clip_len) + "\n";
      text += "source: " + m.source + "\n";
      for (const auto& [mod, info] : m.modalities) {
        text += std::string("modality ") + tf::modality_name(mod) +
                ": frame_size=" + std::to_string(info.frame_size) +
                " clips=" + std::to_string(info.clips.size()) + "\n";
      }
      for (const auto& l : m.labels)
        text += "label " + l.label + " [" + std::to_string(l.start) + ", " +
                std::to_string(l.end) + ")\n";
    } else {
      std::vector<tf::EpisodeManifest> manifests = store->manifests();
      text += "store: " + std::string(store_dir) + "\n";
      text += "episodes: " + std::to_string(manifests.size()) + "\n";
      for (const auto& m : manifests) {
        text += "  " + tf::id_to_hex(m.id) + " length=" + std::to_string(m.length) +
                " clip_len=" + std::to_string(m.clip_len) +
                " modalities=" + std::to_string(m.modalities.size()) +
                " labels=" + std::to_string(m.labels.size()) + " source=\"" + m.source + "\"\n";
      }
    }
    copy_out(text, buf, cap, needed);
    return TF_OK;
  });
}

}  // extern "C"
