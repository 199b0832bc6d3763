/*
 * trajforge — desk-scale embodied-agent toolkit: trajectory store,
 * episode-continuous sampler, gridworld environment with hook callbacks,
 * recurrent policy, behavior-cloning pre-training, KL-constrained PPO
 * fine-tuning, an asynchronous rollout pipeline and a benchmark harness.
 *
 * C API over the C++ core: opaque handles, status codes, UTF-8 paths.
 * Every function returns TF_OK on success; tf_last_error() describes the
 * most recent failure on the calling thread.
 */

#ifndef TRAJFORGE_H
#define TRAJFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TF_API __declspec(dllexport)
#else
#define TF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tf_status {
  TF_OK = 0,
  TF_END = 1, /* end of stream (epoch exhausted), not an error */
  TF_ERR_INVALID_ARG = -1,
  TF_ERR_NOT_FOUND = -2,
  TF_ERR_EXISTS = -3,
  TF_ERR_RANGE = -4,
  TF_ERR_CORRUPT = -5,
  TF_ERR_IO = -6,
  TF_ERR_STATE = -7,
  TF_ERR_BUSY = -8,
  TF_ERR_PARSE = -9,
  TF_ERR_EMPTY = -10,
  TF_ERR_NUMERIC = -11,
  TF_ERR_CALLBACK = -12,
  TF_ERR_ENV_FAILURE = -13,
  TF_ERR_UNSUPPORTED = -14,
  TF_ERR_INTERNAL = -99
} tf_status;

TF_API const char* tf_status_name(tf_status status);
TF_API const char* tf_version(void);
/* copies the calling thread's last error message (NUL-terminated) */
TF_API void tf_last_error(char* buf, size_t cap);

/* episode ids are 16 bytes, passed as 32 lowercase hex chars + NUL */
#define TF_EPISODE_ID_HEX 33

typedef enum tf_modality {
  TF_MOD_OBSERVATION = 0,
  TF_MOD_ACTION = 1,
  TF_MOD_REWARD = 2,
  TF_MOD_LABEL = 3
} tf_modality;

/* ------------------------------------------------------------------ store */

typedef struct tf_store tf_store;

typedef struct tf_modality_frames {
  tf_modality modality;
  uint32_t frame_size;   /* bytes per frame */
  const uint8_t* data;   /* frame_count * frame_size bytes */
  uint64_t frame_count;
} tf_modality_frames;

typedef struct tf_label_span {
  const char* label;
  uint64_t start; /* half-open [start, end) */
  uint64_t end;
} tf_label_span;

TF_API tf_status tf_store_open(const char* dir, tf_store** out);
TF_API void tf_store_close(tf_store* store);
TF_API tf_status tf_store_write_episode(tf_store* store, const char* episode_id_hex,
                                        const tf_modality_frames* modalities,
                                        size_t num_modalities, const tf_label_span* labels,
                                        size_t num_labels, const char* source,
                                        uint32_t clip_len);
/* out must hold len * frame_size bytes */
TF_API tf_status tf_store_read_segment(tf_store* store, const char* episode_id_hex,
                                       uint64_t start, uint64_t len, tf_modality modality,
                                       uint8_t* out, size_t out_cap);
TF_API tf_status tf_store_episode_length(tf_store* store, const char* episode_id_hex,
                                         uint64_t* out_length);
TF_API tf_status tf_store_frame_size(tf_store* store, const char* episode_id_hex,
                                     tf_modality modality, uint32_t* out_frame_size);
TF_API tf_status tf_store_episode_count(tf_store* store, uint64_t* out_count);
/* newline-joined sorted hex ids; *needed receives the full size incl. NUL */
TF_API tf_status tf_store_list_episodes(tf_store* store, char* buf, size_t cap, size_t* needed);
/* one "id\tstart\tend" line per hit, in (episode, start) order */
TF_API tf_status tf_store_find_by_label(tf_store* store, const char* label, char* buf,
                                        size_t cap, size_t* needed);
TF_API tf_status tf_store_compact(tf_store* store, uint64_t* bytes_reclaimed,
                                  uint64_t* clips_removed);
TF_API uint32_t tf_checksum32(const uint8_t* data, size_t len);

/* ---------------------------------------------------------------- sampler */

typedef struct tf_plan tf_plan;
typedef struct tf_batch tf_batch;

TF_API tf_status tf_plan_build(tf_store* store, uint32_t batch_size, uint32_t seq_len,
                               uint32_t num_shards, uint32_t shard_id, uint64_t epoch_seed,
                               tf_plan** out);
TF_API void tf_plan_free(tf_plan* plan);
TF_API tf_status tf_plan_steps_per_epoch(const tf_plan* plan, uint64_t* out_steps);
/* returns TF_END once step_index is past the epoch end */
TF_API tf_status tf_batch_next(const tf_plan* plan, tf_store* store, uint64_t step_index,
                               const tf_modality* modalities, size_t num_modalities,
                               tf_batch** out);
TF_API void tf_batch_free(tf_batch* batch);
TF_API tf_status tf_batch_dims(const tf_batch* batch, uint32_t* batch_size, uint32_t* seq_len);
/* lane-major frame bytes: batch_size * seq_len * frame_size */
TF_API tf_status tf_batch_modality(const tf_batch* batch, tf_modality modality,
                                   const uint8_t** data, uint32_t* frame_size);
/* lane-major flags, batch_size * seq_len entries each */
TF_API tf_status tf_batch_flags(const tf_batch* batch, const uint8_t** first,
                                const uint8_t** mask);

/* -------------------------------------------------------------------- env */

typedef struct tf_env tf_env;
typedef struct tf_hookctx tf_hookctx;

/* task: a builtin task id ("collect_simple", ...) or inline JSON with the
 * suite-file task schema */
TF_API tf_status tf_env_create(const char* task, tf_env** out);
TF_API void tf_env_free(tf_env* env);
TF_API tf_status tf_env_obs_dim(const tf_env* env, uint32_t* out_dim);
TF_API tf_status tf_env_num_actions(const tf_env* env, uint32_t* out_actions);
TF_API tf_status tf_env_reset(tf_env* env, uint64_t seed, double* obs_out /* obs_dim */);
TF_API tf_status tf_env_step(tf_env* env, int32_t action, double* obs_out /* obs_dim */,
                             double* reward_out, int32_t* done_out);

/* hook callbacks; any pointer may be NULL. Returning nonzero aborts the
 * episode with TF_ERR_CALLBACK attributed to `name`. */
typedef struct tf_callbacks {
  const char* name;
  void* user;
  int32_t (*on_reset_pre)(tf_hookctx* ctx, void* user);
  int32_t (*on_reset_post)(tf_hookctx* ctx, void* user);
  int32_t (*on_step_pre)(tf_hookctx* ctx, void* user);
  int32_t (*on_step_post)(tf_hookctx* ctx, void* user);
} tf_callbacks;

TF_API tf_status tf_env_add_callback(tf_env* env, const tf_callbacks* callbacks);
/* builtin callbacks by name: reward_on_event(event,value),
 * fps_monitor(window), episode_logger(path,task_id); params are
 * "key=value,key=value" */
TF_API tf_status tf_env_add_builtin_callback(tf_env* env, const char* name, const char* params);

TF_API tf_status tf_hookctx_reward_add(tf_hookctx* ctx, double delta);
TF_API tf_status tf_hookctx_get_action(tf_hookctx* ctx, int32_t* out_action);
TF_API tf_status tf_hookctx_set_action(tf_hookctx* ctx, int32_t action);
TF_API tf_status tf_hookctx_set_done(tf_hookctx* ctx, int32_t done);
TF_API tf_status tf_hookctx_get_obs(tf_hookctx* ctx, const double** obs, size_t* len);
TF_API tf_status tf_hookctx_info_get(tf_hookctx* ctx, const char* key, double* out_value);
TF_API tf_status tf_hookctx_info_set(tf_hookctx* ctx, const char* key, double value);
/* queue commands applied before the next physics update:
 * "set_agent=r,c"  "add_item=r,c"  "clear_items"  "set_max_steps=n" */
TF_API tf_status tf_hookctx_queue_command(tf_hookctx* ctx, const char* command);

/* ------------------------------------------------------------------ policy */

typedef struct tf_policy tf_policy;

TF_API tf_status tf_policy_init(uint32_t obs_dim, uint32_t hidden, uint32_t num_actions,
                                uint64_t seed, tf_policy** out);
TF_API tf_status tf_policy_load(const char* path, tf_policy** out);
TF_API tf_status tf_policy_save(const tf_policy* policy, const char* path);
TF_API void tf_policy_free(tf_policy* policy);
TF_API tf_status tf_policy_dims(const tf_policy* policy, uint32_t* obs_dim, uint32_t* hidden,
                                uint32_t* num_actions);
/* state is hidden doubles, updated in place; pass zeros at episode start */
TF_API tf_status tf_policy_step(const tf_policy* policy, const double* obs, double* state,
                                double* logits_out, double* value_out);

/* --------------------------------------------------------------- workflows */

/* config_json uses the documented train-bc config schema; out_policy and
 * loss_curve_path may not be NULL / may be NULL respectively */
TF_API tf_status tf_train_bc(const char* store_dir, const char* config_json,
                             const char* out_policy, const char* loss_curve_path);
/* task: builtin id, task JSON, or suite path + "#task_id" */
TF_API tf_status tf_train_ppo(const char* task, const char* anchor_policy,
                              const char* config_json, const char* out_policy,
                              const char* metrics_path);
TF_API tf_status tf_gen_demos(const char* task, uint32_t episodes, uint64_t seed,
                              const char* out_dir);
TF_API tf_status tf_ingest(const char* input_dir, const char* store_dir, uint32_t clip_len,
                           uint64_t* episodes_ingested);
/* policy_path NULL runs the scripted expert; select is "greedy" or "sample";
 * to_store_dir and filter_spec may be NULL */
TF_API tf_status tf_rollout(const char* policy_path, const char* task, uint32_t generators,
                            uint32_t episodes_per_generator, uint64_t seed_base,
                            const char* select, const char* filter_spec,
                            const char* report_path, const char* to_store_dir,
                            char* stats_json, size_t stats_cap);
/* suite: path or "builtin"; policies: policy file paths, "expert", "random" */
TF_API tf_status tf_bench(const char* suite, const char* const* policies, size_t num_policies,
                          uint32_t seeds_per_task, uint32_t generators, const char* report_path);
/* text description of a store / one episode / one label's hits */
TF_API tf_status tf_inspect(const char* store_dir, const char* episode_id_hex,
                            const char* label, char* buf, size_t cap, size_t* needed);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TRAJFORGE_H */
