#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "store.hpp"

namespace tf {

// One full rollout trajectory. Arrays are frame-aligned: obs[t] is the
// observation the agent saw before taking actions[t]. The final frame is the
// terminal observation; its action repeats the previous step's action and
// its reward is zero, so a trajectory of n env steps stores n+1 frames.
struct EpisodeRecord {
  EpisodeId episode_id{};
  std::string task_id;
  uint64_t seed = 0;
  uint32_t obs_dim = 0;
  std::vector<double> obs;      // length * obs_dim
  std::vector<int> actions;     // length
  std::vector<double> rewards;  // length
  double total_return = 0.0;
  bool success = false;
  uint64_t length = 0;
  uint32_t generator_id = 0;
  double wall_time_sec = 0.0;

  const double* frame(uint64_t t) const { return obs.data() + t * obs_dim; }
  const double* final_obs() const { return frame(length - 1); }
};

// Frame encodings used when episodes move through the binary store:
// observations and rewards are big-endian float64, actions one byte.
std::vector<uint8_t> encode_f64_frames(const std::vector<double>& values);
std::vector<double> decode_f64_frames(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_action_frames(const std::vector<int>& actions);
std::vector<int> decode_action_frames(const std::vector<uint8_t>& bytes);

// Builds the store episode for a record: observation/action/reward
// modalities plus one label spanning the whole episode (the task id).
EpisodeData record_to_episode_data(const EpisodeRecord& record);

// Rebuilds a record (sans success flag and metadata not kept in the store)
// from stored modalities.
EpisodeRecord episode_data_from_store(const Store& store, const EpisodeId& id);

}  // namespace tf
