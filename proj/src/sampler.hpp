#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "store.hpp"

namespace tf {

// Episode-continuous batch streaming. Each shard owns a disjoint subset of
// the store's episodes (FNV-1a hash of the id, mod num_shards). Episodes are
// shuffled by epoch_seed, dealt to lanes longest-first onto the currently
// shortest lane, then concatenated back-to-back inside the lane. Batches are
// addressed statelessly by step index: batch k covers frames
// [k*seq_len, (k+1)*seq_len) of every lane's concatenation, with `first`
// marking episode starts and `mask` false past a lane's total length.

struct LaneEpisode {
  EpisodeId id{};
  uint64_t length = 0;
};

struct SamplerPlan {
  uint32_t shard_id = 0;
  uint32_t num_shards = 1;
  uint32_t batch_size = 1;
  uint32_t seq_len = 1;
  uint64_t epoch_seed = 0;
  std::vector<std::vector<LaneEpisode>> lanes;

  uint64_t lane_total(uint32_t lane) const;
  uint64_t max_lane_total() const;
  // number of batches in one epoch: ceil(max_lane_total / seq_len)
  uint64_t steps_per_epoch() const;
};

struct BatchModality {
  uint32_t frame_size = 0;
  std::vector<uint8_t> data;  // batch_size * seq_len * frame_size, lane-major
};

struct Batch {
  uint32_t batch_size = 0;
  uint32_t seq_len = 0;
  std::map<Modality, BatchModality> modalities;
  std::vector<uint8_t> first;  // batch_size * seq_len
  std::vector<uint8_t> mask;   // batch_size * seq_len

  size_t at(uint32_t lane, uint32_t t) const { return size_t(lane) * seq_len + t; }
  const uint8_t* frame(Modality m, uint32_t lane, uint32_t t) const;
};

uint32_t shard_of(const EpisodeId& id, uint32_t num_shards);

// Pure function of its inputs; throws Errc::empty when no episode hashes to
// this shard.
SamplerPlan build_plan(const std::vector<EpisodeManifest>& manifests, uint32_t batch_size,
                       uint32_t seq_len, uint32_t num_shards, uint32_t shard_id,
                       uint64_t epoch_seed);

// Stateless random-access fetch; nullopt once step_index is past the epoch
// end for every lane.
std::optional<Batch> next_batch(const SamplerPlan& plan, uint64_t step_index, const Store& store,
                                const std::vector<Modality>& modalities);

}  // namespace tf
