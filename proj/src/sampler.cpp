#include "sampler.hpp"

#include <algorithm>
#include <numeric>

namespace tf {

uint64_t SamplerPlan::lane_total(uint32_t lane) const {
  uint64_t total = 0;
  for (const auto& ep : lanes.at(lane)) total += ep.length;
  return total;
}

uint64_t SamplerPlan::max_lane_total() const {
  uint64_t best = 0;
  for (uint32_t l = 0; l < lanes.size(); ++l) best = std::max(best, lane_total(l));
  return best;
}

uint64_t SamplerPlan::steps_per_epoch() const {
  return (max_lane_total() + seq_len - 1) / seq_len;
}

const uint8_t* Batch::frame(Modality m, uint32_t lane, uint32_t t) const {
  const BatchModality& bm = modalities.at(m);
  return bm.data.data() + at(lane, t) * bm.frame_size;
}

uint32_t shard_of(const EpisodeId& id, uint32_t num_shards) {
  return uint32_t(fnv1a64(id.data(), id.size()) % num_shards);
}

SamplerPlan build_plan(const std::vector<EpisodeManifest>& manifests, uint32_t batch_size,
                       uint32_t seq_len, uint32_t num_shards, uint32_t shard_id,
                       uint64_t epoch_seed) {
  if (batch_size < 1) fail(Errc::invalid_arg, "batch_size must be >= 1");
  if (seq_len < 1) fail(Errc::invalid_arg, "seq_len must be >= 1");
  if (num_shards < 1) fail(Errc::invalid_arg, "num_shards must be >= 1");
  if (shard_id >= num_shards)
    fail(Errc::invalid_arg, "shard_id " + std::to_string(shard_id) + " >= num_shards " +
                                std::to_string(num_shards));

  // canonical order first so the plan is independent of manifest iteration order
  std::vector<LaneEpisode> shard;
  for (const auto& m : manifests) {
    if (shard_of(m.id, num_shards) == shard_id) shard.push_back({m.id, m.length});
  }
  std::sort(shard.begin(), shard.end(),
            [](const LaneEpisode& a, const LaneEpisode& b) { return a.id < b.id; });
  if (shard.empty())
    fail(Errc::empty, "shard " + std::to_string(shard_id) + "/" + std::to_string(num_shards) +
                          " holds no episodes");

  // Fisher-Yates with the documented xorshift64* stream
  Rng rng(mix_seed(epoch_seed, shard_id, 0x73616D706C6572ull));
  for (size_t i = shard.size(); i > 1; --i) {
    size_t j = size_t(rng.below(i));
    std::swap(shard[i - 1], shard[j]);
  }

  // longest-first onto the currently shortest lane keeps lane totals near
  // balanced for any shuffle order; shuffled positions break length ties and
  // decide the order episodes appear within a lane
  std::vector<size_t> order(shard.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return shard[a].length > shard[b].length;
  });

  SamplerPlan plan;
  plan.shard_id = shard_id;
  plan.num_shards = num_shards;
  plan.batch_size = batch_size;
  plan.seq_len = seq_len;
  plan.epoch_seed = epoch_seed;
  plan.lanes.assign(batch_size, {});

  std::vector<uint64_t> totals(batch_size, 0);
  std::vector<std::vector<size_t>> members(batch_size);
  for (size_t idx : order) {
    uint32_t lane = 0;
    for (uint32_t l = 1; l < batch_size; ++l) {
      if (totals[l] < totals[lane]) lane = l;
    }
    members[lane].push_back(idx);
    totals[lane] += shard[idx].length;
  }
  for (uint32_t l = 0; l < batch_size; ++l) {
    std::sort(members[l].begin(), members[l].end());  // restore shuffled stream order
    for (size_t idx : members[l]) plan.lanes[l].push_back(shard[idx]);
  }
  return plan;
}

std::optional<Batch> next_batch(const SamplerPlan& plan, uint64_t step_index, const Store& store,
                                const std::vector<Modality>& modalities) {
  uint64_t window_start = step_index * plan.seq_len;
  if (window_start >= plan.max_lane_total()) return std::nullopt;

  Batch batch;
  batch.batch_size = plan.batch_size;
  batch.seq_len = plan.seq_len;
  size_t cells = size_t(plan.batch_size) * plan.seq_len;
  batch.first.assign(cells, 0);
  batch.mask.assign(cells, 0);

  // frame sizes come from the first lane episode that stores each modality
  for (Modality m : modalities) {
    BatchModality bm;
    for (const auto& lane : plan.lanes) {
      if (!lane.empty()) {
        EpisodeManifest man = store.manifest(lane[0].id);
        auto it = man.modalities.find(m);
        if (it == man.modalities.end())
          fail(Errc::not_found, std::string("modality ") + modality_name(m) +
                                    " not stored for episode " + id_to_hex(lane[0].id));
        bm.frame_size = it->second.frame_size;
        break;
      }
    }
    if (bm.frame_size == 0) fail(Errc::empty, "plan has no episodes");
    bm.data.assign(cells * bm.frame_size, 0);
    batch.modalities[m] = std::move(bm);
  }

  for (uint32_t lane = 0; lane < plan.batch_size; ++lane) {
    uint64_t cursor = 0;  // lane-concatenation frame index at episode start
    for (const auto& ep : plan.lanes[lane]) {
      uint64_t ep_begin = cursor;
      uint64_t ep_end = cursor + ep.length;
      cursor = ep_end;
      uint64_t lo = std::max(window_start, ep_begin);
      uint64_t hi = std::min(window_start + plan.seq_len, ep_end);
      if (lo >= hi) continue;

      uint64_t local_start = lo - ep_begin;
      uint64_t span = hi - lo;
      Segment seg = store.read_segment(ep.id, local_start, span, modalities);
      for (Modality m : modalities) {
        BatchModality& bm = batch.modalities.at(m);
        const ModalityFrames& src = seg.frames.at(m);
        if (src.frame_size != bm.frame_size)
          fail(Errc::invalid_arg, std::string("frame_size mismatch for ") + modality_name(m) +
                                      " in episode " + id_to_hex(ep.id));
        std::copy(src.bytes.begin(), src.bytes.end(),
                  bm.data.begin() + long(batch.at(lane, uint32_t(lo - window_start)) *
                                         bm.frame_size));
      }
      for (uint64_t f = lo; f < hi; ++f) {
        size_t cell = batch.at(lane, uint32_t(f - window_start));
        batch.mask[cell] = 1;
        if (f == ep_begin) batch.first[cell] = 1;
      }
    }
  }
  return batch;
}

}  // namespace tf
