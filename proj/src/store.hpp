#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "common.hpp"

namespace tf {

// Chunked, append-only trajectory storage. Episodes are split per modality
// into fixed-length clips appended to data.bin; manifest.log holds one
// line-delimited JSON record per committed episode. The manifest append is
// the commit point: a write that dies earlier leaves only unreachable bytes
// in data.bin, which compact() reclaims.
//
// Data file layout (bit-exact):
//   repeated [21-byte key][u32be record length][record]
//   key    = episode_id(16) | modality(1) | clip_index(u32be)
//   record = codec_id(1) | frame_count(u16be) | payload | checksum(u32be)
// The checksum is CRC-32 over codec_id|frame_count|payload.

enum class Modality : uint8_t {
  observation = 0,
  action = 1,
  reward = 2,
  label = 3,
};

const char* modality_name(Modality m);

struct ClipKey {
  EpisodeId episode_id{};
  Modality modality = Modality::observation;
  uint32_t clip_index = 0;

  static constexpr size_t kSize = 21;
  void serialize(uint8_t out[kSize]) const;
  static ClipKey parse(const uint8_t in[kSize]);
  std::string describe() const;

  friend bool operator==(const ClipKey&, const ClipKey&) = default;
};

struct ModalityFrames {
  uint32_t frame_size = 0;        // bytes per frame
  std::vector<uint8_t> bytes;     // frame_count * frame_size bytes

  uint64_t frame_count() const { return frame_size ? bytes.size() / frame_size : 0; }
};

struct LabelSpan {
  std::string label;
  uint64_t start = 0;  // half-open [start, end)
  uint64_t end = 0;

  friend bool operator==(const LabelSpan&, const LabelSpan&) = default;
};

struct EpisodeData {
  EpisodeId id{};
  std::map<Modality, ModalityFrames> modalities;
  std::vector<LabelSpan> labels;
  std::string source;
};

struct ClipPlacement {
  uint64_t offset = 0;  // byte offset of the 21-byte key in data.bin
};

struct ManifestModality {
  uint32_t frame_size = 0;
  std::vector<ClipPlacement> clips;
};

struct EpisodeManifest {
  EpisodeId id{};
  uint64_t length = 0;
  uint32_t clip_len = 0;
  std::map<Modality, ManifestModality> modalities;
  std::vector<LabelSpan> labels;
  std::string source;

  uint32_t clip_count() const {
    return uint32_t((length + clip_len - 1) / clip_len);
  }
  uint32_t frame_count_of_clip(uint32_t index) const;
};

struct Segment {
  EpisodeId episode_id{};
  uint64_t start_frame = 0;
  std::map<Modality, ModalityFrames> frames;

  uint64_t length() const {
    return frames.empty() ? 0 : frames.begin()->second.frame_count();
  }
};

struct LabelHit {
  EpisodeId episode_id{};
  uint64_t start = 0;
  uint64_t end = 0;

  friend bool operator==(const LabelHit&, const LabelHit&) = default;
};

struct CompactStats {
  uint64_t bytes_before = 0;
  uint64_t bytes_after = 0;
  uint64_t bytes_reclaimed = 0;
  uint64_t clips_kept = 0;
  uint64_t clips_removed = 0;
};

struct RawClip {
  ClipKey key;
  uint64_t offset = 0;
  uint32_t record_len = 0;
  uint16_t frame_count = 0;
};

class Store {
 public:
  // Opens (creating if needed) a store directory containing data.bin and
  // manifest.log. The handle is safe to share across reader threads; writes
  // are serialized internally (single logical writer).
  static std::unique_ptr<Store> open(const std::string& dir);
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  EpisodeManifest write_episode(const EpisodeData& episode, uint32_t clip_len);
  Segment read_segment(const EpisodeId& id, uint64_t start, uint64_t len,
                       const std::vector<Modality>& modalities) const;
  std::vector<LabelHit> find_by_label(std::string_view label) const;
  CompactStats compact();

  bool has_episode(const EpisodeId& id) const;
  EpisodeManifest manifest(const EpisodeId& id) const;
  std::vector<EpisodeManifest> manifests() const;  // sorted by episode id
  uint64_t episode_count() const;

  // Walks data.bin in file order, calling fn for every structurally valid
  // record header. Requires a structurally intact file.
  void scan(const std::function<void(const RawClip&)>& fn) const;

  const std::string& dir() const { return dir_; }

  // Test hook: invoked after each appended clip during write_episode with the
  // number of clips written so far; throwing simulates a mid-write crash.
  void set_write_fault_hook(std::function<void(uint32_t)> hook);

 private:
  Store(std::string dir, int data_fd, int manifest_fd, uint64_t data_end,
        std::map<EpisodeId, EpisodeManifest> manifests);

  std::vector<uint8_t> read_clip_payload(const EpisodeManifest& m, Modality mod,
                                         uint32_t clip_index) const;

  std::string dir_;
  int data_fd_ = -1;
  int manifest_fd_ = -1;
  std::atomic<uint64_t> data_end_{0};

  // map_mu_ guards the manifest map (held briefly; writers never starve).
  // fd_mu_ guards the data fd against compaction swaps; readers revalidate
  // generation_ after acquiring it so stale clip offsets are retried.
  mutable std::mutex map_mu_;
  mutable std::shared_mutex fd_mu_;
  std::atomic<uint64_t> generation_{0};
  std::mutex write_mu_;  // serializes writers and compaction
  std::map<EpisodeId, EpisodeManifest> manifests_;
  std::function<void(uint32_t)> write_fault_hook_;
};

}  // namespace tf
