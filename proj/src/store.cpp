#include "store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "crc32.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tf {

namespace {

constexpr uint8_t kCodecRaw = 0;
constexpr size_t kRecordHeader = 1 + 2;   // codec_id + frame_count
constexpr size_t kRecordTrailer = 4;      // checksum
constexpr size_t kEntryHeader = ClipKey::kSize + 4;  // key + record length

uint64_t entry_size(uint64_t payload_len) {
  return kEntryHeader + kRecordHeader + payload_len + kRecordTrailer;
}

void pread_exact(int fd, uint8_t* buf, size_t n, uint64_t offset, const char* what) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::pread(fd, buf + done, n - done, off_t(offset + done));
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(Errc::io, std::string("pread failed for ") + what + ": " + std::strerror(errno));
    }
    if (r == 0) fail(Errc::corrupt, std::string("unexpected end of data file reading ") + what);
    done += size_t(r);
  }
}

void pwrite_exact(int fd, const uint8_t* buf, size_t n, uint64_t offset) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::pwrite(fd, buf + done, n - done, off_t(offset + done));
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(Errc::io, std::string("pwrite failed: ") + std::strerror(errno));
    }
    done += size_t(r);
  }
}

void append_all(int fd, const uint8_t* buf, size_t n) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::write(fd, buf + done, n - done);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(Errc::io, std::string("append failed: ") + std::strerror(errno));
    }
    done += size_t(r);
  }
}

json manifest_to_json(const EpisodeManifest& m) {
  json mods = json::array();
  for (const auto& [mod, info] : m.modalities) {
    json offsets = json::array();
    for (const auto& clip : info.clips) offsets.push_back(clip.offset);
    mods.push_back({{"m", int(mod)}, {"frame_size", info.frame_size}, {"offsets", offsets}});
  }
  json labels = json::array();
  for (const auto& l : m.labels) labels.push_back({l.label, l.start, l.end});
  return json{{"id", id_to_hex(m.id)},     {"length", m.length}, {"clip_len", m.clip_len},
              {"modalities", mods},        {"labels", labels},   {"source", m.source}};
}

EpisodeManifest manifest_from_json(const json& j) {
  EpisodeManifest m;
  m.id = id_from_hex(j.at("id").get<std::string>());
  m.length = j.at("length").get<uint64_t>();
  m.clip_len = j.at("clip_len").get<uint32_t>();
  m.source = j.at("source").get<std::string>();
  for (const auto& mod : j.at("modalities")) {
    ManifestModality info;
    info.frame_size = mod.at("frame_size").get<uint32_t>();
    for (const auto& off : mod.at("offsets")) info.clips.push_back({off.get<uint64_t>()});
    m.modalities[Modality(mod.at("m").get<int>())] = info;
  }
  for (const auto& l : j.at("labels"))
    m.labels.push_back({l.at(0).get<std::string>(), l.at(1).get<uint64_t>(), l.at(2).get<uint64_t>()});
  return m;
}

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::observation: return "observation";
    case Modality::action: return "action";
    case Modality::reward: return "reward";
    case Modality::label: return "label";
  }
  return "unknown";
}

void ClipKey::serialize(uint8_t out[kSize]) const {
  std::memcpy(out, episode_id.data(), 16);
  out[16] = uint8_t(modality);
  put_u32be(out + 17, clip_index);
}

ClipKey ClipKey::parse(const uint8_t in[kSize]) {
  ClipKey k;
  std::memcpy(k.episode_id.data(), in, 16);
  k.modality = Modality(in[16]);
  k.clip_index = get_u32be(in + 17);
  return k;
}

std::string ClipKey::describe() const {
  return "episode=" + id_to_hex(episode_id) + " modality=" + modality_name(modality) +
         " clip=" + std::to_string(clip_index);
}

uint32_t EpisodeManifest::frame_count_of_clip(uint32_t index) const {
  uint64_t start = uint64_t(index) * clip_len;
  return uint32_t(std::min<uint64_t>(clip_len, length - start));
}

Store::Store(std::string dir, int data_fd, int manifest_fd, uint64_t data_end,
             std::map<EpisodeId, EpisodeManifest> manifests)
    : dir_(std::move(dir)),
      data_fd_(data_fd),
      manifest_fd_(manifest_fd),
      data_end_(data_end),
      manifests_(std::move(manifests)) {}

Store::~Store() {
  if (data_fd_ >= 0) ::close(data_fd_);
  if (manifest_fd_ >= 0) ::close(manifest_fd_);
}

std::unique_ptr<Store> Store::open(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::io, "cannot create store directory " + dir + ": " + ec.message());

  std::string data_path = dir + "/data.bin";
  std::string manifest_path = dir + "/manifest.log";

  int data_fd = ::open(data_path.c_str(), O_RDWR | O_CREAT, 0644);
  if (data_fd < 0) fail(Errc::io, "cannot open " + data_path + ": " + std::strerror(errno));
  int manifest_fd = ::open(manifest_path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
  if (manifest_fd < 0) {
    ::close(data_fd);
    fail(Errc::io, "cannot open " + manifest_path + ": " + std::strerror(errno));
  }

  uint64_t data_end = uint64_t(::lseek(data_fd, 0, SEEK_END));

  std::map<EpisodeId, EpisodeManifest> manifests;
  {
    std::ifstream in(manifest_path);
    std::string line;
    size_t line_no = 0;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    for (const auto& l : lines) {
      ++line_no;
      if (l.empty()) continue;
      try {
        EpisodeManifest m = manifest_from_json(json::parse(l));
        manifests[m.id] = std::move(m);
      } catch (const std::exception& e) {
        // a torn final line is an uncommitted episode; anything else is corruption
        if (line_no == lines.size()) {
          log_warn("ignoring torn trailing manifest line in " + manifest_path);
          continue;
        }
        ::close(data_fd);
        ::close(manifest_fd);
        fail(Errc::corrupt, "bad manifest line " + std::to_string(line_no) + " in " +
                                manifest_path + ": " + e.what());
      }
    }
  }

  return std::unique_ptr<Store>(
      new Store(dir, data_fd, manifest_fd, data_end, std::move(manifests)));
}

EpisodeManifest Store::write_episode(const EpisodeData& episode, uint32_t clip_len) {
  if (clip_len < 1) fail(Errc::invalid_arg, "clip_len must be >= 1");
  if (episode.modalities.empty()) fail(Errc::invalid_arg, "episode has no modalities");

  uint64_t length = 0;
  bool first_mod = true;
  for (const auto& [mod, frames] : episode.modalities) {
    if (frames.frame_size == 0) fail(Errc::invalid_arg, "frame_size must be >= 1");
    if (frames.bytes.size() % frames.frame_size != 0)
      fail(Errc::invalid_arg, std::string("payload of ") + modality_name(mod) +
                                  " is not a whole number of frames");
    uint64_t n = frames.frame_count();
    if (first_mod) {
      length = n;
      first_mod = false;
    } else if (n != length) {
      fail(Errc::invalid_arg, "modality length mismatch: " + std::string(modality_name(mod)) +
                                  " has " + std::to_string(n) + " frames, expected " +
                                  std::to_string(length));
    }
  }
  if (length < 1) fail(Errc::invalid_arg, "episode length must be >= 1");
  for (const auto& l : episode.labels) {
    if (!(l.start < l.end && l.end <= length))
      fail(Errc::invalid_arg, "label interval [" + std::to_string(l.start) + ", " +
                                  std::to_string(l.end) + ") out of bounds for length " +
                                  std::to_string(length));
  }

  std::lock_guard<std::mutex> write_lock(write_mu_);
  {
    std::lock_guard<std::mutex> lock(map_mu_);
    if (manifests_.count(episode.id))
      fail(Errc::exists, "duplicate episode_id " + id_to_hex(episode.id));
  }

  EpisodeManifest m;
  m.id = episode.id;
  m.length = length;
  m.clip_len = clip_len;
  m.labels = episode.labels;
  m.source = episode.source;

  uint32_t num_clips = uint32_t((length + clip_len - 1) / clip_len);
  uint32_t clips_written = 0;
  uint64_t cursor = data_end_.load();

  for (const auto& [mod, frames] : episode.modalities) {
    ManifestModality info;
    info.frame_size = frames.frame_size;
    for (uint32_t ci = 0; ci < num_clips; ++ci) {
      uint64_t frame_start = uint64_t(ci) * clip_len;
      uint16_t frame_count = uint16_t(std::min<uint64_t>(clip_len, length - frame_start));
      uint64_t payload_len = uint64_t(frame_count) * frames.frame_size;
      const uint8_t* payload = frames.bytes.data() + frame_start * frames.frame_size;

      std::vector<uint8_t> entry(entry_size(payload_len));
      ClipKey key{episode.id, mod, ci};
      key.serialize(entry.data());
      put_u32be(entry.data() + ClipKey::kSize,
                uint32_t(kRecordHeader + payload_len + kRecordTrailer));
      uint8_t* rec = entry.data() + kEntryHeader;
      rec[0] = kCodecRaw;
      put_u16be(rec + 1, frame_count);
      std::memcpy(rec + kRecordHeader, payload, payload_len);
      uint32_t crc = checksum32(rec, kRecordHeader + payload_len);
      put_u32be(rec + kRecordHeader + payload_len, crc);

      pwrite_exact(data_fd_, entry.data(), entry.size(), cursor);
      info.clips.push_back({cursor});
      cursor += entry.size();
      data_end_.store(cursor);  // appended bytes are permanent even if we fail below
      ++clips_written;
      if (write_fault_hook_) write_fault_hook_(clips_written);
    }
    m.modalities[mod] = std::move(info);
  }

  // commit point: the manifest line makes the episode visible
  std::string line = manifest_to_json(m).dump();
  line.push_back('\n');
  append_all(manifest_fd_, reinterpret_cast<const uint8_t*>(line.data()), line.size());

  {
    std::lock_guard<std::mutex> lock(map_mu_);
    manifests_[m.id] = m;
  }
  return m;
}

std::vector<uint8_t> Store::read_clip_payload(const EpisodeManifest& m, Modality mod,
                                              uint32_t clip_index) const {
  const ManifestModality& info = m.modalities.at(mod);
  ClipKey expect{m.id, mod, clip_index};
  uint64_t offset = info.clips.at(clip_index).offset;

  uint8_t header[kEntryHeader];
  pread_exact(data_fd_, header, sizeof(header), offset, "clip header");
  ClipKey got = ClipKey::parse(header);
  if (!(got == expect))
    fail(Errc::corrupt, "clip key mismatch at offset " + std::to_string(offset) +
                            ": expected " + expect.describe() + ", found " + got.describe());
  uint32_t record_len = get_u32be(header + ClipKey::kSize);
  uint16_t frame_count = m.frame_count_of_clip(clip_index);
  uint64_t payload_len = uint64_t(frame_count) * info.frame_size;
  if (record_len != kRecordHeader + payload_len + kRecordTrailer)
    fail(Errc::corrupt, "record length mismatch for " + expect.describe());

  std::vector<uint8_t> record(record_len);
  pread_exact(data_fd_, record.data(), record.size(), offset + kEntryHeader, "clip record");
  if (record[0] != kCodecRaw)
    fail(Errc::unsupported, "unknown codec_id " + std::to_string(record[0]) + " in " +
                                expect.describe());
  if (get_u16be(record.data() + 1) != frame_count)
    fail(Errc::corrupt, "frame_count mismatch in " + expect.describe());
  uint32_t crc = checksum32(record.data(), kRecordHeader + payload_len);
  uint32_t stored = get_u32be(record.data() + kRecordHeader + payload_len);
  if (crc != stored)
    fail(Errc::corrupt, "checksum mismatch in clip " + expect.describe() + " (stored " +
                            to_hex64(stored).substr(8) + ", computed " +
                            to_hex64(crc).substr(8) + ")");

  return std::vector<uint8_t>(record.begin() + kRecordHeader,
                              record.begin() + long(kRecordHeader + payload_len));
}

Segment Store::read_segment(const EpisodeId& id, uint64_t start, uint64_t len,
                            const std::vector<Modality>& modalities) const {
  EpisodeManifest m;
  uint64_t generation;
  std::shared_lock<std::shared_mutex> lock(fd_mu_, std::defer_lock);
  while (true) {
    {
      std::lock_guard<std::mutex> map_lock(map_mu_);
      auto it = manifests_.find(id);
      if (it == manifests_.end()) fail(Errc::not_found, "unknown episode " + id_to_hex(id));
      m = it->second;
      generation = generation_.load();
    }
    lock.lock();
    if (generation_.load() == generation) break;  // offsets are current
    lock.unlock();
  }
  if (start > m.length || len > m.length - start)
    fail(Errc::range, "segment [" + std::to_string(start) + ", " + std::to_string(start + len) +
                          ") out of bounds for episode of length " + std::to_string(m.length));

  Segment seg;
  seg.episode_id = id;
  seg.start_frame = start;
  for (Modality mod : modalities) {
    auto mit = m.modalities.find(mod);
    if (mit == m.modalities.end())
      fail(Errc::not_found, std::string("modality ") + modality_name(mod) +
                                " not stored for episode " + id_to_hex(id));
    ModalityFrames out;
    out.frame_size = mit->second.frame_size;
    out.bytes.reserve(len * out.frame_size);
    if (len > 0) {
      uint32_t first_clip = uint32_t(start / m.clip_len);
      uint32_t last_clip = uint32_t((start + len - 1) / m.clip_len);
      for (uint32_t ci = first_clip; ci <= last_clip; ++ci) {
        std::vector<uint8_t> payload = read_clip_payload(m, mod, ci);
        uint64_t clip_start = uint64_t(ci) * m.clip_len;
        uint64_t lo = std::max(start, clip_start);
        uint64_t hi = std::min(start + len, clip_start + m.frame_count_of_clip(ci));
        out.bytes.insert(out.bytes.end(),
                         payload.begin() + long((lo - clip_start) * out.frame_size),
                         payload.begin() + long((hi - clip_start) * out.frame_size));
      }
    }
    seg.frames[mod] = std::move(out);
  }
  return seg;
}

std::vector<LabelHit> Store::find_by_label(std::string_view label) const {
  std::lock_guard<std::mutex> lock(map_mu_);
  std::vector<LabelHit> hits;
  for (const auto& [id, m] : manifests_) {
    for (const auto& l : m.labels) {
      if (l.label == label) hits.push_back({id, l.start, l.end});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const LabelHit& a, const LabelHit& b) {
    if (a.episode_id != b.episode_id) return a.episode_id < b.episode_id;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });
  return hits;
}

CompactStats Store::compact() {
  std::unique_lock<std::mutex> write_lock(write_mu_, std::try_to_lock);
  if (!write_lock.owns_lock()) fail(Errc::busy, "concurrent writer detected during compact");

  CompactStats stats;
  stats.bytes_before = data_end_.load();

  uint64_t kept_before = 0;
  {
    // best-effort count of records currently in the file
    uint64_t off = 0;
    while (off + kEntryHeader <= stats.bytes_before) {
      uint8_t header[kEntryHeader];
      pread_exact(data_fd_, header, sizeof(header), off, "scan header");
      uint32_t record_len = get_u32be(header + ClipKey::kSize);
      if (off + kEntryHeader + record_len > stats.bytes_before) break;
      ++kept_before;
      off += kEntryHeader + record_len;
    }
  }

  std::map<EpisodeId, EpisodeManifest> snapshot;
  {
    std::lock_guard<std::mutex> map_lock(map_mu_);
    snapshot = manifests_;
  }

  std::string tmp_data = dir_ + "/data.bin.tmp";
  std::string tmp_manifest = dir_ + "/manifest.log.tmp";
  int out_fd = ::open(tmp_data.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (out_fd < 0) fail(Errc::io, "cannot create " + tmp_data + ": " + std::strerror(errno));

  uint64_t cursor = 0;
  std::map<EpisodeId, EpisodeManifest> rewritten;
  try {
    for (const auto& [id, m] : snapshot) {
      EpisodeManifest nm = m;
      for (auto& [mod, info] : nm.modalities) {
        for (uint32_t ci = 0; ci < info.clips.size(); ++ci) {
          uint64_t offset = m.modalities.at(mod).clips[ci].offset;
          uint8_t header[kEntryHeader];
          pread_exact(data_fd_, header, sizeof(header), offset, "compact header");
          uint32_t record_len = get_u32be(header + ClipKey::kSize);
          std::vector<uint8_t> entry(kEntryHeader + record_len);
          std::memcpy(entry.data(), header, kEntryHeader);
          pread_exact(data_fd_, entry.data() + kEntryHeader, record_len,
                      offset + kEntryHeader, "compact record");
          pwrite_exact(out_fd, entry.data(), entry.size(), cursor);
          info.clips[ci].offset = cursor;
          cursor += entry.size();
          ++stats.clips_kept;
        }
      }
      rewritten[id] = std::move(nm);
    }

    std::ofstream mout(tmp_manifest, std::ios::trunc);
    for (const auto& [id, m] : rewritten) mout << manifest_to_json(m).dump() << "\n";
    mout.flush();
    if (!mout) fail(Errc::io, "cannot write " + tmp_manifest);
  } catch (...) {
    ::close(out_fd);
    ::unlink(tmp_data.c_str());
    ::unlink(tmp_manifest.c_str());
    throw;
  }

  ::fsync(out_fd);
  std::error_code ec;
  fs::rename(tmp_data, dir_ + "/data.bin", ec);
  if (!ec) fs::rename(tmp_manifest, dir_ + "/manifest.log", ec);
  if (ec) {
    ::close(out_fd);
    fail(Errc::io, "compact rename failed: " + ec.message());
  }

  int new_manifest_fd = ::open((dir_ + "/manifest.log").c_str(), O_RDWR | O_APPEND, 0644);
  if (new_manifest_fd < 0) {
    ::close(out_fd);
    fail(Errc::io, "cannot reopen manifest.log: " + std::string(std::strerror(errno)));
  }
  {
    std::unique_lock<std::shared_mutex> fd_lock(fd_mu_);
    std::lock_guard<std::mutex> map_lock(map_mu_);
    ::close(data_fd_);
    ::close(manifest_fd_);
    data_fd_ = out_fd;
    manifest_fd_ = new_manifest_fd;
    data_end_.store(cursor);
    manifests_ = std::move(rewritten);
    generation_.fetch_add(1);
  }

  stats.bytes_after = cursor;
  stats.bytes_reclaimed = stats.bytes_before - stats.bytes_after;
  stats.clips_removed = kept_before - stats.clips_kept;
  log_info("compact: reclaimed " + std::to_string(stats.bytes_reclaimed) + " bytes, removed " +
           std::to_string(stats.clips_removed) + " clips");
  return stats;
}

bool Store::has_episode(const EpisodeId& id) const {
  std::lock_guard<std::mutex> lock(map_mu_);
  return manifests_.count(id) > 0;
}

EpisodeManifest Store::manifest(const EpisodeId& id) const {
  std::lock_guard<std::mutex> lock(map_mu_);
  auto it = manifests_.find(id);
  if (it == manifests_.end()) fail(Errc::not_found, "unknown episode " + id_to_hex(id));
  return it->second;
}

std::vector<EpisodeManifest> Store::manifests() const {
  std::lock_guard<std::mutex> lock(map_mu_);
  std::vector<EpisodeManifest> out;
  out.reserve(manifests_.size());
  for (const auto& [id, m] : manifests_) out.push_back(m);
  return out;
}

uint64_t Store::episode_count() const {
  std::lock_guard<std::mutex> lock(map_mu_);
  return manifests_.size();
}

void Store::scan(const std::function<void(const RawClip&)>& fn) const {
  std::shared_lock<std::shared_mutex> lock(fd_mu_);
  uint64_t end = data_end_.load();
  uint64_t off = 0;
  while (off + kEntryHeader <= end) {
    uint8_t header[kEntryHeader];
    pread_exact(data_fd_, header, sizeof(header), off, "scan header");
    uint32_t record_len = get_u32be(header + ClipKey::kSize);
    if (record_len < kRecordHeader + kRecordTrailer || off + kEntryHeader + record_len > end)
      fail(Errc::corrupt, "torn record at offset " + std::to_string(off));
    uint8_t rec_header[kRecordHeader];
    pread_exact(data_fd_, rec_header, sizeof(rec_header), off + kEntryHeader, "scan record");
    RawClip clip;
    clip.key = ClipKey::parse(header);
    clip.offset = off;
    clip.record_len = record_len;
    clip.frame_count = get_u16be(rec_header + 1);
    fn(clip);
    off += kEntryHeader + record_len;
  }
}

void Store::set_write_fault_hook(std::function<void(uint32_t)> hook) {
  write_fault_hook_ = std::move(hook);
}

}  // namespace tf
