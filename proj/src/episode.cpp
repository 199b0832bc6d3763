#include "episode.hpp"

namespace tf {

std::vector<uint8_t> encode_f64_frames(const std::vector<double>& values) {
  std::vector<uint8_t> out(values.size() * 8);
  for (size_t i = 0; i < values.size(); ++i) put_f64be(out.data() + i * 8, values[i]);
  return out;
}

std::vector<double> decode_f64_frames(const std::vector<uint8_t>& bytes) {
  if (bytes.size() % 8 != 0) fail(Errc::parse, "float64 frame payload not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (size_t i = 0; i < out.size(); ++i) out[i] = get_f64be(bytes.data() + i * 8);
  return out;
}

std::vector<uint8_t> encode_action_frames(const std::vector<int>& actions) {
  std::vector<uint8_t> out(actions.size());
  for (size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] < 0 || actions[i] > 255)
      fail(Errc::invalid_arg, "action " + std::to_string(actions[i]) + " not byte-encodable");
    out[i] = uint8_t(actions[i]);
  }
  return out;
}

std::vector<int> decode_action_frames(const std::vector<uint8_t>& bytes) {
  return std::vector<int>(bytes.begin(), bytes.end());
}

EpisodeData record_to_episode_data(const EpisodeRecord& record) {
  if (record.length == 0) fail(Errc::invalid_arg, "empty episode record");
  if (record.obs.size() != record.length * record.obs_dim ||
      record.actions.size() != record.length || record.rewards.size() != record.length)
    fail(Errc::invalid_arg, "episode record arrays are misaligned");

  EpisodeData data;
  data.id = record.episode_id;
  ModalityFrames obs;
  obs.frame_size = record.obs_dim * 8;
  obs.bytes = encode_f64_frames(record.obs);
  data.modalities[Modality::observation] = std::move(obs);
  ModalityFrames act;
  act.frame_size = 1;
  act.bytes = encode_action_frames(record.actions);
  data.modalities[Modality::action] = std::move(act);
  ModalityFrames rew;
  rew.frame_size = 8;
  rew.bytes = encode_f64_frames(record.rewards);
  data.modalities[Modality::reward] = std::move(rew);
  data.labels.push_back({record.task_id, 0, record.length});
  data.source = "task=" + record.task_id + " seed=" + std::to_string(record.seed);
  return data;
}

EpisodeRecord episode_data_from_store(const Store& store, const EpisodeId& id) {
  EpisodeManifest m = store.manifest(id);
  Segment seg = store.read_segment(
      id, 0, m.length, {Modality::observation, Modality::action, Modality::reward});
  EpisodeRecord rec;
  rec.episode_id = id;
  rec.length = m.length;
  rec.obs_dim = seg.frames.at(Modality::observation).frame_size / 8;
  rec.obs = decode_f64_frames(seg.frames.at(Modality::observation).bytes);
  rec.actions = decode_action_frames(seg.frames.at(Modality::action).bytes);
  rec.rewards = decode_f64_frames(seg.frames.at(Modality::reward).bytes);
  for (double r : rec.rewards) rec.total_return += r;
  if (!m.labels.empty()) rec.task_id = m.labels.front().label;
  return rec;
}

}  // namespace tf
