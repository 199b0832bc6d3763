#pragma once

#include <string>

#include "episode.hpp"

namespace tf {

// Human-inspectable episode exchange files: a small header followed by one
// line per frame holding obs_dim observation values, the action, and the
// reward, all space separated. Values use shortest round-trip formatting so
// the file is lossless and byte-deterministic.
//
//   # trajforge episode v1
//   episode_id: 5f2a...(32 hex)
//   task_id: collect_simple
//   seed: 7
//   length: 24
//   obs_dim: 194
//   <obs...> <action> <reward>
//   ...

std::string exchange_serialize(const EpisodeRecord& record);
void exchange_write(const EpisodeRecord& record, const std::string& path);
EpisodeRecord exchange_read(const std::string& path);

// canonical file name for a generated episode
std::string exchange_file_name(const std::string& task_id, uint64_t seed);

}  // namespace tf
