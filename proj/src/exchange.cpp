#include "exchange.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tf {

namespace {

constexpr const char* kMagic = "# trajforge episode v1";

std::string expect_field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) fail(Errc::parse, "exchange file truncated before '" + key + "'");
  std::string prefix = key + ": ";
  if (line.rfind(prefix, 0) != 0)
    fail(Errc::parse, "expected '" + key + ":' line, got '" + line + "'");
  return line.substr(prefix.size());
}

double parse_double(std::string_view tok, const char* what) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    fail(Errc::parse, std::string("bad ") + what + " value '" + std::string(tok) + "'");
  return v;
}

}  // namespace

std::string exchange_serialize(const EpisodeRecord& record) {
  if (record.length == 0 || record.obs.size() != record.length * record.obs_dim ||
      record.actions.size() != record.length || record.rewards.size() != record.length)
    fail(Errc::invalid_arg, "episode record arrays are misaligned");

  std::string out;
  out += kMagic;
  out += "\nepisode_id: " + id_to_hex(record.episode_id);
  out += "\ntask_id: " + record.task_id;
  out += "\nseed: " + std::to_string(record.seed);
  out += "\nlength: " + std::to_string(record.length);
  out += "\nobs_dim: " + std::to_string(record.obs_dim);
  out += "\n";
  for (uint64_t t = 0; t < record.length; ++t) {
    for (uint32_t i = 0; i < record.obs_dim; ++i) {
      out += format_double(record.obs[t * record.obs_dim + i]);
      out += ' ';
    }
    out += std::to_string(record.actions[t]);
    out += ' ';
    out += format_double(record.rewards[t]);
    out += '\n';
  }
  return out;
}

void exchange_write(const EpisodeRecord& record, const std::string& path) {
  std::string body = exchange_serialize(record);
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out.write(body.data(), long(body.size()));
  out.flush();
  if (!out) fail(Errc::io, "cannot write exchange file " + path);
}

EpisodeRecord exchange_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open exchange file " + path);

  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    fail(Errc::parse, "not a trajforge episode file: " + path);

  EpisodeRecord rec;
  rec.episode_id = id_from_hex(expect_field(in, "episode_id"));
  rec.task_id = expect_field(in, "task_id");
  rec.seed = std::stoull(expect_field(in, "seed"));
  rec.length = std::stoull(expect_field(in, "length"));
  rec.obs_dim = uint32_t(std::stoul(expect_field(in, "obs_dim")));
  if (rec.length == 0 || rec.obs_dim == 0) fail(Errc::parse, "bad header in " + path);

  rec.obs.reserve(rec.length * rec.obs_dim);
  rec.actions.reserve(rec.length);
  rec.rewards.reserve(rec.length);
  for (uint64_t t = 0; t < rec.length; ++t) {
    if (!std::getline(in, line))
      fail(Errc::parse, "exchange file " + path + " truncated at frame " + std::to_string(t));
    std::istringstream fields(line);
    std::string tok;
    for (uint32_t i = 0; i < rec.obs_dim; ++i) {
      if (!(fields >> tok)) fail(Errc::parse, "short frame " + std::to_string(t) + " in " + path);
      rec.obs.push_back(parse_double(tok, "observation"));
    }
    if (!(fields >> tok)) fail(Errc::parse, "missing action at frame " + std::to_string(t));
    rec.actions.push_back(int(parse_double(tok, "action")));
    if (!(fields >> tok)) fail(Errc::parse, "missing reward at frame " + std::to_string(t));
    rec.rewards.push_back(parse_double(tok, "reward"));
    if (fields >> tok) fail(Errc::parse, "trailing fields at frame " + std::to_string(t));
  }
  for (double r : rec.rewards) rec.total_return += r;
  return rec;
}

std::string exchange_file_name(const std::string& task_id, uint64_t seed) {
  return task_id + "_" + std::to_string(seed) + ".tfe";
}

}  // namespace tf
