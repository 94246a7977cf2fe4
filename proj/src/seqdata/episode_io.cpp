#include "icil/seqdata/episode_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "icil/numerics/binary_io.hpp"

namespace icil::data {

namespace {

using nlohmann::json;

std::size_t payload_floats(const Trajectory& t) {
  return t.third.size() + t.wrist.size() + t.proprio.size() + t.trace.size() + t.action.size();
}

}  // namespace

void save_episodes(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open episode file for writing: " + path.string());
  out << kEpisodeMagic << ' ' << kEpisodeFormatVersion << ' ' << trajectories.size() << '\n';
  for (const auto& t : trajectories) {
    t.validate();
    const json record = {
        {"label", t.task_label},
        {"length", t.length},
        {"third", {t.third_resolution, t.third_resolution, 3}},
        {"wrist", {t.wrist_resolution, t.wrist_resolution, 3}},
        {"proprio", kProprioDim},
        {"trace", kTraceDim},
        {"action", kActionDim},
        {"has_traces", t.has_traces},
        {"payload_bytes", payload_floats(t) * sizeof(float)},
    };
    out << record.dump() << '\n';
    for (const auto* col : {&t.third, &t.wrist, &t.proprio, &t.trace, &t.action}) num::write_f32_le(out, *col);
  }
  if (!out) throw std::runtime_error("failed writing episode file: " + path.string());
}

std::vector<Trajectory> load_episodes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open episode file: " + path.string());
  const auto file_size = std::filesystem::file_size(path);

  std::string header;
  if (!std::getline(in, header)) throw TruncatedError("episode file has no header: " + path.string());
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  long long count = -1;
  hs >> magic >> version >> count;
  if (magic != kEpisodeMagic) throw EpisodeFormatError("not an episode file: " + path.string());
  if (version != kEpisodeFormatVersion) {
    throw VersionError("episode format version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kEpisodeFormatVersion) + ")");
  }
  if (!hs || count < 0) throw EpisodeFormatError("malformed episode file header: " + header);

  std::vector<Trajectory> out;
  for (long long i = 0; i < count; ++i) {
    const std::string where = "episode " + std::to_string(i) + " of " + path.string();
    std::string line;
    if (!std::getline(in, line)) throw TruncatedError(where + ": record missing");
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw EpisodeFormatError(where + ": unreadable record (" + e.what() + ")");
    }
    Trajectory t;
    std::size_t payload_bytes = 0;
    try {
      t.task_label = rec.at("label").get<std::string>();
      t.length = rec.at("length").get<int>();
      t.has_traces = rec.at("has_traces").get<bool>();
      const auto third = rec.at("third").get<std::vector<int>>();
      const auto wrist = rec.at("wrist").get<std::vector<int>>();
      if (third.size() != 3 || wrist.size() != 3 || third[0] != third[1] || wrist[0] != wrist[1] || third[2] != 3 ||
          wrist[2] != 3 || rec.at("proprio").get<int>() != kProprioDim || rec.at("trace").get<int>() != kTraceDim ||
          rec.at("action").get<int>() != kActionDim) {
        throw ShapeError(where + ": unsupported array shapes");
      }
      t.third_resolution = third[0];
      t.wrist_resolution = wrist[0];
      payload_bytes = rec.at("payload_bytes").get<std::size_t>();
    } catch (const json::exception& e) {
      throw EpisodeFormatError(where + ": malformed record (" + e.what() + ")");
    }
    const auto pos = static_cast<std::uintmax_t>(in.tellg());
    if (payload_bytes > file_size - pos) {
      throw TruncatedError(where + ": payload of " + std::to_string(payload_bytes) + " bytes runs past end of file");
    }
    if (t.length < 0 || t.third_resolution <= 0 || t.wrist_resolution <= 0) throw ShapeError(where + ": bad shape");
    const auto n = static_cast<std::size_t>(t.length);
    t.third.resize(n * t.third_size());
    t.wrist.resize(n * t.wrist_size());
    t.proprio.resize(n * kProprioDim);
    t.trace.resize(n * kTraceDim);
    t.action.resize(n * kActionDim);
    if (payload_floats(t) * sizeof(float) != payload_bytes) {
      throw ShapeError(where + ": payload size disagrees with the declared shapes");
    }
    for (auto* col : {&t.third, &t.wrist, &t.proprio, &t.trace, &t.action}) {
      if (!num::read_f32_le(in, *col)) throw TruncatedError(where + ": payload cut short");
    }
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw ShapeError(where + ": " + e.what());
    }
    out.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw EpisodeFormatError("trailing data after " + std::to_string(count) + " episodes in " + path.string());
  }
  return out;
}

}  // namespace icil::data
