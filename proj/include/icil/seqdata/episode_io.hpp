#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "icil/seqdata/trajectory.hpp"

namespace icil::data {

inline constexpr const char* kEpisodeMagic = "ICIL-EPISODES";
inline constexpr int kEpisodeFormatVersion = 1;

class EpisodeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};
class TruncatedError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};
class ShapeError : public EpisodeFormatError {
 public:
  using EpisodeFormatError::EpisodeFormatError;
};

/// Layout is documented in docs/formats.md.
void save_episodes(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> load_episodes(const std::filesystem::path& path);

}  // namespace icil::data
