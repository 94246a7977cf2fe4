#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icil/numerics/tensor.hpp"

namespace icil::num {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint container (see docs/formats.md):
///
///   ICIL-CHECKPOINT <version>\n
///   header <n>\n
///   <key> <value...>\n           (n lines)
///   tensors <m>\n
///   <name> <rank> <d0> ... \n    followed by prod(d) little-endian float32
///
/// Keys and tensor names contain no whitespace; values run to end of line.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace icil::num
