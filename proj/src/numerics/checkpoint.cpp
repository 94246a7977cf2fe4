#include "icil/numerics/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "icil/numerics/binary_io.hpp"

namespace icil::num {

namespace {

constexpr const char* kMagic = "ICIL-CHECKPOINT";

bool has_space(const std::string& s) { return s.find_first_of(" \t\r\n") != std::string::npos; }

std::string read_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path.string() + ": truncated checkpoint");
  return line;
}

std::size_t parse_count(const std::string& line, const std::string& keyword, const std::filesystem::path& path) {
  std::istringstream ls(line);
  std::string word;
  long long count = -1;
  if (!(ls >> word >> count) || word != keyword || count < 0) {
    throw CheckpointError(path.string() + ": expected '" + keyword + " <count>', got '" + line + "'");
  }
  return static_cast<std::size_t>(count);
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << kMagic << ' ' << Checkpoint::kFormatVersion << '\n';
  out << "header " << checkpoint.header.size() << '\n';
  for (const auto& [key, value] : checkpoint.header) {
    if (key.empty() || has_space(key) || value.find('\n') != std::string::npos) {
      throw CheckpointError("invalid checkpoint header entry '" + key + "'");
    }
    out << key << ' ' << value << '\n';
  }
  out << "tensors " << checkpoint.tensors.size() << '\n';
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.empty() || has_space(name)) throw CheckpointError("invalid tensor name '" + name + "'");
    out << name << ' ' << tensor.rank();
    for (int d : tensor.shape()) out << ' ' << d;
    out << '\n';
    write_f32_le(out, tensor.data());
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  {
    std::istringstream ls(read_line(in, path));
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != kMagic) throw CheckpointError(path.string() + ": not a checkpoint file");
    if (version != Checkpoint::kFormatVersion) {
      throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
  }
  const std::size_t n_header = parse_count(read_line(in, path), "header", path);
  for (std::size_t i = 0; i < n_header; ++i) {
    const std::string line = read_line(in, path);
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw CheckpointError(path.string() + ": malformed header line '" + line + "'");
    ckpt.header[line.substr(0, sp)] = line.substr(sp + 1);
  }
  const std::size_t n_tensors = parse_count(read_line(in, path), "tensors", path);
  for (std::size_t i = 0; i < n_tensors; ++i) {
    std::istringstream ls(read_line(in, path));
    std::string name;
    int rank = -1;
    if (!(ls >> name >> rank) || rank < 0 || rank > 8) throw CheckpointError(path.string() + ": malformed tensor record");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) {
      if (!(ls >> d) || d < 0) throw CheckpointError(path.string() + ": malformed shape for tensor " + name);
    }
    std::vector<float> values(shape_numel(shape));
    if (!read_f32_le(in, values)) throw CheckpointError(path.string() + ": truncated data for tensor " + name);
    ckpt.tensors.emplace_back(name, Tensor::from(std::move(shape), std::move(values)));
  }
  return ckpt;
}

}  // namespace icil::num
