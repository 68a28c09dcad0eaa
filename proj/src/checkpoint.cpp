#include "jhgrf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace jhgrf {

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("truncated array payload");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(std::string("missing ") + what);
  return line;
}

std::size_t count_after(const std::string& line, const std::string& tag) {
  std::istringstream ss(line);
  std::string word;
  std::size_t count = 0;
  if (!(ss >> word >> count) || word != tag) {
    throw CheckpointError("expected '" + tag + " <count>', got '" + line + "'");
  }
  return count;
}

}  // namespace

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n';
  out << "config " << checkpoint.config.size() << '\n';
  for (const auto& [k, v] : checkpoint.config) out << k << " = " << v << '\n';
  out << "arrays " << checkpoint.arrays.size() << '\n';
  for (const auto& a : checkpoint.arrays) {
    if (a.name.find_first_of(" \n") != std::string::npos) {
      throw CheckpointError("array name may not contain whitespace: " + a.name);
    }
    out << a.name << ' ' << a.shape.size();
    for (std::size_t e : a.shape) out << ' ' << e;
    out << '\n';
    for (double v : a.values) put_le(out, v);
    out << '\n';
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  if (next_line(in, "header") != kCheckpointMagic) {
    throw CheckpointError(path.string() + " is not a jhgrf-ckpt v1 file");
  }
  Checkpoint ck;
  const std::size_t n_config = count_after(next_line(in, "config count"), "config");
  for (std::size_t k = 0; k < n_config; ++k) {
    const std::string line = next_line(in, "config entry");
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointError("malformed config line '" + line + "'");
    ck.config.emplace(line.substr(0, eq), line.substr(eq + 3));
  }
  const std::size_t n_arrays = count_after(next_line(in, "array count"), "arrays");
  for (std::size_t k = 0; k < n_arrays; ++k) {
    std::istringstream head(next_line(in, "array header"));
    NamedArray a;
    std::size_t rank = 0;
    if (!(head >> a.name >> rank)) throw CheckpointError("malformed array header");
    a.shape.resize(rank);
    for (auto& e : a.shape) {
      if (!(head >> e)) throw CheckpointError("malformed shape for " + a.name);
    }
    a.values.resize(shape_size(a.shape));
    for (double& v : a.values) v = get_le(in);
    if (in.get() != '\n') throw CheckpointError("corrupt payload terminator for " + a.name);
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

Checkpoint make_checkpoint(const ModelConfig& config, const ParameterSet& params) {
  Checkpoint ck;
  ck.config = config.to_key_values();
  for (const auto& e : params.entries()) {
    ck.arrays.push_back({e.name, e.tensor.shape(), e.tensor.to_vector()});
  }
  return ck;
}

ModelConfig checkpoint_model_config(const Checkpoint& checkpoint) {
  ModelConfig config;
  for (const auto& [k, v] : checkpoint.config) {
    if (k.rfind("model.", 0) == 0) config.apply(k, v);
  }
  return config;
}

void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params) {
  for (const auto& e : params.entries()) {
    const NamedArray* a = checkpoint.find(e.name);
    if (a == nullptr) throw CheckpointMismatch("checkpoint lacks parameter " + e.name);
    if (a->shape != e.tensor.shape()) {
      throw CheckpointMismatch("parameter " + e.name + " has shape " + shape_string(a->shape) +
                               " in checkpoint but " + shape_string(e.tensor.shape()) +
                               " in the model");
    }
  }
  for (const auto& e : params.entries()) {
    const NamedArray* a = checkpoint.find(e.name);
    Tensor t = e.tensor;
    std::copy(a->values.begin(), a->values.end(), t.mutable_values().begin());
  }
}

}  // namespace jhgrf
