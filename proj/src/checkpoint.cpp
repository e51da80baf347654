// SPDX-License-Identifier: Apache-2.0

#include "dcomp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace dcomp {

namespace {

constexpr const char* kMagic = "DCOMP-CHECKPOINT 1";

void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void corrupt(const std::string& what) { throw std::runtime_error("checkpoint: " + what); }

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = kMagic;
  out += "\nmeta " + ckpt.meta.dump() + "\n";
  for (const auto& p : ckpt.params) {
    if (p.name.empty() || p.name.find_first_of(" \n\t") != std::string::npos) {
      throw std::invalid_argument("checkpoint: invalid tensor name '" + p.name + "'");
    }
    out += "tensor " + p.name + " f64 " + std::to_string(p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) out += " " + std::to_string(d);
    out += "\n";
  }
  out += "end\n";
  for (const auto& p : ckpt.params) {
    for (double v : p.tensor.data()) append_le(out, v);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) corrupt("truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) corrupt("bad magic");
  Checkpoint ckpt;
  std::string meta = next_line();
  if (meta.rfind("meta ", 0) != 0) corrupt("missing meta line");
  ckpt.meta = nlohmann::json::parse(meta.substr(5));
  std::vector<std::pair<std::string, Shape>> entries;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream is(line);
    std::string tag, name, dtype;
    std::size_t rank = 0;
    if (!(is >> tag >> name >> dtype >> rank) || tag != "tensor") corrupt("bad tensor entry '" + line + "'");
    if (dtype != "f64") corrupt("unsupported dtype '" + dtype + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(is >> d)) corrupt("bad shape in '" + line + "'");
    }
    entries.emplace_back(name, shape);
  }
  for (auto& [name, shape] : entries) {
    const std::size_t n = shape_numel(shape);
    if (bytes.size() < pos + 8 * n) corrupt("truncated data for " + name);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le(bytes.data() + pos + 8 * i);
    pos += 8 * n;
    ckpt.params.push_back({name, Tensor::from(shape, std::move(values))});
  }
  if (pos != bytes.size()) corrupt("trailing bytes after data");
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

void load_params(ParamList& target, const ParamList& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  for (auto& p : target) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (it->second->shape() != p.tensor.shape()) {
      throw std::runtime_error("parameter " + p.name + " has shape " + shape_str(it->second->shape()) +
                               " in checkpoint, expected " + shape_str(p.tensor.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
}

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace dcomp
