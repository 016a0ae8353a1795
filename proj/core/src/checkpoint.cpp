#include "steerkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace steerkit {

namespace {

void put_le64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xff));
    bits >>= 8;
  }
}

double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto x = s.find('x', pos);
    const auto tok = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (tok.empty()) throw IoError("checkpoint: malformed shape '" + s + "'");
    shape.push_back(std::stoul(tok));
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return shape;
}

}  // namespace

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("checkpoint: no tensor named '" + std::string(name) + "'");
}

std::optional<std::string> Checkpoint::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) return std::nullopt;
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream header;
  header << kCheckpointMagic << '\n';
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of("=\n ") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractViolation("checkpoint: meta key/value may not contain separators: " + k);
    header << "meta " << k << '=' << v << '\n';
  }
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.empty() || name.find_first_of(" \n") != std::string::npos)
      throw ContractViolation("checkpoint: invalid tensor name '" + name + "'");
    std::string dims;
    for (std::size_t i = 0; i < t.rank(); ++i)
      dims += (i ? "x" : "") + std::to_string(t.shape()[i]);
    header << "tensor " << name << ' ' << dims << ' ' << offset << '\n';
    offset += t.numel() * 8;
  }
  header << "end\n";
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ckpt.tensors)
    for (double v : t.data()) put_le64(out, v);
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Checkpoint ckpt;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw IoError("checkpoint: truncated header");
    std::string line(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    return line;
  };
  if (next_line() != kCheckpointMagic) throw IoError("checkpoint: unknown format version");
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("meta ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("checkpoint: malformed meta line");
      ckpt.meta[line.substr(5, eq - 5)] = line.substr(eq + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream is(line.substr(7));
      Entry e;
      std::string dims;
      if (!(is >> e.name >> dims >> e.offset)) throw IoError("checkpoint: malformed tensor line");
      e.shape = parse_shape(dims);
      entries.push_back(std::move(e));
    } else {
      throw IoError("checkpoint: unexpected header line '" + line + "'");
    }
  }
  const std::string_view payload = bytes.substr(pos);
  for (const auto& e : entries) {
    std::size_t n = 1;
    for (auto d : e.shape) n *= d;
    if (e.offset + n * 8 > payload.size()) throw IoError("checkpoint: truncated data for " + e.name);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le64(payload.data() + e.offset + i * 8);
    ckpt.tensors.emplace_back(e.name, Tensor::from(e.shape, std::move(data)));
  }
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace steerkit
