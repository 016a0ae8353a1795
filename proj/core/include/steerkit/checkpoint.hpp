#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

inline constexpr std::string_view kCheckpointMagic = "steerkit-ckpt-v1";

// File layout:
//
//   steerkit-ckpt-v1
//   meta <key>=<value>                 (zero or more)
//   tensor <name> <d0>x<d1>... <offset> (byte offset into the data section)
//   end
//   <little-endian float64 buffers, concatenated in tensor order>
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t); }
  const Tensor& get(std::string_view name) const;
  std::optional<std::string> meta_value(const std::string& key) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace steerkit
