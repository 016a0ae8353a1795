#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "steerkit/forge.hpp"

namespace steerkit {

// One JSON object per line with fields id, split, image_features (flat),
// target_prompt, converse_prompt, task_prompt, steered_tokens,
// unsteered_tokens, topic. A non-empty `header` (a JSON object) is written
// first as {"config": header}; readers skip it.
std::string dataset_to_jsonl(const std::vector<DatasetRecord>& records,
                             const std::string& header = "");
std::vector<DatasetRecord> dataset_from_jsonl(const std::string& text, std::size_t image_rows,
                                              std::size_t image_cols);

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                  const std::string& header = "");
// The header's config object, or an empty string.
std::string dataset_header(const std::filesystem::path& path);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path,
                                        std::size_t image_rows = 4, std::size_t image_cols = 16);

// Hex FNV-1a of a file's bytes, written next to it as <name>.fnv1a.
std::string hex64(std::uint64_t v);
std::string file_hash(const std::filesystem::path& path);
void write_hash_file(const std::filesystem::path& path);
bool verify_hash_file(const std::filesystem::path& path);

}  // namespace steerkit
