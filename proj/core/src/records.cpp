#include "steerkit/records.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "steerkit/checkpoint.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

using nlohmann::json;

std::string dataset_to_jsonl(const std::vector<DatasetRecord>& records, const std::string& header) {
  std::string out;
  if (!header.empty()) {
    json h;
    try {
      h["config"] = json::parse(header);
    } catch (const json::exception& e) {
      throw ContractViolation(std::string("dataset header is not JSON: ") + e.what());
    }
    out += h.dump();
    out += '\n';
  }
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["split"] = to_string(r.split);
    const auto d = r.image_features.data();
    j["image_features"] = std::vector<double>(d.begin(), d.end());
    j["target_prompt"] = r.pair.target_text;
    j["converse_prompt"] = r.pair.converse_text;
    j["task_prompt"] = to_string(r.task);
    j["steered_tokens"] = r.steered_response;
    j["unsteered_tokens"] = r.unsteered_response;
    j["topic"] = r.pair.topic;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<DatasetRecord> dataset_from_jsonl(const std::string& text, std::size_t image_rows,
                                              std::size_t image_cols) {
  std::vector<DatasetRecord> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("config") && !j.contains("id")) continue;
      DatasetRecord r;
      r.id = j.at("id").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.image_features =
          Tensor::from({image_rows, image_cols}, j.at("image_features").get<std::vector<double>>());
      r.pair.target_text = j.at("target_prompt").get<std::string>();
      r.pair.converse_text = j.at("converse_prompt").get<std::string>();
      r.pair.topic = j.at("topic").get<std::string>();
      r.task = parse_task(j.at("task_prompt").get<std::string>());
      r.steered_response = j.at("steered_tokens").get<std::vector<int>>();
      r.unsteered_response = j.at("unsteered_tokens").get<std::vector<int>>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records,
                  const std::string& header) {
  write_file(path, dataset_to_jsonl(records, header));
}

std::string dataset_header(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::string first = text.substr(0, text.find('\n'));
  try {
    const json j = json::parse(first);
    if (j.contains("config") && !j.contains("id")) return j.at("config").dump();
  } catch (const json::exception&) {
  }
  return "";
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, std::size_t image_rows,
                                        std::size_t image_cols) {
  return dataset_from_jsonl(read_file(path), image_rows, image_cols);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a64(read_file(path))); }

void write_hash_file(const std::filesystem::path& path) {
  auto p = path;
  p += ".fnv1a";
  write_file(p, file_hash(path) + "  " + path.filename().string() + "\n");
}

bool verify_hash_file(const std::filesystem::path& path) {
  auto p = path;
  p += ".fnv1a";
  const std::string stored = read_file(p);
  return stored.substr(0, 16) == file_hash(path);
}

}  // namespace steerkit
