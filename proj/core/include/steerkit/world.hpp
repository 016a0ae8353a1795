#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

enum class TokenKind {
  Special,      // <pad> <bos> <eos> <sep> ? yes no is feels describe story ask image
  Hedge,        // maybe possibly appearing
  Uncertainty,  // faint distant blurry
  Neutral,      // caption connectors with no sentiment
  Object,       // content words, one per image feature coordinate
  Topic,
  Pole,         // sentiment word closing a prompt ("... feels fulfilling")
  Style,        // words that carry a pole's sentiment into a caption
};

// Two mutually exclusive sentiments. `near_antonym` marks pairs that are
// exclusive in context without being dictionary opposites.
struct SentimentAxis {
  std::string name;
  int pole_a = 0;
  int pole_b = 0;
  bool near_antonym = false;
  bool reserved = false;  // kept out of prompt-pair generation (faithfulness axis)
};

// Closed synthetic vocabulary and the relations between its words: which
// objects co-occur, which objects a topic relates to, and which style words
// express each pole.
class SyntheticWorld {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kSep = 3, kQuestion = 4, kYes = 5, kNo = 6,
                       kIs = 7, kFeels = 8, kDescribe = 9, kStory = 10, kAsk = 11, kImage = 12;

  // The default world; `seed` only affects the topic -> object relation.
  static SyntheticWorld standard(std::uint64_t seed = 7);

  int vocab_size() const { return 512; }
  std::size_t used_tokens() const { return words_.size(); }
  const std::string& word(int id) const;
  std::optional<int> find(std::string_view w) const;
  TokenKind kind(int id) const;

  // Whitespace-separated words; throws ContractViolation on unknown words.
  std::vector<int> tokenize(std::string_view text) const;
  std::string render(std::span<const int> tokens) const;

  const std::vector<int>& objects() const { return objects_; }
  const std::vector<int>& topics() const { return topics_; }
  const std::vector<int>& neutral() const { return neutral_; }
  const std::vector<int>& hedges() const { return hedges_; }
  const std::vector<int>& uncertainty() const { return uncertainty_; }
  const std::vector<SentimentAxis>& axes() const { return axes_; }
  const std::vector<std::vector<int>>& scenes() const { return scenes_; }
  // Sampling weight of each object inside its scene.
  const std::vector<double>& scene_weights() const { return scene_weights_; }

  std::size_t faithfulness_axis() const { return faithfulness_axis_; }
  const std::vector<int>& style_lexicon(int pole) const;
  std::optional<int> pole_of_style(int token) const;
  // Objects a topic relates to (the topic's content lexicon).
  const std::vector<int>& topic_objects(int topic) const;
  // Feature coordinate <-> object token.
  int object_for_feature(std::size_t coord) const { return objects_.at(coord); }
  std::size_t feature_of_object(int object) const;
  bool is_object(int id) const { return kind(id) == TokenKind::Object; }
  // Scenes that contain `object`.
  std::vector<std::size_t> scenes_of(int object) const;

  // Objects ranked by the image's mean feature value, top `k` first.
  std::vector<int> salient_objects(const Tensor& image, std::size_t k = 3) const;

 private:
  int add_word(std::string w, TokenKind kind);

  std::vector<std::string> words_;
  std::vector<TokenKind> kinds_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> objects_, topics_, neutral_, hedges_, uncertainty_;
  std::vector<SentimentAxis> axes_;
  std::unordered_map<int, std::vector<int>> style_;
  std::unordered_map<int, int> style_owner_;
  std::unordered_map<int, std::vector<int>> topic_objects_;
  std::vector<std::vector<int>> scenes_;
  std::vector<double> scene_weights_;
  std::size_t faithfulness_axis_ = 0;
};

}  // namespace steerkit
