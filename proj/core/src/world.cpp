#include "steerkit/world.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "steerkit/rng.hpp"

namespace steerkit {

namespace {

struct AxisSpec {
  const char* name;
  const char* pole_a;
  const char* pole_b;
  bool near_antonym;
  bool reserved;
  const char* style_a[3];
  const char* style_b[3];
};

constexpr const char* kObjects[] = {"dog",   "cat",   "tree",  "car",   "house", "boat",
                                    "bird",  "flower", "bench", "lamp",  "river", "cloud",
                                    "chair", "kite",  "horse", "mountain"};

constexpr const char* kTopics[] = {
    "cooking",  "running",  "reading",   "gardening", "painting", "swimming",    "hiking",
    "singing",  "dancing",  "writing",   "camping",   "fishing",  "cycling",     "baking",
    "knitting", "sailing",  "traveling", "studying",  "shopping", "cleaning",    "volunteering",
    "skating",  "climbing", "drawing",   "farming",   "rowing",   "jogging",     "surfing",
    "skiing",   "chess",    "music",     "poetry",    "astronomy", "photography", "theater",
    "yoga",     "pottery",  "birdwatching", "kayaking", "weddings"};

constexpr AxisSpec kAxes[] = {
    {"excitement", "exciting", "overwhelming", true, false,
     {"thrilling", "vivid", "electric"}, {"crowded", "heavy", "relentless"}},
    {"purpose", "fulfilling", "obligatory", true, false,
     {"rewarding", "meaningful", "warm"}, {"dutiful", "routine", "required"}},
    {"mood", "joyful", "gloomy", false, false,
     {"cheerful", "bright", "laughing"}, {"dreary", "gray", "somber"}},
    {"effort", "easy", "difficult", false, false,
     {"effortless", "smooth", "simple"}, {"strenuous", "steep", "grueling"}},
    {"tension", "calm", "tense", false, false,
     {"serene", "quiet", "gentle"}, {"uneasy", "tight", "edgy"}},
    {"engagement", "inspiring", "tedious", true, false,
     {"uplifting", "soaring", "hopeful"}, {"dull", "monotonous", "slow"}},
    {"faithfulness", "grounded", "imaginative", false, true,
     {"plainly", "visibly", "exactly"}, {"dreamlike", "fabled", "magical"}},
};

}  // namespace

int SyntheticWorld::add_word(std::string w, TokenKind kind) {
  const int id = static_cast<int>(words_.size());
  if (!index_.emplace(w, id).second) throw ConfigError("duplicate word in lexicon: " + w);
  words_.push_back(std::move(w));
  kinds_.push_back(kind);
  return id;
}

SyntheticWorld SyntheticWorld::standard(std::uint64_t seed) {
  SyntheticWorld w;
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<sep>", "?", "yes", "no", "is", "feels",
                        "describe", "story", "ask", "image"})
    w.add_word(s, TokenKind::Special);
  for (const char* s : {"maybe", "possibly", "appearing"})
    w.hedges_.push_back(w.add_word(s, TokenKind::Hedge));
  for (const char* s : {"faint", "distant", "blurry"})
    w.uncertainty_.push_back(w.add_word(s, TokenKind::Uncertainty));
  for (const char* s : {"and", "with", "near", "beside", "then", "also", "by"})
    w.neutral_.push_back(w.add_word(s, TokenKind::Neutral));
  for (const char* s : kObjects) w.objects_.push_back(w.add_word(s, TokenKind::Object));
  for (const char* s : kTopics) w.topics_.push_back(w.add_word(s, TokenKind::Topic));
  for (const auto& a : kAxes) {
    SentimentAxis axis{a.name, w.add_word(a.pole_a, TokenKind::Pole),
                       w.add_word(a.pole_b, TokenKind::Pole), a.near_antonym, a.reserved};
    if (a.reserved) w.faithfulness_axis_ = w.axes_.size();
    w.axes_.push_back(axis);
  }
  for (std::size_t i = 0; i < w.axes_.size(); ++i) {
    for (int side = 0; side < 2; ++side) {
      const int pole = side == 0 ? w.axes_[i].pole_a : w.axes_[i].pole_b;
      const auto& styles = side == 0 ? kAxes[i].style_a : kAxes[i].style_b;
      for (const char* s : styles) {
        const int id = w.add_word(s, TokenKind::Style);
        w.style_[pole].push_back(id);
        w.style_owner_[id] = pole;
      }
    }
  }

  // Four overlapping scenes of six objects each: scene k holds objects
  // 4k .. 4k+5 (mod 16), so every object co-occurs with a fixed neighbourhood.
  const std::size_t n_obj = w.objects_.size();
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<int> scene;
    for (std::size_t i = 0; i < 6; ++i) scene.push_back(w.objects_[(4 * k + i) % n_obj]);
    w.scenes_.push_back(std::move(scene));
  }
  w.scene_weights_ = {3.0, 3.0, 2.0, 2.0, 1.0, 1.0};

  Rng rng(Rng::derive_seed(seed, "world.topics"));
  for (int topic : w.topics_) {
    std::vector<std::size_t> idx(n_obj);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < 3; ++i) std::swap(idx[i], idx[i + rng.index(n_obj - i)]);
    std::vector<int> rel;
    for (std::size_t i = 0; i < 3; ++i) rel.push_back(w.objects_[idx[i]]);
    std::sort(rel.begin(), rel.end());
    w.topic_objects_[topic] = std::move(rel);
  }
  return w;
}

const std::string& SyntheticWorld::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    static const std::string unk = "<unk>";
    return unk;
  }
  return words_[static_cast<std::size_t>(id)];
}

std::optional<int> SyntheticWorld::find(std::string_view w) const {
  auto it = index_.find(std::string(w));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenKind SyntheticWorld::kind(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= kinds_.size()) return TokenKind::Special;
  return kinds_[static_cast<std::size_t>(id)];
}

std::vector<int> SyntheticWorld::tokenize(std::string_view text) const {
  std::vector<int> out;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) {
    auto id = find(w);
    if (!id) throw ContractViolation("unknown word '" + w + "'");
    out.push_back(*id);
  }
  return out;
}

std::string SyntheticWorld::render(std::span<const int> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += word(tokens[i]);
  }
  return out;
}

const std::vector<int>& SyntheticWorld::style_lexicon(int pole) const {
  auto it = style_.find(pole);
  if (it == style_.end()) throw ContractViolation("not a pole token: " + word(pole));
  return it->second;
}

std::optional<int> SyntheticWorld::pole_of_style(int token) const {
  auto it = style_owner_.find(token);
  if (it == style_owner_.end()) return std::nullopt;
  return it->second;
}

const std::vector<int>& SyntheticWorld::topic_objects(int topic) const {
  auto it = topic_objects_.find(topic);
  if (it == topic_objects_.end()) throw ContractViolation("not a topic token: " + word(topic));
  return it->second;
}

std::size_t SyntheticWorld::feature_of_object(int object) const {
  auto it = std::find(objects_.begin(), objects_.end(), object);
  if (it == objects_.end()) throw ContractViolation("not an object token: " + word(object));
  return static_cast<std::size_t>(it - objects_.begin());
}

std::vector<std::size_t> SyntheticWorld::scenes_of(int object) const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < scenes_.size(); ++s)
    if (std::find(scenes_[s].begin(), scenes_[s].end(), object) != scenes_[s].end())
      out.push_back(s);
  return out;
}

std::vector<int> SyntheticWorld::salient_objects(const Tensor& image, std::size_t k) const {
  const std::size_t f = image.cols();
  if (f != objects_.size()) throw DimensionError("image feature width must equal object count");
  std::vector<double> summary(f, 0.0);
  for (std::size_t r = 0; r < image.rows(); ++r)
    for (std::size_t c = 0; c < f; ++c) summary[c] += image.at(r, c);
  std::vector<std::size_t> order(f);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return summary[a] > summary[b]; });
  std::vector<int> out;
  for (std::size_t i = 0; i < std::min(k, f); ++i) out.push_back(objects_[order[i]]);
  return out;
}

}  // namespace steerkit
