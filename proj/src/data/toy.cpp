#include <random>

#include "dcebad/data.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::data {

namespace {

struct ClassSpec {
  const char* name;
  const char* markers;  // UTF-8, one character per marker
};

// Ten headline categories, each with distinctive characters.
constexpr ClassSpec kClasses[] = {
    {"finance", "银利税贷"},   {"realty", "楼房租宅"},    {"stocks", "股涨跌盘"},
    {"education", "校考学课"}, {"science", "科技芯网"},   {"society", "警案社民"},
    {"politics", "政府议部"},  {"sports", "球赛冠跑"},    {"games", "游戏玩关"},
    {"entertainment", "星影歌剧"}};

constexpr const char* kNoise = "的了在是有和这中大为上个不以会们到说时要就出也得年天新后";

std::vector<std::string> chars_of(const char* utf8) {
  const auto cps = decode_utf8(utf8);
  std::vector<std::string> out;
  for (char32_t cp : *cps) out.push_back(encode_utf8(cp));
  return out;
}

}  // namespace

MarkerCorpus generate_marker_corpus(const MarkerCorpusOptions& options) {
  constexpr std::size_t kMaxClasses = std::size(kClasses);
  if (options.classes == 0 || options.classes > kMaxClasses) {
    throw ContractError("marker corpus supports 1.." + std::to_string(kMaxClasses) + " classes");
  }
  if (options.markers_per_class == 0 || options.markers_per_class > 4) {
    throw ContractError("marker corpus supports 1..4 markers per class");
  }
  if (options.min_len == 0 || options.min_len > options.max_len) {
    throw ContractError("marker corpus needs 1 <= min_len <= max_len");
  }

  std::vector<std::vector<std::string>> markers;
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < options.classes; ++k) {
    auto m = chars_of(kClasses[k].markers);
    m.resize(options.markers_per_class);
    markers.push_back(std::move(m));
    labels.emplace_back(kClasses[k].name);
  }
  const auto noise = chars_of(kNoise);

  std::mt19937_64 rng(options.seed);
  auto draw = [&](std::size_t per_class) {
    Corpus corpus;
    corpus.labels = labels;
    std::uniform_int_distribution<std::size_t> len_dist(options.min_len, options.max_len);
    std::uniform_int_distribution<std::size_t> noise_dist(0, noise.size() - 1);
    std::uniform_int_distribution<std::size_t> marker_dist(0, options.markers_per_class - 1);
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t k = 0; k < options.classes; ++k) {
        const std::size_t len = len_dist(rng);
        std::vector<std::string> chars(len);
        for (auto& c : chars) c = noise[noise_dist(rng)];
        const std::size_t hits =
            std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(3, len))(rng);
        std::uniform_int_distribution<std::size_t> pos_dist(0, len - 1);
        for (std::size_t h = 0; h < hits; ++h) chars[pos_dist(rng)] = markers[k][marker_dist(rng)];
        std::string text;
        for (const auto& c : chars) text += c;
        corpus.examples.push_back({std::move(text), k});
      }
    }
    return corpus;
  };

  MarkerCorpus out;
  out.train = draw(options.train_per_class);
  out.val = draw(options.val_per_class);
  out.test = draw(options.test_per_class);
  return out;
}

}  // namespace dcebad::data
