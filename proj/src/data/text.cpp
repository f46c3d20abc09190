#include <algorithm>

#include "dcebad/data.hpp"
#include "dcebad/errors.hpp"

namespace dcebad::data {

std::optional<std::u32string> decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, cp = b0 & 0x07, min = 0x10000;
    } else {
      return std::nullopt;
    }
    if (i + len > text.size()) return std::nullopt;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) return std::nullopt;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

bool is_unicode_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
         cp == 0x205F || cp == 0x3000;
}

std::vector<std::string> tokenize(std::string_view text) {
  const auto cps = decode_utf8(text);
  if (!cps) throw IngestError("invalid UTF-8 in text");
  std::vector<std::string> tokens;
  tokens.reserve(cps->size() + 2);
  tokens.emplace_back(kClsToken);
  for (char32_t cp : *cps) {
    if (!is_unicode_space(cp)) tokens.push_back(encode_utf8(cp));
  }
  tokens.emplace_back(kSepToken);
  return tokens;
}

// ---------------------------------------------------------------------------

Vocab::Vocab()
    : Vocab(from_tokens({std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                         std::string(kSepToken)})) {}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const std::array<std::string_view, kNumReserved> reserved = {kPadToken, kUnkToken, kClsToken,
                                                               kSepToken};
  if (tokens.size() < kNumReserved ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw ConfigError("vocabulary must start with [PAD], [UNK], [CLS], [SEP]");
  }
  Vocab v{Empty{}};
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) {
      throw ConfigError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

Vocab Vocab::build(const std::vector<Example>& examples, std::size_t min_freq) {
  if (examples.empty()) throw ContractError("build_vocab: empty corpus");
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Entry> stats;
  std::vector<std::string> order;
  for (const auto& ex : examples) {
    const auto tokens = tokenize(ex.text);
    for (std::size_t i = 1; i + 1 < tokens.size(); ++i) {
      auto [it, inserted] = stats.try_emplace(tokens[i], Entry{0, order.size()});
      if (inserted) order.push_back(tokens[i]);
      ++it->second.count;
    }
  }
  std::vector<std::string> kept;
  for (const auto& tok : order)
    if (stats[tok].count >= min_freq) kept.push_back(tok);
  std::stable_sort(kept.begin(), kept.end(), [&](const std::string& a, const std::string& b) {
    const Entry& ea = stats[a];
    const Entry& eb = stats[b];
    if (ea.count != eb.count) return ea.count > eb.count;
    return ea.first < eb.first;
  });
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken),
                                     std::string(kClsToken), std::string(kSepToken)};
  tokens.insert(tokens.end(), kept.begin(), kept.end());
  return from_tokens(std::move(tokens));
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

std::string Vocab::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (id >= kNumReserved) out += tokens_.at(id);
  }
  return out;
}

EncodedRow encode(std::string_view text, const Vocab& vocab, std::size_t text_size) {
  if (text_size < 3) throw ContractError("encode: text_size must be at least 3");
  auto tokens = tokenize(text);
  if (tokens.size() > text_size) {
    tokens.resize(text_size);
    tokens.back() = std::string(kSepToken);
  }
  EncodedRow row;
  row.ids.assign(text_size, kPadId);
  row.mask.assign(text_size, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    row.ids[i] = vocab.id(tokens[i]);
    row.mask[i] = 1;
  }
  return row;
}

}  // namespace dcebad::data
