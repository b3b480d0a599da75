#include "danp/toydiff/prompt.hpp"

#include <sstream>

#include "danp/error.hpp"

namespace danp::toydiff {

std::string_view token_text(int id) {
  switch (id) {
    case kPadToken: return "<pad>";
    case kBosToken: return "<bos>";
    case kOnToken: return "on";
    case kBackgroundToken: return "background";
    default: break;
  }
  if (id >= kFirstColorToken && id < kFirstColorToken + static_cast<int>(kPalette.size())) {
    return kPalette[static_cast<std::size_t>(id - kFirstColorToken)].name;
  }
  if (id >= kFirstShapeToken && id < kFirstShapeToken + static_cast<int>(kShapeNames.size())) {
    return kShapeNames[static_cast<std::size_t>(id - kFirstShapeToken)];
  }
  return "<unused>";
}

std::size_t Prompt::content_count() const {
  std::size_t n = 0;
  for (bool b : content_mask) n += b ? 1 : 0;
  return n;
}

std::string Prompt::text() const {
  std::string out;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (!content_mask[i]) continue;
    if (!out.empty()) out += ' ';
    out += token_text(token_ids[i]);
  }
  return out;
}

Prompt from_token_ids(const std::vector<int>& words) {
  if (words.size() > kMaxTokens - 1) throw ConfigError("prompt longer than " + std::to_string(kMaxTokens - 1) + " words");
  Prompt p;
  p.token_ids.assign(kMaxTokens, kPadToken);
  p.content_mask.assign(kMaxTokens, false);
  p.token_ids[0] = kBosToken;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const int id = words[i];
    if (id < 0 || id >= static_cast<int>(kVocabSize) || id == kPadToken || id == kBosToken) {
      throw ConfigError("invalid content token id " + std::to_string(id));
    }
    p.token_ids[i + 1] = id;
    p.content_mask[i + 1] = true;
  }
  return p;
}

Prompt tokenize(std::string_view text) {
  std::vector<int> ids;
  std::istringstream is{std::string(text)};
  std::string word;
  while (is >> word) {
    int found = -1;
    for (int id = kOnToken; id < kFirstShapeToken + static_cast<int>(kShapeNames.size()); ++id) {
      if (token_text(id) == word) {
        found = id;
        break;
      }
    }
    if (found < 0) throw ConfigError("unknown prompt word '" + word + "'");
    ids.push_back(found);
  }
  return from_token_ids(ids);
}

Prompt make_caption(std::size_t shape_color, ShapeKind shape, std::size_t background_color) {
  if (shape_color >= kPalette.size() || background_color >= kPalette.size()) throw ContractError("color out of range");
  return from_token_ids({kFirstColorToken + static_cast<int>(shape_color),
                         kFirstShapeToken + static_cast<int>(shape), kOnToken,
                         kFirstColorToken + static_cast<int>(background_color), kBackgroundToken});
}

Prompt empty_prompt() { return from_token_ids({}); }

}  // namespace danp::toydiff
