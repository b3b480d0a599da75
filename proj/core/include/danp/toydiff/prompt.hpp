#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace danp::toydiff {

inline constexpr std::size_t kVocabSize = 64;
/// Sequence length including the leading BOS token.
inline constexpr std::size_t kMaxTokens = 8;

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kOnToken = 2;
inline constexpr int kBackgroundToken = 3;
inline constexpr int kFirstColorToken = 4;
inline constexpr int kFirstShapeToken = 12;

struct Color {
  std::string_view name;
  std::array<float, 3> rgb;
};

inline constexpr std::array<Color, 8> kPalette = {{
    {"red", {1.0f, 0.0f, 0.0f}},
    {"green", {0.0f, 1.0f, 0.0f}},
    {"blue", {0.0f, 0.0f, 1.0f}},
    {"yellow", {1.0f, 1.0f, 0.0f}},
    {"cyan", {0.0f, 1.0f, 1.0f}},
    {"magenta", {1.0f, 0.0f, 1.0f}},
    {"white", {1.0f, 1.0f, 1.0f}},
    {"black", {0.0f, 0.0f, 0.0f}},
}};

enum class ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr std::array<std::string_view, 3> kShapeNames = {"circle", "square", "triangle"};

/// Tokenized caption: BOS, words, then PAD up to kMaxTokens. BOS and PAD
/// are flagged false in `content_mask`.
struct Prompt {
  std::vector<int> token_ids;
  std::vector<bool> content_mask;

  std::size_t content_count() const;
  std::string text() const;
  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// Whitespace-separated words from the toy vocabulary. Throws ConfigError
/// on unknown words or more than kMaxTokens - 1 words.
Prompt tokenize(std::string_view text);
Prompt from_token_ids(const std::vector<int>& words);
/// "<color> <shape> on <color> background"
Prompt make_caption(std::size_t shape_color, ShapeKind shape, std::size_t background_color);
/// Only BOS and padding; used where no caption applies.
Prompt empty_prompt();

std::string_view token_text(int id);

}  // namespace danp::toydiff
