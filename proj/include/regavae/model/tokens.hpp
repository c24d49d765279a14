#pragma once

#include <vector>

namespace regavae {

using TokenSequence = std::vector<int>;

// A source text x and its target continuation y, both nonempty.
struct CorpusPair {
  TokenSequence source;
  TokenSequence target;
};

// Reserved vocabulary ids shared by the tokenizer and the model.
namespace special {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kSep = 4;
inline constexpr int kCount = 5;
}  // namespace special

}  // namespace regavae
