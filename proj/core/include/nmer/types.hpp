#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "nmer/autograd.hpp"

namespace nmer {

enum class Modality : int { acoustic = 0, visual = 1, lexical = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::acoustic, Modality::visual, Modality::lexical};
inline constexpr int kNumClasses = 4;

constexpr int index_of(Modality m) { return static_cast<int>(m); }
char short_name(Modality m);

/// happy, angry, sad, neutral -> 0..3
std::string_view emotion_name(int label);

/// One utterance: per-modality frame sequences (frames x dim) and a label.
struct UtteranceRecord {
  std::string id;
  int label = 0;
  std::array<FloatMatrix, 3> features;

  FloatMatrix& feature(Modality m) { return features[index_of(m)]; }
  const FloatMatrix& feature(Modality m) const { return features[index_of(m)]; }

  bool operator==(const UtteranceRecord&) const = default;
};

}  // namespace nmer
