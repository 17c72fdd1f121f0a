#include "nmer/error.hpp"
#include "nmer/types.hpp"

namespace nmer {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

char short_name(Modality m) {
  switch (m) {
    case Modality::acoustic: return 'a';
    case Modality::visual: return 'v';
    case Modality::lexical: return 'l';
  }
  return '?';
}

std::string_view emotion_name(int label) {
  static constexpr std::string_view names[kNumClasses] = {"happy", "angry", "sad", "neutral"};
  if (label < 0 || label >= kNumClasses) throw Error(ErrorKind::invalid_argument, "label out of range");
  return names[label];
}

}  // namespace nmer
