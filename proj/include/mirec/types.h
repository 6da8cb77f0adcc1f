#pragma once

#include <string>
#include <string_view>

#include "mirec/errors.h"

namespace mirec {

// The two item index families: codes learned from collaborative embeddings
// and codes learned from semantic (text) embeddings.
enum class IndexType { kCeid, kSeid };

inline std::string_view to_string(IndexType t) {
  return t == IndexType::kCeid ? "ceid" : "seid";
}

inline IndexType parse_index_type(std::string_view s) {
  if (s == "ceid") return IndexType::kCeid;
  if (s == "seid") return IndexType::kSeid;
  throw InvalidArgument("unknown index type '" + std::string(s) + "'");
}

}  // namespace mirec
