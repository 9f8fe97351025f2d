#pragma once

#include <string>

#include "errors.hpp"
#include "json.hpp"

namespace dagkt {

/// Throws ValidationError naming the first key of `j` absent from `known`.
inline void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ValidationError(what + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace dagkt
