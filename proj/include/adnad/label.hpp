#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace adnad {

// Binary class; Abnormal is the positive class throughout.
enum class Label : std::uint8_t { Normal = 0, Abnormal = 1 };

inline std::string_view label_name(Label l) {
  return l == Label::Abnormal ? "abnormal" : "normal";
}

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "normal" || s == "Normal" || s == "0") return Label::Normal;
  if (s == "abnormal" || s == "Abnormal" || s == "1") return Label::Abnormal;
  return std::nullopt;
}

inline constexpr int index_of(Label l) { return static_cast<int>(l); }

}  // namespace adnad
