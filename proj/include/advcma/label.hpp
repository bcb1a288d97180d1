#pragma once

#include <compare>
#include <cstdint>

namespace advcma {

/// Class index returned by a classifier, in [0, num_classes).
struct Label {
  std::int32_t value = 0;

  constexpr Label() = default;
  constexpr explicit Label(std::int32_t v) : value(v) {}
  constexpr auto operator<=>(const Label&) const = default;
};

}  // namespace advcma
