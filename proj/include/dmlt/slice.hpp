#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "dmlt/tensor.hpp"

namespace dmlt {

// Per-axis selectors. Negative start/stop/index count from the axis end.
struct Range {
  std::optional<int64_t> start;
  std::optional<int64_t> stop;
  std::optional<int64_t> step;
};
struct Index {
  int64_t i;
};
struct NewAxis {};
struct Ellipsis {};

using SliceItem = std::variant<Range, Index, NewAxis, Ellipsis>;
using SliceSpec = std::vector<SliceItem>;

inline Range all() { return Range{}; }
inline Range range(std::optional<int64_t> start, std::optional<int64_t> stop,
                   std::optional<int64_t> step = std::nullopt) {
  return Range{start, stop, step};
}

// Returns a view over the same buffer: Index selectors drop axes, NewAxis
// inserts extent-1 axes, Ellipsis expands to full ranges. Raises
// IndexOutOfBounds for an Index outside [-extent, extent), ZeroStep for
// step = 0 and InvalidSliceSpec for malformed specs.
Tensor slice(const Tensor& t, const SliceSpec& spec);

}  // namespace dmlt
