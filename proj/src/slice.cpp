#include "dmlt/slice.hpp"

namespace dmlt {

namespace {

int64_t clamp(int64_t v, int64_t lo, int64_t hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Python slice normalization for one axis of extent n.
void normalizeRange(const Range& r, int64_t n, int64_t& start, int64_t& length, int64_t& step) {
  step = r.step.value_or(1);
  if (step == 0) raise(ErrorCode::ZeroStep, "slice step must be nonzero");
  if (step > 0) {
    start = r.start.value_or(0);
    int64_t stop = r.stop.value_or(n);
    if (start < 0) start += n;
    if (stop < 0) stop += n;
    start = clamp(start, 0, n);
    stop = clamp(stop, 0, n);
    length = stop > start ? (stop - start + step - 1) / step : 0;
  } else {
    start = r.start.value_or(n - 1);
    int64_t stop = r.stop ? *r.stop : -n - 1;  // sentinel: one before axis begin
    if (start < 0) start += n;
    if (stop < 0) stop += n;
    start = clamp(start, -1, n - 1);
    stop = clamp(stop, -1, n - 1);
    length = start > stop ? (start - stop - step - 1) / (-step) : 0;
  }
}

}  // namespace

Tensor slice(const Tensor& t, const SliceSpec& spec) {
  int64_t rank = t.rank();
  int64_t consuming = 0;  // items that consume a source axis
  int64_t ellipses = 0;
  for (const SliceItem& item : spec) {
    if (std::holds_alternative<Ellipsis>(item)) {
      ++ellipses;
    } else if (!std::holds_alternative<NewAxis>(item)) {
      ++consuming;
    }
  }
  if (ellipses > 1) raise(ErrorCode::InvalidSliceSpec, "more than one Ellipsis");
  if (consuming > rank)
    raise(ErrorCode::InvalidSliceSpec, "spec consumes " + std::to_string(consuming) +
                                           " axes, tensor has " + std::to_string(rank));

  // Expand Ellipsis (or the implicit tail) into full ranges.
  SliceSpec expanded;
  expanded.reserve(spec.size() + static_cast<size_t>(rank));
  bool sawEllipsis = false;
  for (const SliceItem& item : spec) {
    if (std::holds_alternative<Ellipsis>(item)) {
      for (int64_t i = 0; i < rank - consuming; ++i) expanded.push_back(all());
      sawEllipsis = true;
    } else {
      expanded.push_back(item);
    }
  }
  if (!sawEllipsis)
    for (int64_t i = 0; i < rank - consuming; ++i) expanded.push_back(all());

  Shape outShape;
  std::vector<int64_t> outStrides;
  int64_t offset = t.offset();
  int64_t axis = 0;
  for (const SliceItem& item : expanded) {
    if (std::holds_alternative<NewAxis>(item)) {
      outShape.push_back(1);
      outStrides.push_back(0);
      continue;
    }
    int64_t n = t.shape()[axis];
    int64_t stride = t.strides()[axis];
    if (const Index* ix = std::get_if<Index>(&item)) {
      int64_t i = ix->i;
      if (i < 0) i += n;
      if (i < 0 || i >= n)
        raise(ErrorCode::IndexOutOfBounds, "index " + std::to_string(ix->i) + " on axis " +
                                               std::to_string(axis) + " of extent " + std::to_string(n));
      offset += i * stride;
    } else {
      const Range& r = std::get<Range>(item);
      int64_t start, length, step;
      normalizeRange(r, n, start, length, step);
      if (length > 0) offset += start * stride;
      outShape.push_back(length);
      outStrides.push_back(stride * step);
    }
    ++axis;
  }
  return t.view(std::move(outShape), std::move(outStrides), offset);
}

}  // namespace dmlt
