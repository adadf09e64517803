#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <variant>
#include <vector>

#include "dmlt/backend.hpp"
#include "dmlt/dtype.hpp"

namespace dmlt {

using Shape = std::vector<int64_t>;

// Dense strided view over a backend-owned buffer. Strides are in elements
// and may be negative; a freshly created tensor is contiguous row-major.
// Tensors are immutable after construction except for the documented
// in-place paths (optimizer updates, restore_model).
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Backend& backend, DType dtype, Shape shape);
  static Tensor zeros(Backend& backend, DType dtype, Shape shape);
  static Tensor full(Backend& backend, DType dtype, Shape shape, double value);

  bool defined() const { return backend_ != nullptr; }
  DType dtype() const { return dtype_; }
  const Shape& shape() const { return shape_; }
  const std::vector<int64_t>& strides() const { return strides_; }
  int64_t offset() const { return offset_; }
  BufferId buffer() const { return buffer_; }
  Backend& backend() const { return *backend_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const;
  bool contiguous() const;

  // Base pointer of the underlying buffer; index with offset()/strides().
  template <typename T>
  T* dataAs() const {
    return reinterpret_cast<T*>(backend_->data(buffer_));
  }

  // New view over the same buffer.
  Tensor view(Shape shape, std::vector<int64_t> strides, int64_t offset) const;
  Tensor reshape(Shape shape) const;  // view when contiguous, copy otherwise
  Tensor transpose2d() const;

  // Element access through strides, mostly for tests and host-side readout.
  double item(const std::vector<int64_t>& index) const;
  double itemFlat(int64_t flatIndex) const;  // logical row-major position
  float scalar() const;                      // numel()==1

  template <typename T>
  std::vector<T> toVector() const;  // gathered logical row-major copy

  static Shape contiguousStrides(const Shape& shape);

 private:
  DType dtype_ = DType::Float32;
  Shape shape_;
  std::vector<int64_t> strides_;
  int64_t offset_ = 0;
  BufferId buffer_ = 0;
  Backend* backend_ = nullptr;
};

// Nested numeric list for tensor_from_nested, e.g. {{1,2},{3,4}}.
class Nested {
 public:
  Nested(double value) : node_(value) {}
  Nested(int value) : node_(static_cast<double>(value)) {}
  Nested(std::initializer_list<Nested> items) : node_(std::vector<Nested>(items)) {}

  bool isLeaf() const { return std::holds_alternative<double>(node_); }
  double value() const { return std::get<double>(node_); }
  const std::vector<Nested>& items() const { return std::get<std::vector<Nested>>(node_); }

 private:
  std::variant<double, std::vector<Nested>> node_;
};

// Builds a contiguous row-major tensor from rectangular nested lists.
// Raises RaggedInput when sibling lengths differ and DTypeOverflow when a
// value cannot be represented exactly in `dtype`.
Tensor tensorFromNested(Backend& backend, const Nested& data, DType dtype);

// Walks shape/strides in logical row-major order, calling fn(srcElementOffset).
template <typename Fn>
void forEachOffset(const Shape& shape, const std::vector<int64_t>& strides, int64_t offset, Fn&& fn) {
  int64_t rank = static_cast<int64_t>(shape.size());
  if (rank == 0) {
    fn(offset);
    return;
  }
  for (int64_t d = 0; d < rank; ++d)
    if (shape[d] == 0) return;
  std::vector<int64_t> idx(rank, 0);
  int64_t pos = offset;
  for (;;) {
    fn(pos);
    int64_t d = rank - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      pos += strides[d];
      if (idx[d] < shape[d]) break;
      pos -= strides[d] * shape[d];
      idx[d] = 0;
    }
    if (d < 0) return;
  }
}

std::string shapeToString(const Shape& shape);

}  // namespace dmlt
