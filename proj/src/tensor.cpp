#include "dmlt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dmlt {

std::string shapeToString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Shape Tensor::contiguousStrides(const Shape& shape) {
  Shape strides(shape.size());
  int64_t acc = 1;
  for (int64_t d = static_cast<int64_t>(shape.size()) - 1; d >= 0; --d) {
    strides[d] = acc;
    acc *= shape[d];
  }
  return strides;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t e : shape_) n *= e;
  return n;
}

bool Tensor::contiguous() const {
  if (offset_ != 0) return false;
  return strides_ == contiguousStrides(shape_);
}

Tensor Tensor::empty(Backend& backend, DType dtype, Shape shape) {
  for (int64_t e : shape)
    if (e < 0) raise(ErrorCode::ShapeMismatch, "negative extent in " + shapeToString(shape));
  Tensor t;
  t.backend_ = &backend;
  t.dtype_ = dtype;
  t.strides_ = contiguousStrides(shape);
  t.shape_ = std::move(shape);
  t.buffer_ = backend.alloc(static_cast<size_t>(t.numel()) * dtypeSize(dtype));
  return t;
}

Tensor Tensor::zeros(Backend& backend, DType dtype, Shape shape) {
  return empty(backend, dtype, std::move(shape));  // alloc zero-fills
}

Tensor Tensor::full(Backend& backend, DType dtype, Shape shape, double value) {
  Tensor t = empty(backend, dtype, std::move(shape));
  int64_t n = t.numel();
  switch (dtype) {
    case DType::Float32: {
      float* p = t.dataAs<float>();
      for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(value);
      break;
    }
    case DType::Int32: {
      int32_t* p = t.dataAs<int32_t>();
      for (int64_t i = 0; i < n; ++i) p[i] = static_cast<int32_t>(value);
      break;
    }
    case DType::UInt8: {
      uint8_t* p = t.dataAs<uint8_t>();
      for (int64_t i = 0; i < n; ++i) p[i] = static_cast<uint8_t>(value);
      break;
    }
    case DType::Bool: {
      uint8_t* p = t.dataAs<uint8_t>();
      for (int64_t i = 0; i < n; ++i) p[i] = value != 0.0 ? 1 : 0;
      break;
    }
  }
  return t;
}

Tensor Tensor::view(Shape shape, std::vector<int64_t> strides, int64_t offset) const {
  Tensor t = *this;
  t.shape_ = std::move(shape);
  t.strides_ = std::move(strides);
  t.offset_ = offset;
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  int64_t n = 1;
  int64_t wildcard = -1;
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      if (wildcard >= 0) raise(ErrorCode::ShapeMismatch, "multiple -1 extents in reshape");
      wildcard = static_cast<int64_t>(d);
    } else {
      n *= shape[d];
    }
  }
  if (wildcard >= 0) {
    if (n == 0 || numel() % n != 0)
      raise(ErrorCode::ShapeMismatch, "cannot infer extent for reshape to " + shapeToString(shape));
    shape[wildcard] = numel() / n;
    n = numel();
  }
  if (n != numel())
    raise(ErrorCode::ShapeMismatch,
          "reshape " + shapeToString(shape_) + " -> " + shapeToString(shape));
  if (contiguous()) return view(std::move(shape), contiguousStrides(shape), 0);
  // materialize, then view
  Tensor c = Tensor::empty(*backend_, dtype_, shape_);
  size_t elem = dtypeSize(dtype_);
  const std::byte* src = reinterpret_cast<const std::byte*>(backend_->data(buffer_));
  std::byte* dst = reinterpret_cast<std::byte*>(backend_->data(c.buffer_));
  int64_t i = 0;
  forEachOffset(shape_, strides_, offset_, [&](int64_t pos) {
    std::memcpy(dst + elem * i++, src + elem * pos, elem);
  });
  return c.view(std::move(shape), contiguousStrides(shape), 0);
}

Tensor Tensor::transpose2d() const {
  if (rank() != 2) raise(ErrorCode::ShapeMismatch, "transpose2d needs rank 2, got " + shapeToString(shape_));
  return view({shape_[1], shape_[0]}, {strides_[1], strides_[0]}, offset_);
}

double Tensor::item(const std::vector<int64_t>& index) const {
  if (static_cast<int64_t>(index.size()) != rank())
    raise(ErrorCode::IndexOutOfBounds, "index rank mismatch");
  int64_t pos = offset_;
  for (size_t d = 0; d < index.size(); ++d) {
    if (index[d] < 0 || index[d] >= shape_[d])
      raise(ErrorCode::IndexOutOfBounds, "index " + std::to_string(index[d]) + " on axis " + std::to_string(d));
    pos += index[d] * strides_[d];
  }
  switch (dtype_) {
    case DType::Float32: return dataAs<float>()[pos];
    case DType::Int32: return dataAs<int32_t>()[pos];
    case DType::UInt8: return dataAs<uint8_t>()[pos];
    case DType::Bool: return dataAs<uint8_t>()[pos];
  }
  return 0;
}

double Tensor::itemFlat(int64_t flatIndex) const {
  if (flatIndex < 0 || flatIndex >= numel()) raise(ErrorCode::IndexOutOfBounds, "flat index");
  std::vector<int64_t> index(shape_.size());
  for (int64_t d = rank() - 1; d >= 0; --d) {
    index[d] = flatIndex % shape_[d];
    flatIndex /= shape_[d];
  }
  return item(index);
}

float Tensor::scalar() const {
  if (numel() != 1) raise(ErrorCode::ShapeMismatch, "scalar() on " + shapeToString(shape_));
  return static_cast<float>(itemFlat(0));
}

template <typename T>
std::vector<T> Tensor::toVector() const {
  std::vector<T> out;
  out.reserve(static_cast<size_t>(numel()));
  switch (dtype_) {
    case DType::Float32: {
      const float* p = dataAs<float>();
      forEachOffset(shape_, strides_, offset_, [&](int64_t pos) { out.push_back(static_cast<T>(p[pos])); });
      break;
    }
    case DType::Int32: {
      const int32_t* p = dataAs<int32_t>();
      forEachOffset(shape_, strides_, offset_, [&](int64_t pos) { out.push_back(static_cast<T>(p[pos])); });
      break;
    }
    case DType::UInt8:
    case DType::Bool: {
      const uint8_t* p = dataAs<uint8_t>();
      forEachOffset(shape_, strides_, offset_, [&](int64_t pos) { out.push_back(static_cast<T>(p[pos])); });
      break;
    }
  }
  return out;
}

template std::vector<float> Tensor::toVector<float>() const;
template std::vector<double> Tensor::toVector<double>() const;
template std::vector<int32_t> Tensor::toVector<int32_t>() const;
template std::vector<uint8_t> Tensor::toVector<uint8_t>() const;

namespace {

void inferShape(const Nested& node, Shape& shape, int64_t depth) {
  if (node.isLeaf()) return;
  const auto& items = node.items();
  if (static_cast<int64_t>(shape.size()) == depth) {
    shape.push_back(static_cast<int64_t>(items.size()));
  } else if (shape[depth] != static_cast<int64_t>(items.size())) {
    raise(ErrorCode::RaggedInput, "sibling length " + std::to_string(items.size()) +
                                      " != " + std::to_string(shape[depth]) + " at depth " +
                                      std::to_string(depth));
  }
  for (const Nested& child : items) {
    if (child.isLeaf() != items.front().isLeaf())
      raise(ErrorCode::RaggedInput, "mixed leaf/list siblings at depth " + std::to_string(depth));
    inferShape(child, shape, depth + 1);
  }
}

void checkRepresentable(double v, DType dtype) {
  switch (dtype) {
    case DType::Float32: {
      if (std::isfinite(v) && std::abs(v) > 3.4028235e38)
        raise(ErrorCode::DTypeOverflow, std::to_string(v) + " out of float32 range");
      return;
    }
    case DType::Int32:
      if (v != std::floor(v) || v < -2147483648.0 || v > 2147483647.0)
        raise(ErrorCode::DTypeOverflow, std::to_string(v) + " not representable as int32");
      return;
    case DType::UInt8:
      if (v != std::floor(v) || v < 0.0 || v > 255.0)
        raise(ErrorCode::DTypeOverflow, std::to_string(v) + " not representable as uint8");
      return;
    case DType::Bool:
      if (v != 0.0 && v != 1.0)
        raise(ErrorCode::DTypeOverflow, std::to_string(v) + " not representable as bool");
      return;
  }
}

void flatten(const Nested& node, DType dtype, std::vector<double>& out, int64_t depth, int64_t rank) {
  if (node.isLeaf()) {
    if (depth != rank) raise(ErrorCode::RaggedInput, "leaf above expected depth");
    checkRepresentable(node.value(), dtype);
    out.push_back(node.value());
    return;
  }
  if (depth >= rank) raise(ErrorCode::RaggedInput, "list below expected depth");
  for (const Nested& child : node.items()) flatten(child, dtype, out, depth + 1, rank);
}

}  // namespace

Tensor tensorFromNested(Backend& backend, const Nested& data, DType dtype) {
  Shape shape;
  if (data.isLeaf()) {
    checkRepresentable(data.value(), dtype);
    Tensor t = Tensor::empty(backend, dtype, {});
    switch (dtype) {
      case DType::Float32: t.dataAs<float>()[0] = static_cast<float>(data.value()); break;
      case DType::Int32: t.dataAs<int32_t>()[0] = static_cast<int32_t>(data.value()); break;
      case DType::UInt8:
      case DType::Bool: t.dataAs<uint8_t>()[0] = static_cast<uint8_t>(data.value()); break;
    }
    return t;
  }
  inferShape(data, shape, 0);
  std::vector<double> flat;
  flatten(data, dtype, flat, 0, static_cast<int64_t>(shape.size()));
  Tensor t = Tensor::empty(backend, dtype, shape);
  for (size_t i = 0; i < flat.size(); ++i) {
    switch (dtype) {
      case DType::Float32: t.dataAs<float>()[i] = static_cast<float>(flat[i]); break;
      case DType::Int32: t.dataAs<int32_t>()[i] = static_cast<int32_t>(flat[i]); break;
      case DType::UInt8:
      case DType::Bool: t.dataAs<uint8_t>()[i] = static_cast<uint8_t>(flat[i]); break;
    }
  }
  return t;
}

}  // namespace dmlt
