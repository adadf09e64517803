#include "dmlt/kernels.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace dmlt {

namespace {

void requireFloat(const Tensor& t, const char* op) {
  if (t.dtype() != DType::Float32)
    raise(ErrorCode::DTypeMismatch, std::string(op) + " requires float32, got " + dtypeName(t.dtype()));
}

void requireSameBackend(const Tensor& a, const Tensor& b) {
  if (&a.backend() != &b.backend()) raise(ErrorCode::BackendMismatch, "tensors from different backends");
}

// Strides for reading `shape` as if broadcast to `outShape` (trailing-aligned,
// extent-1 axes get stride 0).
std::vector<int64_t> broadcastStrides(const Shape& shape, const std::vector<int64_t>& strides,
                                      const Shape& outShape) {
  std::vector<int64_t> out(outShape.size(), 0);
  size_t shift = outShape.size() - shape.size();
  for (size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == outShape[shift + d])
      out[shift + d] = strides[d];
    else
      out[shift + d] = 0;  // extent-1 axis repeats
  }
  return out;
}

template <typename Fn>
Tensor binaryOp(const Tensor& a, const Tensor& b, const char* name, Fn&& fn) {
  requireFloat(a, name);
  requireFloat(b, name);
  requireSameBackend(a, b);
  Shape outShape = broadcastShape(a.shape(), b.shape());
  Tensor out = Tensor::empty(a.backend(), DType::Float32, outShape);
  auto sa = broadcastStrides(a.shape(), a.strides(), outShape);
  auto sb = broadcastStrides(b.shape(), b.strides(), outShape);
  const float* pa = a.dataAs<float>();
  const float* pb = b.dataAs<float>();
  float* po = out.dataAs<float>();
  int64_t n = out.numel();
  if (n == 0) return out;
  int64_t rank = out.rank();
  std::vector<int64_t> idx(rank, 0);
  int64_t offA = a.offset(), offB = b.offset();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = fn(pa[offA], pb[offB]);
    for (int64_t d = rank - 1; d >= 0; --d) {
      ++idx[d];
      offA += sa[d];
      offB += sb[d];
      if (idx[d] < outShape[d]) break;
      offA -= sa[d] * outShape[d];
      offB -= sb[d] * outShape[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename Fn>
Tensor unaryOp(const Tensor& t, const char* name, Fn&& fn) {
  requireFloat(t, name);
  Tensor out = Tensor::empty(t.backend(), DType::Float32, t.shape());
  const float* p = t.dataAs<float>();
  float* po = out.dataAs<float>();
  int64_t i = 0;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) { po[i++] = fn(p[pos]); });
  return out;
}

int64_t normalizeAxis(int64_t axis, int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) raise(ErrorCode::IndexOutOfBounds, "reduction axis " + std::to_string(axis));
  return axis;
}

}  // namespace

Shape broadcastShape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      raise(ErrorCode::ShapeMismatch,
            "cannot broadcast " + shapeToString(a) + " with " + shapeToString(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binaryOp(a, b, "add", [](float x, float y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return binaryOp(a, b, "sub", [](float x, float y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return binaryOp(a, b, "mul", [](float x, float y) { return x * y; }); }
Tensor div(const Tensor& a, const Tensor& b) { return binaryOp(a, b, "div", [](float x, float y) { return x / y; }); }

Tensor neg(const Tensor& t) { return unaryOp(t, "neg", [](float x) { return -x; }); }
Tensor exp(const Tensor& t) { return unaryOp(t, "exp", [](float x) { return std::exp(x); }); }
Tensor log(const Tensor& t) { return unaryOp(t, "log", [](float x) { return std::log(x); }); }
Tensor relu(const Tensor& t) { return unaryOp(t, "relu", [](float x) { return x > 0.0f ? x : 0.0f; }); }

Tensor mulScalar(const Tensor& t, float s) { return unaryOp(t, "mulScalar", [s](float x) { return x * s; }); }
Tensor addScalar(const Tensor& t, float s) { return unaryOp(t, "addScalar", [s](float x) { return x + s; }); }

Tensor sumAll(const Tensor& t) {
  requireFloat(t, "sum");
  Tensor out = Tensor::zeros(t.backend(), DType::Float32, {});
  const float* p = t.dataAs<float>();
  float acc = 0.0f;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) { acc += p[pos]; });
  out.dataAs<float>()[0] = acc;
  return out;
}

Tensor sumAxis(const Tensor& t, int64_t axis) {
  requireFloat(t, "sum");
  axis = normalizeAxis(axis, t.rank());
  Shape outShape;
  for (int64_t d = 0; d < t.rank(); ++d)
    if (d != axis) outShape.push_back(t.shape()[d]);
  Tensor out = Tensor::zeros(t.backend(), DType::Float32, outShape);
  const float* p = t.dataAs<float>();
  float* po = out.dataAs<float>();
  // ascending flat order over the input; accumulate into the reduced slot
  int64_t rank = t.rank();
  std::vector<int64_t> idx(rank, 0);
  std::vector<int64_t> outStrides(rank, 0);
  {
    auto os = Tensor::contiguousStrides(outShape);
    int64_t o = 0;
    for (int64_t d = 0; d < rank; ++d) outStrides[d] = d == axis ? 0 : os[o++];
  }
  if (t.numel() == 0) return out;
  int64_t pos = t.offset();
  int64_t outPos = 0;
  for (;;) {
    po[outPos] += p[pos];
    int64_t d = rank - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      pos += t.strides()[d];
      outPos += outStrides[d];
      if (idx[d] < t.shape()[d]) break;
      pos -= t.strides()[d] * t.shape()[d];
      outPos -= outStrides[d] * t.shape()[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

Tensor maxAll(const Tensor& t) {
  requireFloat(t, "max");
  if (t.numel() == 0) raise(ErrorCode::ShapeMismatch, "max of empty tensor");
  Tensor out = Tensor::empty(t.backend(), DType::Float32, {});
  const float* p = t.dataAs<float>();
  float acc = -std::numeric_limits<float>::infinity();
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) {
    if (p[pos] > acc) acc = p[pos];
  });
  out.dataAs<float>()[0] = acc;
  return out;
}

Tensor maxAxis(const Tensor& t, int64_t axis) {
  requireFloat(t, "max");
  axis = normalizeAxis(axis, t.rank());
  if (t.shape()[axis] == 0) raise(ErrorCode::ShapeMismatch, "max over empty axis");
  Shape outShape;
  for (int64_t d = 0; d < t.rank(); ++d)
    if (d != axis) outShape.push_back(t.shape()[d]);
  Tensor out = Tensor::full(t.backend(), DType::Float32, outShape,
                            -std::numeric_limits<double>::infinity());
  const float* p = t.dataAs<float>();
  float* po = out.dataAs<float>();
  int64_t rank = t.rank();
  std::vector<int64_t> idx(rank, 0);
  std::vector<int64_t> outStrides(rank, 0);
  {
    auto os = Tensor::contiguousStrides(outShape);
    int64_t o = 0;
    for (int64_t d = 0; d < rank; ++d) outStrides[d] = d == axis ? 0 : os[o++];
  }
  if (t.numel() == 0) return out;
  int64_t pos = t.offset();
  int64_t outPos = 0;
  for (;;) {
    if (p[pos] > po[outPos]) po[outPos] = p[pos];
    int64_t d = rank - 1;
    for (; d >= 0; --d) {
      ++idx[d];
      pos += t.strides()[d];
      outPos += outStrides[d];
      if (idx[d] < t.shape()[d]) break;
      pos -= t.strides()[d] * t.shape()[d];
      outPos -= outStrides[d] * t.shape()[d];
      idx[d] = 0;
    }
    if (d < 0) break;
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  requireFloat(a, "matmul");
  requireFloat(b, "matmul");
  requireSameBackend(a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    raise(ErrorCode::ShapeMismatch,
          "matmul " + shapeToString(a.shape()) + " x " + shapeToString(b.shape()));
  int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros(a.backend(), DType::Float32, {m, n});
  const float* pa = a.dataAs<float>();
  const float* pb = b.dataAs<float>();
  float* po = out.dataAs<float>();
  int64_t as0 = a.strides()[0], as1 = a.strides()[1];
  int64_t bs0 = b.strides()[0], bs1 = b.strides()[1];
  // i-k-j keeps the per-element accumulation k-ascending and streams b rows.
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = pa + a.offset() + i * as0;
    float* orow = po + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      float av = arow[kk * as1];
      const float* brow = pb + b.offset() + kk * bs0;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j * bs1];
    }
  }
  return out;
}

Tensor toContiguous(const Tensor& t) {
  if (t.contiguous()) return t;
  Tensor out = Tensor::empty(t.backend(), t.dtype(), t.shape());
  size_t elem = dtypeSize(t.dtype());
  const std::byte* src = reinterpret_cast<const std::byte*>(t.backend().data(t.buffer()));
  std::byte* dst = reinterpret_cast<std::byte*>(t.backend().data(out.buffer()));
  int64_t i = 0;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) {
    std::memcpy(dst + elem * i++, src + elem * pos, elem);
  });
  return out;
}

Tensor normalizeU8(const Tensor& t) {
  if (t.dtype() != DType::UInt8) raise(ErrorCode::DTypeMismatch, "normalizeU8 needs uint8");
  Tensor out = Tensor::empty(t.backend(), DType::Float32, t.shape());
  const uint8_t* p = t.dataAs<uint8_t>();
  float* po = out.dataAs<float>();
  const float scale = 1.0f / 255.0f;
  int64_t i = 0;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) {
    po[i++] = static_cast<float>(p[pos]) * scale;
  });
  return out;
}

Tensor castTo(const Tensor& t, DType dtype) {
  if (t.dtype() == dtype) return toContiguous(t);
  Tensor out = Tensor::empty(t.backend(), dtype, t.shape());
  int64_t i = 0;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) {
    double v = 0;
    switch (t.dtype()) {
      case DType::Float32: v = t.dataAs<float>()[pos]; break;
      case DType::Int32: v = t.dataAs<int32_t>()[pos]; break;
      case DType::UInt8:
      case DType::Bool: v = t.dataAs<uint8_t>()[pos]; break;
    }
    switch (dtype) {
      case DType::Float32: out.dataAs<float>()[i] = static_cast<float>(v); break;
      case DType::Int32: out.dataAs<int32_t>()[i] = static_cast<int32_t>(v); break;
      case DType::UInt8: out.dataAs<uint8_t>()[i] = static_cast<uint8_t>(v); break;
      case DType::Bool: out.dataAs<uint8_t>()[i] = v != 0 ? 1 : 0; break;
    }
    ++i;
  });
  return out;
}

Tensor pairwiseSumAxis0(const Tensor& t) {
  requireFloat(t, "pairwiseSumAxis0");
  if (t.rank() < 1) raise(ErrorCode::ShapeMismatch, "pairwiseSumAxis0 needs rank >= 1");
  Tensor work = toContiguous(t);
  if (work.buffer() == t.buffer() && t.numel() > 0) {  // do not clobber the input
    work = Tensor::empty(t.backend(), DType::Float32, t.shape());
    std::memcpy(work.dataAs<float>(), t.dataAs<float>(), static_cast<size_t>(t.numel()) * 4);
  }
  int64_t b = work.shape()[0];
  int64_t inner = b == 0 ? 0 : work.numel() / b;
  float* p = work.dataAs<float>();
  for (int64_t h = 1; h < b; h *= 2) {
    for (int64_t i = 0; i + h < b; i += 2 * h) {
      float* dst = p + i * inner;
      const float* src = p + (i + h) * inner;
      for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  }
  Shape outShape(work.shape().begin() + 1, work.shape().end());
  Tensor out = Tensor::zeros(t.backend(), DType::Float32, outShape);
  if (b > 0 && inner > 0) std::memcpy(out.dataAs<float>(), p, static_cast<size_t>(inner) * 4);
  return out;
}

void axpyInPlace(Tensor& dst, const Tensor& x, float alpha) {
  requireFloat(dst, "axpy");
  requireFloat(x, "axpy");
  if (dst.shape() != x.shape())
    raise(ErrorCode::ShapeMismatch, "axpy " + shapeToString(dst.shape()) + " vs " + shapeToString(x.shape()));
  float* pd = dst.dataAs<float>();
  const float* px = x.dataAs<float>();
  std::vector<int64_t> dstOffsets;
  dstOffsets.reserve(static_cast<size_t>(dst.numel()));
  forEachOffset(dst.shape(), dst.strides(), dst.offset(), [&](int64_t pos) { dstOffsets.push_back(pos); });
  int64_t i = 0;
  forEachOffset(x.shape(), x.strides(), x.offset(), [&](int64_t pos) {
    pd[dstOffsets[static_cast<size_t>(i++)]] += alpha * px[pos];
  });
}

void scaleInPlace(Tensor& dst, float alpha) {
  requireFloat(dst, "scale");
  float* pd = dst.dataAs<float>();
  forEachOffset(dst.shape(), dst.strides(), dst.offset(), [&](int64_t pos) { pd[pos] *= alpha; });
}

void copyInto(Tensor& dst, const Tensor& src) {
  if (dst.dtype() != src.dtype()) raise(ErrorCode::DTypeMismatch, "copyInto dtype mismatch");
  if (dst.shape() != src.shape())
    raise(ErrorCode::ShapeMismatch, "copyInto " + shapeToString(dst.shape()) + " vs " + shapeToString(src.shape()));
  size_t elem = dtypeSize(dst.dtype());
  std::byte* pd = reinterpret_cast<std::byte*>(dst.backend().data(dst.buffer()));
  const std::byte* ps = reinterpret_cast<const std::byte*>(src.backend().data(src.buffer()));
  std::vector<int64_t> dstOffsets;
  dstOffsets.reserve(static_cast<size_t>(dst.numel()));
  forEachOffset(dst.shape(), dst.strides(), dst.offset(), [&](int64_t pos) { dstOffsets.push_back(pos); });
  int64_t i = 0;
  forEachOffset(src.shape(), src.strides(), src.offset(), [&](int64_t pos) {
    std::memcpy(pd + elem * dstOffsets[static_cast<size_t>(i++)], ps + elem * pos, elem);
  });
}

}  // namespace dmlt
