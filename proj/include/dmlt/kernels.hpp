#pragma once

#include <optional>

#include "dmlt/tensor.hpp"

namespace dmlt {

// Dense float32 kernels. Every kernel is single-threaded with a fixed loop
// order so repeated evaluation on identical inputs is bit-identical.

// Broadcasting binary ops (standard trailing-axis rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor relu(const Tensor& t);

Tensor mulScalar(const Tensor& t, float s);
Tensor addScalar(const Tensor& t, float s);

// Reductions accumulate in ascending flat-index order.
Tensor sumAll(const Tensor& t);              // -> scalar, shape []
Tensor sumAxis(const Tensor& t, int64_t axis);
Tensor maxAll(const Tensor& t);
Tensor maxAxis(const Tensor& t, int64_t axis);

// a [M,K] x b [K,N] -> [M,N]; float32 accumulation, inner loop k-ascending.
Tensor matmul(const Tensor& a, const Tensor& b);

// Same buffer when already contiguous row-major at offset 0, else a copy.
Tensor toContiguous(const Tensor& t);

// Casts uint8 [0,255] to float32 and scales by 1/255.
Tensor normalizeU8(const Tensor& t);
Tensor castTo(const Tensor& t, DType dtype);

// Reduces axis 0 by adjacent pairwise halving: partial[i] += partial[i+h]
// for h = 1,2,4,... The association tree over contiguous aligned blocks is
// what lets shard-wise gradient sums recombine bit-exactly.
Tensor pairwiseSumAxis0(const Tensor& t);

// In-place float32 helpers for the documented mutable paths.
void axpyInPlace(Tensor& dst, const Tensor& x, float alpha);  // dst += alpha*x
void scaleInPlace(Tensor& dst, float alpha);
void copyInto(Tensor& dst, const Tensor& src);  // shapes and dtypes must match

Shape broadcastShape(const Shape& a, const Shape& b);

}  // namespace dmlt
