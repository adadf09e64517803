#pragma once

#include "dmlt/tensor.hpp"

namespace dmlt {

// Layer kernels. Forward passes treat every batch row independently; the
// weight/bias gradients reduce over the batch axis with pairwiseSumAxis0 so
// that gradients of aligned power-of-two shards recombine bit-exactly into
// the full-batch gradient.

Tensor reluMask(const Tensor& t);  // 1.0 where t > 0 else 0.0

// x [B,in], w [out,in], b [out] -> y = x*w^T + b
Tensor linearForward(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
  Tensor dx, dw, db;
};
LinearGrads linearBackward(const Tensor& upstream, const Tensor& x, const Tensor& w);

struct ConvSpec {
  int64_t stride = 1;
  int64_t padding = 0;
};

// x [B,Cin,H,W], w [Cout,Cin,kH,kW], optional bias [Cout]; cross-correlation
// with output spatial extent floor((H + 2p - kH)/s) + 1.
Tensor conv2dForward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvSpec spec);

struct ConvGrads {
  Tensor dx, dw, db;  // db undefined when forward had no bias
};
ConvGrads conv2dBackward(const Tensor& upstream, const Tensor& x, const Tensor& w, bool hasBias,
                         ConvSpec spec);

struct SoftmaxCEForward {
  Tensor loss;     // scalar, batch mean
  Tensor softmax;  // [B,C], saved for backward
};
// logits [B,C] float32, labels [B] int32 in [0,C).
SoftmaxCEForward softmaxCrossEntropyForward(const Tensor& logits, const Tensor& labels);
Tensor softmaxCrossEntropyBackward(const Tensor& upstream, const Tensor& softmax, const Tensor& labels);

}  // namespace dmlt
