#include "dmlt/nn_kernels.hpp"

#include <cmath>
#include <cstring>

#include "dmlt/kernels.hpp"

namespace dmlt {

namespace {

void requireFloat(const Tensor& t, const char* op) {
  if (t.dtype() != DType::Float32)
    raise(ErrorCode::DTypeMismatch, std::string(op) + " requires float32, got " + dtypeName(t.dtype()));
}

}  // namespace

Tensor reluMask(const Tensor& t) {
  requireFloat(t, "reluMask");
  Tensor out = Tensor::empty(t.backend(), DType::Float32, t.shape());
  const float* p = t.dataAs<float>();
  float* po = out.dataAs<float>();
  int64_t i = 0;
  forEachOffset(t.shape(), t.strides(), t.offset(), [&](int64_t pos) {
    po[i++] = p[pos] > 0.0f ? 1.0f : 0.0f;
  });
  return out;
}

Tensor linearForward(const Tensor& x, const Tensor& w, const Tensor& b) {
  requireFloat(x, "linear");
  requireFloat(w, "linear");
  requireFloat(b, "linear");
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.shape()[1] != w.shape()[1] ||
      b.shape()[0] != w.shape()[0])
    raise(ErrorCode::ShapeMismatch, "linear x" + shapeToString(x.shape()) + " w" +
                                        shapeToString(w.shape()) + " b" + shapeToString(b.shape()));
  Tensor y = matmul(x, w.transpose2d());
  return add(y, b);
}

LinearGrads linearBackward(const Tensor& upstream, const Tensor& x, const Tensor& w) {
  int64_t batch = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  LinearGrads g;
  g.dx = matmul(upstream, w);
  // per-sample outer products, then a pairwise tree over the batch axis
  Tensor perSample = Tensor::empty(x.backend(), DType::Float32, {batch, out, in});
  {
    Tensor upC = toContiguous(upstream);
    Tensor xC = toContiguous(x);
    const float* pu = upC.dataAs<float>();
    const float* px = xC.dataAs<float>();
    float* pt = perSample.dataAs<float>();
    for (int64_t s = 0; s < batch; ++s) {
      const float* urow = pu + s * out;
      const float* xrow = px + s * in;
      float* trow = pt + s * out * in;
      for (int64_t j = 0; j < out; ++j)
        for (int64_t k = 0; k < in; ++k) trow[j * in + k] = urow[j] * xrow[k];
    }
  }
  g.dw = pairwiseSumAxis0(perSample);
  g.db = pairwiseSumAxis0(toContiguous(upstream));
  return g;
}

namespace {

void checkConvShapes(const Tensor& x, const Tensor& w, const Tensor& bias, ConvSpec spec) {
  if (x.rank() != 4 || w.rank() != 4 || x.shape()[1] != w.shape()[1])
    raise(ErrorCode::ShapeMismatch,
          "conv2d x" + shapeToString(x.shape()) + " w" + shapeToString(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != w.shape()[0]))
    raise(ErrorCode::ShapeMismatch, "conv2d bias" + shapeToString(bias.shape()));
  if (spec.stride < 1) raise(ErrorCode::InvalidConfig, "conv2d stride must be >= 1");
  if (spec.padding < 0) raise(ErrorCode::InvalidConfig, "conv2d padding must be >= 0");
  if (x.shape()[2] + 2 * spec.padding < w.shape()[2] || x.shape()[3] + 2 * spec.padding < w.shape()[3])
    raise(ErrorCode::ShapeMismatch, "conv2d kernel larger than padded input");
}

}  // namespace

Tensor conv2dForward(const Tensor& x, const Tensor& w, const Tensor& bias, ConvSpec spec) {
  requireFloat(x, "conv2d");
  requireFloat(w, "conv2d");
  checkConvShapes(x, w, bias, spec);
  int64_t batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  int64_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  int64_t oh = (h + 2 * spec.padding - kh) / spec.stride + 1;
  int64_t ow = (wd + 2 * spec.padding - kw) / spec.stride + 1;
  Tensor xc = toContiguous(x);
  Tensor wc = toContiguous(w);
  Tensor out = Tensor::empty(x.backend(), DType::Float32, {batch, cout, oh, ow});
  const float* px = xc.dataAs<float>();
  const float* pw = wc.dataAs<float>();
  const float* pb = bias.defined() ? toContiguous(bias).dataAs<float>() : nullptr;
  float* po = out.dataAs<float>();
  for (int64_t s = 0; s < batch; ++s) {
    const float* xs = px + s * cin * h * wd;
    float* os = po + s * cout * oh * ow;
    for (int64_t co = 0; co < cout; ++co) {
      const float* wco = pw + co * cin * kh * kw;
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xo = 0; xo < ow; ++xo) {
          float acc = 0.0f;
          for (int64_t ci = 0; ci < cin; ++ci) {
            const float* xci = xs + ci * h * wd;
            const float* wci = wco + ci * kh * kw;
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t iy = y * spec.stride - spec.padding + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t ix = xo * spec.stride - spec.padding + kx;
                if (ix < 0 || ix >= wd) continue;
                acc += xci[iy * wd + ix] * wci[ky * kw + kx];
              }
            }
          }
          if (pb) acc += pb[co];
          os[(co * oh + y) * ow + xo] = acc;
        }
      }
    }
  }
  return out;
}

ConvGrads conv2dBackward(const Tensor& upstream, const Tensor& x, const Tensor& w, bool hasBias,
                         ConvSpec spec) {
  int64_t batch = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  int64_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  int64_t oh = upstream.shape()[2], ow = upstream.shape()[3];
  Tensor upC = toContiguous(upstream);
  Tensor xc = toContiguous(x);
  Tensor wc = toContiguous(w);
  const float* pu = upC.dataAs<float>();
  const float* px = xc.dataAs<float>();
  const float* pw = wc.dataAs<float>();

  ConvGrads g;
  g.dx = Tensor::zeros(x.backend(), DType::Float32, x.shape());
  float* pdx = g.dx.dataAs<float>();
  Tensor dwPerSample = Tensor::zeros(x.backend(), DType::Float32, {batch, cout, cin, kh, kw});
  float* pdw = dwPerSample.dataAs<float>();
  Tensor dbPerSample;
  float* pdb = nullptr;
  if (hasBias) {
    dbPerSample = Tensor::zeros(x.backend(), DType::Float32, {batch, cout});
    pdb = dbPerSample.dataAs<float>();
  }

  for (int64_t s = 0; s < batch; ++s) {
    const float* us = pu + s * cout * oh * ow;
    const float* xs = px + s * cin * h * wd;
    float* dxs = pdx + s * cin * h * wd;
    float* dws = pdw + s * cout * cin * kh * kw;
    for (int64_t co = 0; co < cout; ++co) {
      const float* uco = us + co * oh * ow;
      const float* wco = pw + co * cin * kh * kw;
      float* dwco = dws + co * cin * kh * kw;
      if (pdb) {
        float acc = 0.0f;
        for (int64_t i = 0; i < oh * ow; ++i) acc += uco[i];
        pdb[s * cout + co] = acc;
      }
      for (int64_t y = 0; y < oh; ++y) {
        for (int64_t xo = 0; xo < ow; ++xo) {
          float uv = uco[y * ow + xo];
          for (int64_t ci = 0; ci < cin; ++ci) {
            const float* xci = xs + ci * h * wd;
            float* dxci = dxs + ci * h * wd;
            const float* wci = wco + ci * kh * kw;
            float* dwci = dwco + ci * kh * kw;
            for (int64_t ky = 0; ky < kh; ++ky) {
              int64_t iy = y * spec.stride - spec.padding + ky;
              if (iy < 0 || iy >= h) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                int64_t ix = xo * spec.stride - spec.padding + kx;
                if (ix < 0 || ix >= wd) continue;
                dxci[iy * wd + ix] += uv * wci[ky * kw + kx];
                dwci[ky * kw + kx] += uv * xci[iy * wd + ix];
              }
            }
          }
        }
      }
    }
  }
  g.dw = pairwiseSumAxis0(dwPerSample);
  if (hasBias) g.db = pairwiseSumAxis0(dbPerSample);
  return g;
}

SoftmaxCEForward softmaxCrossEntropyForward(const Tensor& logits, const Tensor& labels) {
  requireFloat(logits, "softmaxCrossEntropy");
  if (logits.rank() != 2) raise(ErrorCode::ShapeMismatch, "logits must be [B,C]");
  if (labels.dtype() != DType::Int32 || labels.rank() != 1 ||
      labels.shape()[0] != logits.shape()[0])
    raise(ErrorCode::ShapeMismatch, "labels must be int32 [B]");
  int64_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (batch == 0 || classes == 0) raise(ErrorCode::ShapeMismatch, "empty logits");
  Tensor lc = toContiguous(logits);
  Tensor labc = toContiguous(labels);
  const float* pl = lc.dataAs<float>();
  const int32_t* py = labc.dataAs<int32_t>();
  SoftmaxCEForward r;
  r.softmax = Tensor::empty(logits.backend(), DType::Float32, {batch, classes});
  float* ps = r.softmax.dataAs<float>();
  float lossAcc = 0.0f;
  for (int64_t b = 0; b < batch; ++b) {
    int32_t label = py[b];
    if (label < 0 || label >= classes)
      raise(ErrorCode::LabelOutOfRange,
            "label " + std::to_string(label) + " with " + std::to_string(classes) + " classes");
    const float* row = pl + b * classes;
    float* srow = ps + b * classes;
    float m = row[0];
    for (int64_t c = 1; c < classes; ++c)
      if (row[c] > m) m = row[c];
    float denom = 0.0f;
    for (int64_t c = 0; c < classes; ++c) {
      srow[c] = std::exp(row[c] - m);
      denom += srow[c];
    }
    for (int64_t c = 0; c < classes; ++c) srow[c] /= denom;
    lossAcc += std::log(denom) - (row[label] - m);
  }
  r.loss = Tensor::empty(logits.backend(), DType::Float32, {});
  r.loss.dataAs<float>()[0] = lossAcc * (1.0f / static_cast<float>(batch));
  return r;
}

Tensor softmaxCrossEntropyBackward(const Tensor& upstream, const Tensor& softmax, const Tensor& labels) {
  int64_t batch = softmax.shape()[0], classes = softmax.shape()[1];
  float up = upstream.scalar();
  float invB = 1.0f / static_cast<float>(batch);
  Tensor out = Tensor::empty(softmax.backend(), DType::Float32, {batch, classes});
  const float* ps = toContiguous(softmax).dataAs<float>();
  const int32_t* py = toContiguous(labels).dataAs<int32_t>();
  float* po = out.dataAs<float>();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < classes; ++c) {
      float diff = ps[b * classes + c] - (c == py[b] ? 1.0f : 0.0f);
      po[b * classes + c] = diff * invB * up;
    }
  }
  return out;
}

}  // namespace dmlt
