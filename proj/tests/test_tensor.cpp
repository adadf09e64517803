#include <doctest.h>

#include <cstring>

#include "dmlt/kernels.hpp"
#include "dmlt/rng.hpp"
#include "dmlt/slice.hpp"
#include "dmlt/tensor.hpp"
#include "dmlt/tidy.hpp"

using namespace dmlt;

namespace {

Tensor floats(Backend& b, const Nested& data) { return tensorFromNested(b, data, DType::Float32); }

// Independent slice oracle: per-axis index lists built by direct simulation,
// then a cartesian gather in row-major order.
struct OracleAxis {
  bool dropped = false;     // Index selector
  bool inserted = false;    // NewAxis
  std::vector<int64_t> indices;
};

std::vector<OracleAxis> oracleAxes(const Shape& shape, const SliceSpec& spec) {
  // expand ellipsis
  int64_t consuming = 0;
  for (const SliceItem& item : spec)
    if (!std::holds_alternative<NewAxis>(item) && !std::holds_alternative<Ellipsis>(item)) ++consuming;
  std::vector<SliceItem> items;
  bool sawEllipsis = false;
  for (const SliceItem& item : spec) {
    if (std::holds_alternative<Ellipsis>(item)) {
      sawEllipsis = true;
      for (int64_t i = 0; i < static_cast<int64_t>(shape.size()) - consuming; ++i)
        items.push_back(all());
    } else {
      items.push_back(item);
    }
  }
  if (!sawEllipsis)
    for (int64_t i = 0; i < static_cast<int64_t>(shape.size()) - consuming; ++i)
      items.push_back(all());

  std::vector<OracleAxis> axes;
  size_t axis = 0;
  for (const SliceItem& item : items) {
    OracleAxis oa;
    if (std::holds_alternative<NewAxis>(item)) {
      oa.inserted = true;
      oa.indices = {0};
      axes.push_back(oa);
      continue;
    }
    int64_t n = shape[axis++];
    if (const Index* ix = std::get_if<Index>(&item)) {
      int64_t i = ix->i < 0 ? ix->i + n : ix->i;
      oa.dropped = true;
      oa.indices = {i};
    } else {
      const Range& r = std::get<Range>(item);
      int64_t step = r.step.value_or(1);
      if (step > 0) {
        int64_t start = r.start.value_or(0);
        int64_t stop = r.stop.value_or(n);
        if (start < 0) start += n;
        if (stop < 0) stop += n;
        start = std::max<int64_t>(0, std::min(start, n));
        stop = std::max<int64_t>(0, std::min(stop, n));
        for (int64_t i = start; i < stop; i += step) oa.indices.push_back(i);
      } else {
        int64_t start = r.start ? *r.start : n - 1;
        bool hasStop = r.stop.has_value();
        int64_t stop = hasStop ? *r.stop : 0;
        if (start < 0) start += n;
        if (hasStop && stop < 0) stop += n;
        start = std::max<int64_t>(-1, std::min(start, n - 1));
        if (hasStop) stop = std::max<int64_t>(-1, std::min(stop, n - 1));
        int64_t limit = hasStop ? stop : -1;
        for (int64_t i = start; i > limit; i += step) oa.indices.push_back(i);
      }
    }
    axes.push_back(oa);
  }
  return axes;
}

std::vector<double> oracleGather(const Tensor& t, const SliceSpec& spec, Shape& expectedShape) {
  std::vector<OracleAxis> axes = oracleAxes(t.shape(), spec);
  expectedShape.clear();
  for (const OracleAxis& oa : axes)
    if (!oa.dropped) expectedShape.push_back(static_cast<int64_t>(oa.indices.size()));
  std::vector<double> out;
  // odometer over all axes (dropped axes contribute their single index)
  std::vector<size_t> pos(axes.size(), 0);
  int64_t total = 1;
  for (const OracleAxis& oa : axes) total *= static_cast<int64_t>(oa.indices.size());
  for (int64_t flat = 0; flat < total; ++flat) {
    std::vector<int64_t> index;
    for (size_t a = 0; a < axes.size(); ++a)
      if (!axes[a].inserted) index.push_back(axes[a].indices[pos[a]]);
    out.push_back(t.item(index));
    for (int64_t a = static_cast<int64_t>(axes.size()) - 1; a >= 0; --a) {
      if (++pos[a] < axes[a].indices.size()) break;
      pos[a] = 0;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("tensor: from nested rows") {
  Backend b;
  Tensor t = floats(b, {{1, 2}, {3, 4}});
  CHECK(t.shape() == Shape{2, 2});
  CHECK(t.toVector<float>() == std::vector<float>{1, 2, 3, 4});
  CHECK(t.contiguous());
}

TEST_CASE("tensor: from nested empty") {
  Backend b;
  Tensor t = tensorFromNested(b, Nested(std::initializer_list<Nested>{}), DType::Float32);
  CHECK(t.shape() == Shape{0});
  CHECK(t.numel() == 0);
}

TEST_CASE("tensor: ragged input rejected") {
  Backend b;
  CHECK_THROWS_WITH_AS(floats(b, {{1, 2}, {3}}), doctest::Contains("RaggedInput"), Error);
}

TEST_CASE("tensor: dtype overflow rejected, not wrapped") {
  Backend b;
  CHECK_THROWS_AS(tensorFromNested(b, {{1, 300}}, DType::UInt8), Error);
  try {
    tensorFromNested(b, {{1, 300}}, DType::UInt8);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DTypeOverflow);
  }
  CHECK_THROWS_AS(tensorFromNested(b, {1.5}, DType::Int32), Error);
  CHECK_THROWS_AS(tensorFromNested(b, {2}, DType::Bool), Error);
  Tensor ok = tensorFromNested(b, {{0, 255}}, DType::UInt8);
  CHECK(ok.toVector<int32_t>() == std::vector<int32_t>{0, 255});
}

TEST_CASE("tensor: fresh tensors are contiguous row-major") {
  Backend b;
  Tensor t = Tensor::empty(b, DType::Float32, {2, 3, 4});
  CHECK(t.strides() == std::vector<int64_t>{12, 4, 1});
  CHECK(t.offset() == 0);
}

TEST_CASE("slice: range plus index view") {
  Backend b;
  // shape [3,4] values 0..11; (1:3, 2) selects elements (1,2) and (2,2)
  Tensor t = floats(b, {{0, 1, 2, 3}, {4, 5, 6, 7}, {8, 9, 10, 11}});
  Tensor v = slice(t, {range(1, 3), Index{2}});
  CHECK(v.shape() == Shape{2});
  CHECK(v.buffer() == t.buffer());  // view, no copy
  CHECK(v.toVector<float>() == std::vector<float>{6, 10});
}

TEST_CASE("slice: full reverse") {
  Backend b;
  Tensor t = floats(b, {0, 1, 2, 3, 4});
  Tensor v = slice(t, {range(std::nullopt, std::nullopt, -1)});
  CHECK(v.shape() == Shape{5});
  for (int64_t k = 0; k < 5; ++k) CHECK(v.item({k}) == 4 - k);
}

TEST_CASE("slice: ellipsis identity") {
  Backend b;
  Tensor t = floats(b, {{1, 2}, {3, 4}});
  Tensor v = slice(t, {Ellipsis{}});
  CHECK(v.shape() == t.shape());
  CHECK(v.strides() == t.strides());
  CHECK(v.buffer() == t.buffer());
}

TEST_CASE("slice: newaxis and negative index") {
  Backend b;
  Tensor t = floats(b, {{1, 2}, {3, 4}});
  Tensor v = slice(t, {NewAxis{}, Index{-1}});
  CHECK(v.shape() == Shape{1, 2});
  CHECK(v.toVector<float>() == std::vector<float>{3, 4});
}

TEST_CASE("slice: errors") {
  Backend b;
  Tensor t = floats(b, {1, 2, 3});
  CHECK_THROWS_WITH_AS(slice(t, {Index{3}}), doctest::Contains("IndexOutOfBounds"), Error);
  CHECK_THROWS_WITH_AS(slice(t, {Index{-4}}), doctest::Contains("IndexOutOfBounds"), Error);
  CHECK_THROWS_WITH_AS(slice(t, {range(0, 2, 0)}), doctest::Contains("ZeroStep"), Error);
  CHECK_THROWS_WITH_AS(slice(t, {Ellipsis{}, Ellipsis{}}), doctest::Contains("InvalidSliceSpec"), Error);
  CHECK_THROWS_WITH_AS(slice(t, {Index{0}, Index{0}}), doctest::Contains("InvalidSliceSpec"), Error);
}

TEST_CASE("slice: property vs brute-force gather oracle") {
  Backend b;
  Rng rng(7);
  int cases = 0;
  while (cases < 1200) {
    int64_t rank = rng.below(4) + 1;
    Shape shape;
    int64_t numel = 1;
    for (int64_t d = 0; d < rank; ++d) {
      shape.push_back(rng.below(6));  // includes zero extents
      numel *= shape.back();
    }
    Tensor t = Tensor::empty(b, DType::Float32, shape);
    float* p = t.dataAs<float>();
    for (int64_t i = 0; i < numel; ++i) p[i] = static_cast<float>(i) + 0.25f;

    // choose how many axes the spec consumes and where an optional ellipsis
    // splits them; items after the ellipsis select from the trailing axes
    int64_t consuming = rng.below(static_cast<uint32_t>(rank + 1));
    bool useEllipsis = rng.below(3) == 0;
    int64_t ellipsisAt = useEllipsis ? rng.below(static_cast<uint32_t>(consuming + 1)) : -1;
    std::vector<int64_t> targetAxes;
    for (int64_t s = 0; s < consuming; ++s) {
      if (useEllipsis && s >= ellipsisAt)
        targetAxes.push_back(rank - (consuming - s));
      else
        targetAxes.push_back(s);
    }

    SliceSpec spec;
    bool valid = true;
    for (int64_t s = 0; s <= consuming && valid; ++s) {
      if (useEllipsis && s == ellipsisAt) spec.push_back(Ellipsis{});
      if (rng.below(5) == 0) spec.push_back(NewAxis{});
      if (s == consuming) break;
      int64_t n = shape[targetAxes[static_cast<size_t>(s)]];
      if (rng.below(3) == 0) {
        if (n == 0) { valid = false; break; }  // any Index would be out of bounds
        int64_t i = static_cast<int64_t>(rng.below(static_cast<uint32_t>(2 * n))) - n;
        spec.push_back(Index{i});
      } else {
        auto maybe = [&](int64_t lo, int64_t hi) -> std::optional<int64_t> {
          if (rng.below(3) == 0) return std::nullopt;
          return lo + static_cast<int64_t>(rng.below(static_cast<uint32_t>(hi - lo + 1)));
        };
        int64_t step = static_cast<int64_t>(rng.below(5)) - 2;
        if (step == 0) step = 1;
        spec.push_back(Range{maybe(-n - 1, n + 1), maybe(-n - 1, n + 1),
                             rng.below(2) ? std::optional<int64_t>(step) : std::nullopt});
      }
    }
    if (!valid) continue;

    Shape expectedShape;
    std::vector<double> expected = oracleGather(t, spec, expectedShape);
    Tensor v = slice(t, spec);
    REQUIRE(v.shape() == expectedShape);
    std::vector<float> got = toContiguous(v).toVector<float>();
    REQUIRE(got.size() == expected.size());
    for (size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == static_cast<float>(expected[i]));
    ++cases;
  }
}

TEST_CASE("kernels: matmul identity and oracle") {
  Backend b;
  Tensor eye = floats(b, {{1, 0}, {0, 1}});
  Tensor m = floats(b, {{5, 6}, {7, 8}});
  CHECK(matmul(eye, m).toVector<float>() == std::vector<float>{5, 6, 7, 8});

  Tensor a = floats(b, {{1, 2}, {3, 4}});
  Tensor c = floats(b, {{5}, {6}});
  CHECK(matmul(a, c).toVector<float>() == std::vector<float>{17, 39});

  Tensor bad = floats(b, {{1, 2, 3}, {4, 5, 6}});  // [2,3] x [2,3]: inner extents differ
  CHECK_THROWS_WITH_AS(matmul(bad, bad), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("kernels: matmul random bit-exact vs naive triple loop") {
  Backend b;
  Rng rng(11);
  for (int iter = 0; iter < 60; ++iter) {
    int64_t m = rng.below(8) + 1, k = rng.below(8) + 1, n = rng.below(8) + 1;
    Tensor a = Tensor::empty(b, DType::Float32, {m, k});
    Tensor c = Tensor::empty(b, DType::Float32, {k, n});
    for (int64_t i = 0; i < m * k; ++i) a.dataAs<float>()[i] = rng.uniform(-2, 2);
    for (int64_t i = 0; i < k * n; ++i) c.dataAs<float>()[i] = rng.uniform(-2, 2);
    Tensor out = matmul(a, c);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (int64_t kk = 0; kk < k; ++kk)
          acc += a.dataAs<float>()[i * k + kk] * c.dataAs<float>()[kk * n + j];
        REQUIRE(out.dataAs<float>()[i * n + j] == acc);  // same summation order, bit-exact
      }
    }
  }
}

TEST_CASE("kernels: elementwise basics") {
  Backend b;
  Tensor t = floats(b, {-1, 0, 2});
  CHECK(relu(t).toVector<float>() == std::vector<float>{0, 0, 2});
  CHECK(neg(t).toVector<float>() == std::vector<float>{1, 0, -2});

  Tensor m = floats(b, {{1, 2}, {3, 4}});
  CHECK(sumAxis(m, 0).toVector<float>() == std::vector<float>{4, 6});
  CHECK(sumAxis(m, 1).toVector<float>() == std::vector<float>{3, 7});
  CHECK(sumAll(m).scalar() == 10.0f);
  CHECK(maxAll(m).scalar() == 4.0f);
  CHECK(maxAxis(m, 0).toVector<float>() == std::vector<float>{3, 4});
}

TEST_CASE("kernels: sub div exp log and scalar variants") {
  Backend b;
  Tensor x = floats(b, {1, 2, 4});
  Tensor y = floats(b, {4, 2, 1});
  CHECK(sub(x, y).toVector<float>() == std::vector<float>{-3, 0, 3});
  CHECK(div(x, y).toVector<float>() == std::vector<float>{0.25f, 1.0f, 4.0f});
  CHECK(mulScalar(x, 2.0f).toVector<float>() == std::vector<float>{2, 4, 8});
  CHECK(addScalar(x, -1.0f).toVector<float>() == std::vector<float>{0, 1, 3});

  Tensor e = exp(floats(b, {0, 1}));
  CHECK(e.toVector<float>()[0] == 1.0f);
  CHECK(e.toVector<float>()[1] == doctest::Approx(2.7182818f));
  Tensor l = log(e);
  CHECK(l.toVector<float>()[0] == doctest::Approx(0.0f));
  CHECK(l.toVector<float>()[1] == doctest::Approx(1.0f));

  Tensor u8 = tensorFromNested(b, {{0, 255}}, DType::UInt8);
  CHECK(normalizeU8(u8).toVector<float>() == std::vector<float>{0.0f, 1.0f});
  CHECK(castTo(u8, DType::Float32).toVector<float>() == std::vector<float>{0.0f, 255.0f});
}

TEST_CASE("kernels: broadcast add over leading axis") {
  Backend b;
  Tensor a = floats(b, {{1, 2, 3}, {4, 5, 6}});
  Tensor v = floats(b, {10, 20, 30});
  CHECK(add(a, v).toVector<float>() == std::vector<float>{11, 22, 33, 14, 25, 36});
  Tensor bad = floats(b, {1, 2});
  CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("kernels: broadcast property vs explicit tiling oracle") {
  Backend b;
  Rng rng(13);
  for (int iter = 0; iter < 300; ++iter) {
    int64_t rank = rng.below(3) + 1;
    Shape out;
    for (int64_t d = 0; d < rank; ++d) out.push_back(rng.below(4) + 1);
    auto makeOperand = [&]() {
      int64_t r = rng.below(static_cast<uint32_t>(rank + 1));
      Shape s;
      for (int64_t d = rank - r; d < rank; ++d) s.push_back(rng.below(2) ? out[d] : 1);
      Tensor t = Tensor::empty(b, DType::Float32, s);
      for (int64_t i = 0; i < t.numel(); ++i) t.dataAs<float>()[i] = rng.uniform(-3, 3);
      return t;
    };
    Tensor x = makeOperand();
    Tensor y = makeOperand();
    Shape resultShape = broadcastShape(x.shape(), y.shape());

    // oracle: explicitly tile both operands, then do the flat elementwise op
    auto tileTo = [&](const Tensor& t, const Shape& target) {
      Tensor full = Tensor::empty(b, DType::Float32, target);
      int64_t n = full.numel();
      std::vector<int64_t> idx(target.size(), 0);
      for (int64_t flat = 0; flat < n; ++flat) {
        std::vector<int64_t> srcIdx;
        size_t shift = target.size() - t.shape().size();
        for (size_t d = shift; d < target.size(); ++d)
          srcIdx.push_back(t.shape()[d - shift] == 1 ? 0 : idx[d]);
        full.dataAs<float>()[flat] = static_cast<float>(t.item(srcIdx));
        for (int64_t d = static_cast<int64_t>(target.size()) - 1; d >= 0; --d) {
          if (++idx[static_cast<size_t>(d)] < target[static_cast<size_t>(d)]) break;
          idx[static_cast<size_t>(d)] = 0;
        }
      }
      return full;
    };
    Tensor tx = tileTo(x, resultShape), ty = tileTo(y, resultShape);
    std::vector<float> gotAdd = add(x, y).toVector<float>();
    std::vector<float> gotMul = mul(x, y).toVector<float>();
    for (int64_t i = 0; i < tx.numel(); ++i) {
      REQUIRE(gotAdd[static_cast<size_t>(i)] == tx.dataAs<float>()[i] + ty.dataAs<float>()[i]);
      REQUIRE(gotMul[static_cast<size_t>(i)] == tx.dataAs<float>()[i] * ty.dataAs<float>()[i]);
    }
  }
}

TEST_CASE("kernels: toContiguous view materialization") {
  Backend b;
  Tensor t = floats(b, {1, 2, 3});
  CHECK(toContiguous(t).buffer() == t.buffer());  // already contiguous: same handle

  Tensor rev = slice(t, {range(std::nullopt, std::nullopt, -1)});
  Tensor mat = toContiguous(rev);
  CHECK(mat.buffer() != t.buffer());
  CHECK(mat.toVector<float>() == std::vector<float>{3, 2, 1});

  Tensor m = floats(b, {{1, 2}, {3, 4}});
  Tensor col = slice(m, {all(), Index{1}});
  Tensor colMat = toContiguous(col);
  CHECK(colMat.buffer() != m.buffer());
  CHECK(colMat.toVector<float>() == std::vector<float>{2, 4});
}

TEST_CASE("kernels: determinism, repeated evaluation is bit-identical") {
  Backend b;
  Rng rng(3);
  Tensor a = Tensor::empty(b, DType::Float32, {5, 7});
  Tensor c = Tensor::empty(b, DType::Float32, {7, 3});
  for (int64_t i = 0; i < a.numel(); ++i) a.dataAs<float>()[i] = rng.uniform(-1, 1);
  for (int64_t i = 0; i < c.numel(); ++i) c.dataAs<float>()[i] = rng.uniform(-1, 1);
  CHECK(matmul(a, c).toVector<float>() == matmul(a, c).toVector<float>());
  CHECK(exp(a).toVector<float>() == exp(a).toVector<float>());
  CHECK(sumAxis(a, 1).toVector<float>() == sumAxis(a, 1).toVector<float>());
}

TEST_CASE("kernels: pairwise tree sum matches shard recombination bit-exactly") {
  Backend b;
  Rng rng(17);
  for (int64_t batch : {64, 32, 16, 8}) {
    Tensor t = Tensor::empty(b, DType::Float32, {batch, 5});
    for (int64_t i = 0; i < t.numel(); ++i) t.dataAs<float>()[i] = rng.uniform(-1, 1);
    Tensor whole = pairwiseSumAxis0(t);
    for (int64_t parts : {2, 4, 8}) {
      if (parts > batch) continue;
      int64_t share = batch / parts;
      std::vector<Tensor> partial;
      for (int64_t k = 0; k < parts; ++k)
        partial.push_back(pairwiseSumAxis0(toContiguous(slice(t, {range(k * share, (k + 1) * share)}))));
      for (int64_t h = 1; h < parts; h *= 2)
        for (int64_t i = 0; i + h < parts; i += 2 * h) partial[i] = add(partial[i], partial[i + h]);
      CHECK(partial[0].toVector<float>() == whole.toVector<float>());
    }
  }
}

TEST_CASE("tidy: releases all but the returned tensor") {
  Backend b;
  size_t before = b.liveBufferCount();
  Tensor kept = tidy(b, [&] {
    Tensor t1 = Tensor::zeros(b, DType::Float32, {4});
    Tensor t2 = Tensor::zeros(b, DType::Float32, {4});
    Tensor t3 = Tensor::zeros(b, DType::Float32, {4});
    Tensor t4 = Tensor::zeros(b, DType::Float32, {4});
    Tensor t5 = Tensor::zeros(b, DType::Float32, {4});
    return t3;
  });
  CHECK(b.liveBufferCount() == before + 1);
  CHECK(kept.toVector<float>() == std::vector<float>{0, 0, 0, 0});
}

TEST_CASE("tidy: use after release is a defined error") {
  Backend b;
  Tensor leaked;
  tidy(b, [&] { leaked = Tensor::zeros(b, DType::Float32, {4}); });
  CHECK_THROWS_WITH_AS(leaked.toVector<float>(), doctest::Contains("UseAfterRelease"), Error);
}

TEST_CASE("tidy: nested retention re-parents to the enclosing scope") {
  Backend b;
  size_t before = b.liveBufferCount();
  tidy(b, [&] {
    Tensor inner = tidy(b, [&] {
      Tensor keep = Tensor::zeros(b, DType::Float32, {2});
      Tensor drop = Tensor::zeros(b, DType::Float32, {2});
      return keep;
    });
    CHECK(b.liveBufferCount() == before + 1);
    CHECK_NOTHROW(inner.toVector<float>());
  });
  CHECK(b.liveBufferCount() == before);  // outer retained nothing
}

TEST_CASE("tidy: scripted allocation trace accounting property") {
  Backend b;
  Rng rng(23);
  for (int iter = 0; iter < 50; ++iter) {
    size_t before = b.liveBufferCount();
    size_t retainedCount = 0;
    std::vector<Tensor> keep = tidy(b, [&] {
      std::vector<Tensor> all;
      for (int i = 0; i < 12; ++i) all.push_back(Tensor::zeros(b, DType::Float32, {2}));
      std::vector<Tensor> chosen;
      for (const Tensor& t : all)
        if (rng.below(3) == 0) chosen.push_back(t);
      retainedCount = chosen.size();
      return chosen;
    });
    CHECK(b.liveBufferCount() == before + retainedCount);
    tidy(b, [&] { return 0; });  // no-op scope leaves the count unchanged
    CHECK(b.liveBufferCount() == before + retainedCount);
    // release by retaining nothing in a wrapping scope is not possible once
    // re-parented to the root, so this test tolerates monotone growth only
    // within its own allocations.
  }
}

TEST_CASE("tidy: views share buffers, retaining one keeps the buffer") {
  Backend b;
  size_t before = b.liveBufferCount();
  Tensor view = tidy(b, [&] {
    Tensor base = Tensor::zeros(b, DType::Float32, {4, 4});
    return slice(base, {Index{1}});
  });
  CHECK(b.liveBufferCount() == before + 1);
  CHECK_NOTHROW(view.toVector<float>());
}
