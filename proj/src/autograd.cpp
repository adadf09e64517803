#include "dmlt/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <map>
#include <queue>
#include <set>

#include "dmlt/kernels.hpp"

namespace dmlt {

namespace {

std::atomic<uint64_t> nodeSeq{1};

}  // namespace

Variable::Variable(Tensor data, bool requiresGrad) : impl_(std::make_shared<Impl>()) {
  impl_->data = std::move(data);
  impl_->requiresGrad = requiresGrad;
}

const Tensor& Variable::data() const { return impl_->data; }
void Variable::setData(Tensor t) { impl_->data = std::move(t); }
const std::optional<Tensor>& Variable::grad() const { return impl_->grad; }
void Variable::setGrad(Tensor g) {
  if (g.shape() != impl_->data.shape() || g.dtype() != impl_->data.dtype())
    raise(ErrorCode::ShapeMismatch, "grad shape/dtype must match data");
  impl_->grad = std::move(g);
}
void Variable::clearGrad() { impl_->grad.reset(); }
void Variable::retainGrad() { impl_->retainGrad = true; }
bool Variable::requiresGrad() const { return impl_->requiresGrad; }
std::shared_ptr<FunctionNode> Variable::creator() const { return impl_->creator; }
int64_t Variable::generation() const { return impl_->creator ? impl_->creator->generation : 0; }

Variable makeFromNode(Tensor data, std::shared_ptr<FunctionNode> node) {
  Variable v(std::move(data), true);
  node->generation = 0;
  for (const Variable& input : node->inputs)
    node->generation = std::max(node->generation, input.generation());
  node->generation += 1;
  node->seq = nodeSeq.fetch_add(1);
  node->output = v.impl_;
  v.impl_->creator = std::move(node);
  return v;
}

namespace {

bool anyRequiresGrad(std::initializer_list<const Variable*> vars) {
  for (const Variable* v : vars)
    if ((*v).requiresGrad()) return true;
  return false;
}

Variable record(const char* kind, Tensor out, std::vector<Variable> inputs,
                std::function<std::vector<std::optional<Tensor>>(const Tensor&)> backwardFn) {
  auto node = std::make_shared<FunctionNode>();
  node->opKind = kind;
  node->inputs = std::move(inputs);
  node->backwardFn = std::move(backwardFn);
  return makeFromNode(std::move(out), std::move(node));
}

// Sums `t` down to `shape` reversing broadcast (leading axes, extent-1 axes).
Tensor sumToShape(const Tensor& t, const Shape& shape) {
  Tensor cur = t;
  while (cur.rank() > static_cast<int64_t>(shape.size())) cur = sumAxis(cur, 0);
  for (int64_t d = 0; d < cur.rank(); ++d) {
    if (shape[d] == 1 && cur.shape()[d] != 1) {
      Tensor reduced = sumAxis(cur, d);
      Shape keep = cur.shape();
      keep[d] = 1;
      cur = reduced.reshape(keep);
    }
  }
  return cur;
}

}  // namespace

Variable add(const Variable& a, const Variable& b) {
  Tensor out = add(a.data(), b.data());
  if (!anyRequiresGrad({&a, &b})) return Variable(std::move(out));
  Shape sa = a.data().shape(), sb = b.data().shape();
  return record("add", std::move(out), {a, b}, [sa, sb](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(2);
    grads[0] = sumToShape(up, sa);
    grads[1] = sumToShape(up, sb);
    return grads;
  });
}

Variable mul(const Variable& a, const Variable& b) {
  Tensor out = mul(a.data(), b.data());
  if (!anyRequiresGrad({&a, &b})) return Variable(std::move(out));
  Tensor da = a.data(), db = b.data();
  return record("mul", std::move(out), {a, b}, [da, db](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(2);
    grads[0] = sumToShape(mul(up, db), da.shape());
    grads[1] = sumToShape(mul(up, da), db.shape());
    return grads;
  });
}

Variable matmul(const Variable& a, const Variable& b) {
  Tensor out = matmul(a.data(), b.data());
  if (!anyRequiresGrad({&a, &b})) return Variable(std::move(out));
  Tensor da = a.data(), db = b.data();
  return record("matmul", std::move(out), {a, b}, [da, db](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(2);
    grads[0] = matmul(up, db.transpose2d());
    grads[1] = matmul(da.transpose2d(), up);
    return grads;
  });
}

Variable relu(const Variable& x) {
  Tensor out = relu(x.data());
  if (!x.requiresGrad()) return Variable(std::move(out));
  Tensor saved = x.data();
  return record("relu", std::move(out), {x}, [saved](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(1);
    grads[0] = mul(up, reluMask(saved));
    return grads;
  });
}

Variable reshape(const Variable& x, Shape shape) {
  Tensor out = x.data().reshape(std::move(shape));
  if (!x.requiresGrad()) return Variable(std::move(out));
  Shape orig = x.data().shape();
  return record("reshape", std::move(out), {x}, [orig](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(1);
    grads[0] = up.reshape(orig);
    return grads;
  });
}

Variable transpose(const Variable& x) {
  Tensor out = x.data().transpose2d();
  if (!x.requiresGrad()) return Variable(std::move(out));
  return record("transpose", std::move(out), {x}, [](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(1);
    grads[0] = toContiguous(up.transpose2d());
    return grads;
  });
}

Variable sum(const Variable& x) {
  Tensor out = sumAll(x.data());
  if (!x.requiresGrad()) return Variable(std::move(out));
  Tensor saved = x.data();
  return record("sum", std::move(out), {x}, [saved](const Tensor& up) {
    std::vector<std::optional<Tensor>> grads(1);
    grads[0] = Tensor::full(saved.backend(), DType::Float32, saved.shape(), up.scalar());
    return grads;
  });
}

Variable linear(const Variable& x, const Variable& weight, const Variable& bias) {
  Tensor out = linearForward(x.data(), weight.data(), bias.data());
  if (!anyRequiresGrad({&x, &weight, &bias})) return Variable(std::move(out));
  Tensor dx = x.data(), dw = weight.data();
  return record("linear", std::move(out), {x, weight, bias}, [dx, dw](const Tensor& up) {
    LinearGrads g = linearBackward(up, dx, dw);
    std::vector<std::optional<Tensor>> grads(3);
    grads[0] = g.dx;
    grads[1] = g.dw;
    grads[2] = g.db;
    return grads;
  });
}

Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias, ConvSpec spec) {
  Tensor biasData = bias.defined() ? bias.data() : Tensor();
  Tensor out = conv2dForward(x.data(), weight.data(), biasData, spec);
  bool needsGrad = x.requiresGrad() || weight.requiresGrad() || (bias.defined() && bias.requiresGrad());
  if (!needsGrad) return Variable(std::move(out));
  Tensor dx = x.data(), dw = weight.data();
  bool hasBias = bias.defined();
  std::vector<Variable> inputs = {x, weight};
  if (hasBias) inputs.push_back(bias);
  return record("conv2d", std::move(out), std::move(inputs), [dx, dw, hasBias, spec](const Tensor& up) {
    ConvGrads g = conv2dBackward(up, dx, dw, hasBias, spec);
    std::vector<std::optional<Tensor>> grads(hasBias ? 3 : 2);
    grads[0] = g.dx;
    grads[1] = g.dw;
    if (hasBias) grads[2] = g.db;
    return grads;
  });
}

Variable softmaxCrossEntropy(const Variable& logits, const Tensor& labels) {
  SoftmaxCEForward fwd = softmaxCrossEntropyForward(logits.data(), labels);
  if (!logits.requiresGrad()) return Variable(std::move(fwd.loss));
  Tensor softmax = fwd.softmax, savedLabels = labels;
  return record("softmax_cross_entropy", std::move(fwd.loss), {logits},
                [softmax, savedLabels](const Tensor& up) {
                  std::vector<std::optional<Tensor>> grads(1);
                  grads[0] = softmaxCrossEntropyBackward(up, softmax, savedLabels);
                  return grads;
                });
}

Deferred<void> Variable::backward() const {
  const Tensor& lossData = impl_->data;
  if (lossData.numel() != 1 || lossData.rank() > 1)
    raise(ErrorCode::NonScalarLoss, "backward needs scalar loss, got " + shapeToString(lossData.shape()));

  std::map<Impl*, Tensor> gradOf;
  std::map<Impl*, std::shared_ptr<Impl>> hold;  // keep impls alive during the pass
  gradOf[impl_.get()] = Tensor::full(lossData.backend(), DType::Float32, lossData.shape(), 1.0);
  hold[impl_.get()] = impl_;

  auto cmp = [](const std::shared_ptr<FunctionNode>& a, const std::shared_ptr<FunctionNode>& b) {
    if (a->generation != b->generation) return a->generation < b->generation;
    return a->seq < b->seq;
  };
  std::priority_queue<std::shared_ptr<FunctionNode>, std::vector<std::shared_ptr<FunctionNode>>,
                      decltype(cmp)>
      ready(cmp);
  std::set<FunctionNode*> seen;
  if (impl_->creator) {
    ready.push(impl_->creator);
    seen.insert(impl_->creator.get());
  }

  int64_t lastGeneration = INT64_MAX;
  while (!ready.empty()) {
    std::shared_ptr<FunctionNode> node = ready.top();
    ready.pop();
    // strictly decreasing generation order over distinct generations
    if (node->generation > lastGeneration)
      raise(ErrorCode::InvalidConfig, "backward visited node out of generation order");
    lastGeneration = node->generation;

    std::shared_ptr<Impl> out = node->output.lock();
    if (!out) continue;  // output dropped, nothing consumes this gradient
    auto gradIt = gradOf.find(out.get());
    if (gradIt == gradOf.end()) continue;
    Tensor upstream = gradIt->second;
    if (out->retainGrad) out->grad = out->grad ? add(*out->grad, upstream) : upstream;
    gradOf.erase(gradIt);
    hold.erase(out.get());

    std::vector<std::optional<Tensor>> grads = node->backwardFn(upstream);
    if (grads.size() != node->inputs.size())
      raise(ErrorCode::InvalidConfig, "backward of " + node->opKind + " returned wrong arity");
    for (size_t i = 0; i < grads.size(); ++i) {
      const Variable& input = node->inputs[i];
      if (!input.requiresGrad() || !grads[i]) continue;
      Impl* key = input.impl();
      auto it = gradOf.find(key);
      if (it == gradOf.end()) {
        gradOf.emplace(key, *grads[i]);
        hold.emplace(key, input.impl_);
      } else {
        it->second = add(it->second, *grads[i]);  // fan-out accumulates
      }
      if (input.creator() && seen.insert(input.creator().get()).second) ready.push(input.creator());
    }
  }

  // whatever gradient remains belongs to leaves; accumulate torch-style
  for (auto& [key, g] : gradOf) {
    std::shared_ptr<Impl> impl = hold[key];
    if (impl->creator) continue;  // non-leaf without retainGrad: dropped
    impl->grad = impl->grad ? add(*impl->grad, g) : g;
  }
  return Deferred<void>();
}

GradCheckReport finiteDifferenceCheck(const std::function<Variable(const Variable&)>& f,
                                      const Variable& x, double h, double tol) {
  Backend& backend = x.data().backend();
  Tensor base = toContiguous(x.data());

  Variable probe(base, true);
  Variable loss = f(probe);
  loss.backward().wait();
  if (!probe.grad()) raise(ErrorCode::MissingGradient, "f does not depend on x");
  std::vector<float> analytic = probe.grad()->toVector<float>();

  int64_t n = base.numel();
  double maxRelErr = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto evalAt = [&](double delta) {
      Tensor shifted = Tensor::empty(backend, DType::Float32, base.shape());
      std::memcpy(shifted.dataAs<float>(), base.dataAs<float>(), static_cast<size_t>(n) * 4);
      shifted.dataAs<float>()[i] = static_cast<float>(base.dataAs<float>()[i] + delta);
      return static_cast<double>(f(Variable(shifted)).item());
    };
    double fd = (evalAt(h) - evalAt(-h)) / (2.0 * h);
    double a = analytic[static_cast<size_t>(i)];
    double err = std::abs(a - fd);
    double denom = std::max(std::abs(a), std::abs(fd));
    if (denom > 0.0) err /= denom;
    maxRelErr = std::max(maxRelErr, err);
  }
  return GradCheckReport{maxRelErr, maxRelErr <= tol};
}

}  // namespace dmlt
