#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmlt/deferred.hpp"
#include "dmlt/nn_kernels.hpp"
#include "dmlt/tensor.hpp"
#include "dmlt/tidy.hpp"

namespace dmlt {

struct FunctionNode;

// Wraps a Tensor to enable backpropagation. Copying a Variable copies the
// handle; data, grad and creator are shared.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor data, bool requiresGrad = false);

  bool defined() const { return impl_ != nullptr; }
  const Tensor& data() const;
  void setData(Tensor t);
  const std::optional<Tensor>& grad() const;
  void setGrad(Tensor g);
  void clearGrad();
  void retainGrad();
  bool requiresGrad() const;
  std::shared_ptr<FunctionNode> creator() const;
  int64_t generation() const;
  float item() const { return data().scalar(); }

  // Reverse-mode pass seeded with 1. Requires scalar data (shape [] or [1]).
  // Gradients accumulate into leaf Variables; non-leaf gradients are dropped
  // unless retainGrad() was requested.
  Deferred<void> backward() const;

  struct Impl;
  Impl* impl() const { return impl_.get(); }

 private:
  friend Variable makeFromNode(Tensor data, std::shared_ptr<FunctionNode> node);
  std::shared_ptr<Impl> impl_;
};

struct Variable::Impl {
  Tensor data;
  std::optional<Tensor> grad;
  std::shared_ptr<FunctionNode> creator;
  bool requiresGrad = false;
  bool retainGrad = false;
};

// One recorded operation in the define-by-run graph.
struct FunctionNode {
  std::string opKind;
  std::vector<Variable> inputs;
  std::weak_ptr<Variable::Impl> output;
  int64_t generation = 0;  // strictly above every input's generation
  uint64_t seq = 0;        // creation order, tie-breaker for the traversal
  // Maps the output gradient to one optional gradient per input.
  std::function<std::vector<std::optional<Tensor>>(const Tensor& upstream)> backwardFn;
};

// Differentiable op suite. Each op records a FunctionNode when any input
// requires a gradient and propagates kernel errors unchanged.
Variable add(const Variable& a, const Variable& b);
Variable mul(const Variable& a, const Variable& b);
Variable matmul(const Variable& a, const Variable& b);
Variable relu(const Variable& x);
Variable reshape(const Variable& x, Shape shape);
Variable transpose(const Variable& x);
Variable sum(const Variable& x);
Variable linear(const Variable& x, const Variable& weight, const Variable& bias);
Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias, ConvSpec spec);
Variable softmaxCrossEntropy(const Variable& logits, const Tensor& labels);

inline void appendRetainedBuffers(const Variable& v, std::vector<BufferId>& out) {
  if (!v.defined()) return;
  appendRetainedBuffers(v.data(), out);
  if (v.grad()) appendRetainedBuffers(*v.grad(), out);
}

struct GradCheckReport {
  double maxRelErr = 0.0;
  bool pass = false;
};

// Compares analytic gradients of a scalar-valued f against central finite
// differences, h on each input element in turn. Relative error uses
// |a - fd| / max(|a|, |fd|) when the denominator is nonzero.
GradCheckReport finiteDifferenceCheck(const std::function<Variable(const Variable&)>& f,
                                      const Variable& x, double h, double tol);

}  // namespace dmlt
