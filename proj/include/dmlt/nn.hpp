#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dmlt/autograd.hpp"

namespace dmlt {

// Named trainable weight: a Variable that always requires a gradient.
using Parameter = Variable;

// Base class for layers and models. Trainable layers register parameters and
// child layers in the constructor; enumeration follows registration order
// and yields unique dotted names ("l1.weight"), stable across processes for
// the same config.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::vector<Variable> forward(const std::vector<Variable>& inputs) = 0;

  // Single-input single-output convenience; multi-output models use call().
  Deferred<Variable> c(const Variable& input);
  Deferred<std::vector<Variable>> call(const std::vector<Variable>& inputs);

  std::vector<std::pair<std::string, Parameter>> namedParameters() const;
  std::vector<Parameter> parameters() const;

 protected:
  Parameter& registerParameter(const std::string& name, Tensor data);
  void registerChild(const std::string& name, Layer& child);

 private:
  void collectParameters(const std::string& prefix,
                         std::vector<std::pair<std::string, Parameter>>& out) const;

  std::vector<std::pair<std::string, Parameter>> params_;
  std::vector<std::pair<std::string, Layer*>> children_;
};

// Clears every parameter gradient (the optional becomes absent).
void zeroGrad(const std::vector<Parameter>& params);

class Linear : public Layer {
 public:
  Linear(Backend& backend, int64_t inFeatures, int64_t outFeatures);
  std::vector<Variable> forward(const std::vector<Variable>& inputs) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_, bias_;
};

class Conv2d : public Layer {
 public:
  Conv2d(Backend& backend, int64_t inChannels, int64_t outChannels, int64_t kernel, int64_t stride,
         int64_t padding);
  std::vector<Variable> forward(const std::vector<Variable>& inputs) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  ConvSpec spec() const { return spec_; }

 private:
  Parameter weight_, bias_;
  ConvSpec spec_;
};

class ReLU : public Layer {
 public:
  std::vector<Variable> forward(const std::vector<Variable>& inputs) override;
};

// Two Linear layers with a relu between them; flattens [B,C,H,W] input.
class MlpModel : public Layer {
 public:
  MlpModel(Backend& backend, int64_t inFeatures, int64_t hidden, int64_t outFeatures);
  std::vector<Variable> forward(const std::vector<Variable>& inputs) override;

 private:
  Linear l1_, l2_;
};

// Conv(stride 2) -> relu -> Conv(stride 2) -> relu -> flatten -> Linear.
class SmallCnnModel : public Layer {
 public:
  SmallCnnModel(Backend& backend, const Shape& inputShape, int64_t baseChannels, int64_t classes);
  std::vector<Variable> forward(const std::vector<Variable>& inputs) override;

 private:
  Conv2d conv1_, conv2_;
  Linear head_;
  int64_t flatFeatures_;
};

// Fully determines architecture, parameter count and initialization.
struct ModelConfig {
  std::string arch = "mlp";  // "mlp" | "small_cnn"
  Shape inputShape = {1, 28, 28};
  int64_t hidden = 32;  // mlp hidden width / cnn base channel count
  int64_t classes = 10;
  uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

std::string modelConfigToJson(const ModelConfig& cfg);
ModelConfig modelConfigFromJson(const std::string& json);

// Builds and initializes the model: weights ~ uniform(-1/sqrt(fan_in),
// +1/sqrt(fan_in)) drawn from cfg.seed in enumeration order, biases zero.
std::unique_ptr<Layer> buildModel(Backend& backend, const ModelConfig& cfg);
int64_t parameterCount(const ModelConfig& cfg);

// v <- momentum*v + g; p <- p - lr*v, in place, in enumeration order.
class MomentumSGD {
 public:
  MomentumSGD(Layer& model, float lr, float momentum);

  void zeroGrad();
  Deferred<void> step();

  float lr() const { return lr_; }
  float momentum() const { return momentum_; }
  const std::vector<Tensor>& velocities() const { return velocity_; }

 private:
  std::vector<Parameter> params_;
  std::vector<Tensor> velocity_;
  float lr_;
  float momentum_;
};

inline void appendRetainedBuffers(const Layer& layer, std::vector<BufferId>& out) {
  for (const auto& [name, param] : layer.namedParameters()) appendRetainedBuffers(param.data(), out);
}

inline void appendRetainedBuffers(const MomentumSGD& opt, std::vector<BufferId>& out) {
  for (const Tensor& v : opt.velocities()) appendRetainedBuffers(v, out);
}

}  // namespace dmlt
