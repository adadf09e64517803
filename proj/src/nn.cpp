#include "dmlt/nn.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "dmlt/kernels.hpp"
#include "dmlt/rng.hpp"

namespace dmlt {

Deferred<Variable> Layer::c(const Variable& input) {
  std::vector<Variable> outputs = forward({input});
  if (outputs.size() != 1)
    raise(ErrorCode::ShapeMismatch, "c() needs a single-output model, got " + std::to_string(outputs.size()));
  return Deferred<Variable>(std::move(outputs[0]));
}

Deferred<std::vector<Variable>> Layer::call(const std::vector<Variable>& inputs) {
  return Deferred<std::vector<Variable>>(forward(inputs));
}

Parameter& Layer::registerParameter(const std::string& name, Tensor data) {
  params_.emplace_back(name, Parameter(std::move(data), true));
  return params_.back().second;
}

void Layer::registerChild(const std::string& name, Layer& child) {
  children_.emplace_back(name, &child);
}

void Layer::collectParameters(const std::string& prefix,
                              std::vector<std::pair<std::string, Parameter>>& out) const {
  for (const auto& [name, param] : params_) out.emplace_back(prefix + name, param);
  for (const auto& [name, child] : children_) child->collectParameters(prefix + name + ".", out);
}

std::vector<std::pair<std::string, Parameter>> Layer::namedParameters() const {
  std::vector<std::pair<std::string, Parameter>> out;
  collectParameters("", out);
  std::set<std::string> names;
  for (const auto& [name, param] : out)
    if (!names.insert(name).second) raise(ErrorCode::DuplicateName, "parameter " + name);
  return out;
}

std::vector<Parameter> Layer::parameters() const {
  std::vector<Parameter> out;
  for (auto& [name, param] : namedParameters()) out.push_back(param);
  return out;
}

void zeroGrad(const std::vector<Parameter>& params) {
  for (Parameter p : params) p.clearGrad();  // handles share state
}

Linear::Linear(Backend& backend, int64_t inFeatures, int64_t outFeatures)
    : weight_(registerParameter("weight", Tensor::zeros(backend, DType::Float32, {outFeatures, inFeatures}))),
      bias_(registerParameter("bias", Tensor::zeros(backend, DType::Float32, {outFeatures}))) {}

std::vector<Variable> Linear::forward(const std::vector<Variable>& inputs) {
  return {linear(inputs[0], weight_, bias_)};
}

Conv2d::Conv2d(Backend& backend, int64_t inChannels, int64_t outChannels, int64_t kernel,
               int64_t stride, int64_t padding)
    : weight_(registerParameter(
          "weight", Tensor::zeros(backend, DType::Float32, {outChannels, inChannels, kernel, kernel}))),
      bias_(registerParameter("bias", Tensor::zeros(backend, DType::Float32, {outChannels}))),
      spec_{stride, padding} {}

std::vector<Variable> Conv2d::forward(const std::vector<Variable>& inputs) {
  return {conv2d(inputs[0], weight_, bias_, spec_)};
}

std::vector<Variable> ReLU::forward(const std::vector<Variable>& inputs) {
  return {relu(inputs[0])};
}

MlpModel::MlpModel(Backend& backend, int64_t inFeatures, int64_t hidden, int64_t outFeatures)
    : l1_(backend, inFeatures, hidden), l2_(backend, hidden, outFeatures) {
  registerChild("l1", l1_);
  registerChild("l2", l2_);
}

std::vector<Variable> MlpModel::forward(const std::vector<Variable>& inputs) {
  Variable y = inputs[0];
  if (y.data().rank() != 2) y = reshape(y, {y.data().shape()[0], -1});
  y = l1_.c(y).get();
  y = relu(y);
  y = l2_.c(y).get();
  return {y};
}

namespace {

int64_t convOut(int64_t extent, int64_t kernel, int64_t stride, int64_t padding) {
  return (extent + 2 * padding - kernel) / stride + 1;
}

}  // namespace

SmallCnnModel::SmallCnnModel(Backend& backend, const Shape& inputShape, int64_t baseChannels,
                             int64_t classes)
    : conv1_(backend, inputShape[0], baseChannels, 3, 2, 1),
      conv2_(backend, baseChannels, 2 * baseChannels, 3, 2, 1),
      head_(backend,
            2 * baseChannels * convOut(convOut(inputShape[1], 3, 2, 1), 3, 2, 1) *
                convOut(convOut(inputShape[2], 3, 2, 1), 3, 2, 1),
            classes) {
  flatFeatures_ = 2 * baseChannels * convOut(convOut(inputShape[1], 3, 2, 1), 3, 2, 1) *
                  convOut(convOut(inputShape[2], 3, 2, 1), 3, 2, 1);
  registerChild("conv1", conv1_);
  registerChild("conv2", conv2_);
  registerChild("head", head_);
}

std::vector<Variable> SmallCnnModel::forward(const std::vector<Variable>& inputs) {
  Variable y = inputs[0];
  y = conv1_.c(y).get();
  y = relu(y);
  y = conv2_.c(y).get();
  y = relu(y);
  y = reshape(y, {y.data().shape()[0], flatFeatures_});
  y = head_.c(y).get();
  return {y};
}

std::string modelConfigToJson(const ModelConfig& cfg) {
  nlohmann::json j;
  j["arch"] = cfg.arch;
  j["input_shape"] = cfg.inputShape;
  j["hidden"] = cfg.hidden;
  j["classes"] = cfg.classes;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig modelConfigFromJson(const std::string& json) {
  try {
    nlohmann::json j = nlohmann::json::parse(json);
    ModelConfig cfg;
    cfg.arch = j.at("arch").get<std::string>();
    cfg.inputShape = j.at("input_shape").get<Shape>();
    cfg.hidden = j.at("hidden").get<int64_t>();
    cfg.classes = j.at("classes").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::DecodeError, std::string("model config: ") + e.what());
  }
}

namespace {

void validateConfig(const ModelConfig& cfg) {
  if (cfg.arch != "mlp" && cfg.arch != "small_cnn")
    raise(ErrorCode::InvalidConfig, "unknown arch '" + cfg.arch + "'");
  if (cfg.hidden < 1 || cfg.classes < 1) raise(ErrorCode::InvalidConfig, "hidden/classes must be >= 1");
  if (cfg.inputShape.empty()) raise(ErrorCode::InvalidConfig, "empty input shape");
  for (int64_t e : cfg.inputShape)
    if (e < 1) raise(ErrorCode::InvalidConfig, "input extents must be >= 1");
  if (cfg.arch == "small_cnn") {
    if (cfg.inputShape.size() != 3) raise(ErrorCode::InvalidConfig, "small_cnn needs [C,H,W] input");
    if (convOut(convOut(cfg.inputShape[1], 3, 2, 1), 3, 2, 1) < 1 ||
        convOut(convOut(cfg.inputShape[2], 3, 2, 1), 3, 2, 1) < 1)
      raise(ErrorCode::InvalidConfig, "input too small for two stride-2 convs");
  }
}

int64_t flatInput(const ModelConfig& cfg) {
  int64_t n = 1;
  for (int64_t e : cfg.inputShape) n *= e;
  return n;
}

}  // namespace

std::unique_ptr<Layer> buildModel(Backend& backend, const ModelConfig& cfg) {
  validateConfig(cfg);
  std::unique_ptr<Layer> model;
  if (cfg.arch == "mlp") {
    model = std::make_unique<MlpModel>(backend, flatInput(cfg), cfg.hidden, cfg.classes);
  } else {
    model = std::make_unique<SmallCnnModel>(backend, cfg.inputShape, cfg.hidden, cfg.classes);
  }
  Rng rng(cfg.seed);
  for (auto& [name, param] : model->namedParameters()) {
    bool isWeight = name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
    if (!isWeight) continue;  // biases stay zero
    const Shape& shape = param.data().shape();
    int64_t fanIn = 1;
    for (size_t d = 1; d < shape.size(); ++d) fanIn *= shape[d];
    float bound = 1.0f / std::sqrt(static_cast<float>(fanIn));
    float* p = param.data().dataAs<float>();
    int64_t n = param.data().numel();
    for (int64_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
  }
  return model;
}

int64_t parameterCount(const ModelConfig& cfg) {
  validateConfig(cfg);
  if (cfg.arch == "mlp") {
    int64_t in = flatInput(cfg);
    return in * cfg.hidden + cfg.hidden + cfg.hidden * cfg.classes + cfg.classes;
  }
  int64_t c = cfg.inputShape[0];
  int64_t oh = convOut(convOut(cfg.inputShape[1], 3, 2, 1), 3, 2, 1);
  int64_t ow = convOut(convOut(cfg.inputShape[2], 3, 2, 1), 3, 2, 1);
  int64_t conv1 = cfg.hidden * c * 9 + cfg.hidden;
  int64_t conv2 = 2 * cfg.hidden * cfg.hidden * 9 + 2 * cfg.hidden;
  int64_t head = cfg.classes * (2 * cfg.hidden * oh * ow) + cfg.classes;
  return conv1 + conv2 + head;
}

MomentumSGD::MomentumSGD(Layer& model, float lr, float momentum) : lr_(lr), momentum_(momentum) {
  if (lr <= 0.0f) raise(ErrorCode::InvalidConfig, "lr must be positive");
  if (momentum < 0.0f || momentum >= 1.0f) raise(ErrorCode::InvalidConfig, "momentum must be in [0,1)");
  params_ = model.parameters();
  velocity_.reserve(params_.size());
  for (const Parameter& p : params_)
    velocity_.push_back(Tensor::zeros(p.data().backend(), DType::Float32, p.data().shape()));
}

void MomentumSGD::zeroGrad() {
  for (Parameter& p : params_) p.clearGrad();
}

Deferred<void> MomentumSGD::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    if (!p.grad()) raise(ErrorCode::MissingGradient, "parameter " + std::to_string(i) + " has no gradient");
    Tensor g = toContiguous(*p.grad());
    float* pv = velocity_[i].dataAs<float>();
    float* pd = p.data().dataAs<float>();
    const float* pg = g.dataAs<float>();
    int64_t n = p.data().numel();
    for (int64_t j = 0; j < n; ++j) {
      pv[j] = momentum_ * pv[j] + pg[j];
      pd[j] -= lr_ * pv[j];
    }
  }
  return Deferred<void>();
}

}  // namespace dmlt
