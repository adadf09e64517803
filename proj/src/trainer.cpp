#include "dmlt/trainer.hpp"

#include <algorithm>

#include "dmlt/kernels.hpp"
#include "dmlt/tidy.hpp"

namespace dmlt {

float localTrainStep(Layer& model, MomentumSGD& optimizer, const Tensor& images,
                     const Tensor& labels) {
  Variable x(images);
  Variable logits = model.c(x).get();
  Variable loss = softmaxCrossEntropy(logits, labels);
  optimizer.zeroGrad();
  loss.backward().wait();
  optimizer.step().wait();
  return loss.item();
}

std::vector<float> localTrainSteps(Backend& backend, Layer& model, MomentumSGD& optimizer,
                                   const Dataset& dataset, int64_t batch, uint64_t seed,
                                   uint64_t firstStep, uint64_t steps) {
  std::vector<float> losses;
  losses.reserve(steps);
  for (uint64_t s = firstStep; s < firstStep + steps; ++s) {
    float loss = tidy(backend, [&] {
      std::vector<int64_t> indices = batchIndices(seed, dataset.size(), batch, s);
      Dataset raw = gatherBatch(backend, dataset, indices);
      float value = localTrainStep(model, optimizer, normalizeU8(raw.images), raw.labels);
      optimizer.zeroGrad();  // let gradient buffers die with the scope
      return value;
    });
    losses.push_back(loss);
  }
  return losses;
}

double evalAccuracy(Backend& backend, Layer& model, const Dataset& dataset, int64_t batch) {
  int64_t n = dataset.size();
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += batch) {
    int64_t count = std::min(batch, n - start);
    correct += tidy(backend, [&]() -> int64_t {
      std::vector<int64_t> indices(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) indices[static_cast<size_t>(i)] = start + i;
      Dataset raw = gatherBatch(backend, dataset, indices);
      Variable logits = model.c(Variable(normalizeU8(raw.images))).get();
      std::vector<float> scores = logits.data().toVector<float>();
      std::vector<int32_t> labels = raw.labels.toVector<int32_t>();
      int64_t classes = logits.data().shape()[1];
      int64_t hits = 0;
      for (int64_t i = 0; i < count; ++i) {
        const float* row = scores.data() + i * classes;
        int64_t best = 0;
        for (int64_t c = 1; c < classes; ++c)
          if (row[c] > row[best]) best = c;
        if (best == labels[static_cast<size_t>(i)]) ++hits;
      }
      return hits;
    });
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace dmlt
