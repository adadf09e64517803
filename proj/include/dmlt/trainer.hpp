#pragma once

#include "dmlt/dataset.hpp"
#include "dmlt/nn.hpp"

namespace dmlt {

// One optimizer step on an already-normalized batch:
// forward, loss, zeroGrad, backward, step. Returns the loss value.
float localTrainStep(Layer& model, MomentumSGD& optimizer, const Tensor& images,
                     const Tensor& labels);

// Runs `steps` steps drawing batches with batchIndices(seed, ...), each step
// inside a tidy scope. The batch schedule matches the coordinator's, so a
// distributed run with the same plan consumes identical batches.
std::vector<float> localTrainSteps(Backend& backend, Layer& model, MomentumSGD& optimizer,
                                   const Dataset& dataset, int64_t batch, uint64_t seed,
                                   uint64_t firstStep, uint64_t steps);

// Fraction of samples whose argmax logit matches the label.
double evalAccuracy(Backend& backend, Layer& model, const Dataset& dataset,
                    int64_t batch = 256);

}  // namespace dmlt
