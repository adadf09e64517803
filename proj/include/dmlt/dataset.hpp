#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmlt/tensor.hpp"

namespace dmlt {

struct Dataset {
  Tensor images;  // uint8 [N,C,H,W]
  Tensor labels;  // int32 [N]
  int64_t classCount = 0;

  int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

// IDX pair loader (big-endian headers):
//
//   images (magic 0x00000803): u32 magic, u32 count, u32 rows, u32 cols,
//                              then count*rows*cols pixel bytes
//   labels (magic 0x00000801): u32 magic, u32 count, then count label bytes
//
// Images come back as uint8 [N,1,H,W]; label class count is max label + 1.
Dataset loadIdx(Backend& backend, const std::string& imagesPath, const std::string& labelsPath);

// Class-conditional synthetic set: class k gets a distinct base intensity
// plus seeded pixel noise, so the classes are linearly separable. Samples
// are laid out round-robin over classes; n must be divisible by classes.
Dataset synthDataset(Backend& backend, int64_t n, int64_t classes, const Shape& imageShape,
                     uint64_t seed);

// Datasets persist as .dmlt archives with entries "images" and "labels".
void saveDataset(const Dataset& dataset, const std::string& path);
Dataset loadDataset(Backend& backend, const std::string& path);

// Sample indices for one step: epoch e = step / floor(N/B) gets its own
// seeded permutation, batches are consecutive B-slices of it, and the short
// tail is dropped. Pure function of (seed, n, batch, step), so coordinator
// and oracle processes derive identical sequences.
std::vector<int64_t> batchIndices(uint64_t seed, int64_t n, int64_t batch, uint64_t step);

// Gathers rows: images stay uint8, labels int32. The overload with a target
// backend allocates the batch there (datasets and models may live on
// different backends).
Dataset gatherBatch(const Dataset& dataset, const std::vector<int64_t>& indices);
Dataset gatherBatch(Backend& target, const Dataset& dataset, const std::vector<int64_t>& indices);

// Iterates one seeded permutation per epoch, dropping the short tail batch.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, int64_t batchSize, uint64_t seed);

  struct Batch {
    Tensor images;  // float32 [B,C,H,W], normalized to [0,1]
    Tensor labels;  // int32 [B]
  };

  // False at end of epoch; nextEpoch() reshuffles and resumes.
  bool next(Batch& out);
  void nextEpoch();
  int64_t batchesPerEpoch() const { return dataset_->size() / batchSize_; }
  uint64_t epoch() const { return epoch_; }

 private:
  const Dataset* dataset_;
  int64_t batchSize_;
  uint64_t seed_;
  uint64_t epoch_ = 0;
  int64_t cursor_ = 0;
  std::vector<int64_t> permutation_;
};

}  // namespace dmlt
