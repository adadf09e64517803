#include "dmlt/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "dmlt/archive.hpp"
#include "dmlt/kernels.hpp"
#include "dmlt/rng.hpp"

namespace dmlt {

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

uint32_t readBigU32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) raise(ErrorCode::TruncatedInput, path + ": header ends early");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

std::vector<int64_t> seededPermutation(int64_t n, uint64_t seed, uint64_t epoch) {
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  Rng rng(mixSeed(seed, epoch));
  for (int64_t i = n - 1; i > 0; --i) {
    uint32_t j = rng.below(static_cast<uint32_t>(i + 1));
    std::swap(perm[static_cast<size_t>(i)], perm[j]);
  }
  return perm;
}

}  // namespace

Dataset loadIdx(Backend& backend, const std::string& imagesPath, const std::string& labelsPath) {
  std::ifstream imagesIn(imagesPath, std::ios::binary);
  if (!imagesIn) raise(ErrorCode::IoError, "cannot read " + imagesPath);
  uint32_t magic = readBigU32(imagesIn, imagesPath);
  if (magic != kIdxImagesMagic)
    raise(ErrorCode::BadMagic, imagesPath + ": magic " + std::to_string(magic));
  uint32_t count = readBigU32(imagesIn, imagesPath);
  uint32_t rows = readBigU32(imagesIn, imagesPath);
  uint32_t cols = readBigU32(imagesIn, imagesPath);

  std::ifstream labelsIn(labelsPath, std::ios::binary);
  if (!labelsIn) raise(ErrorCode::IoError, "cannot read " + labelsPath);
  uint32_t labelsMagic = readBigU32(labelsIn, labelsPath);
  if (labelsMagic != kIdxLabelsMagic)
    raise(ErrorCode::BadMagic, labelsPath + ": magic " + std::to_string(labelsMagic));
  uint32_t labelCount = readBigU32(labelsIn, labelsPath);
  if (labelCount != count)
    raise(ErrorCode::CountMismatch, std::to_string(count) + " images vs " +
                                        std::to_string(labelCount) + " labels");

  Dataset d;
  d.images = Tensor::empty(backend, DType::UInt8,
                           {int64_t(count), 1, int64_t(rows), int64_t(cols)});
  size_t pixelBytes = size_t(count) * rows * cols;
  imagesIn.read(reinterpret_cast<char*>(d.images.dataAs<uint8_t>()),
                static_cast<std::streamsize>(pixelBytes));
  if (imagesIn.gcount() != static_cast<std::streamsize>(pixelBytes))
    raise(ErrorCode::TruncatedInput, imagesPath + ": pixel data ends early");

  std::vector<uint8_t> rawLabels(count);
  labelsIn.read(reinterpret_cast<char*>(rawLabels.data()), count);
  if (labelsIn.gcount() != static_cast<std::streamsize>(count))
    raise(ErrorCode::TruncatedInput, labelsPath + ": label data ends early");

  d.labels = Tensor::empty(backend, DType::Int32, {int64_t(count)});
  int32_t* pl = d.labels.dataAs<int32_t>();
  int32_t maxLabel = -1;
  for (uint32_t i = 0; i < count; ++i) {
    pl[i] = rawLabels[i];
    maxLabel = std::max(maxLabel, pl[i]);
  }
  d.classCount = maxLabel + 1;
  return d;
}

Dataset synthDataset(Backend& backend, int64_t n, int64_t classes, const Shape& imageShape,
                     uint64_t seed) {
  if (n < 1 || classes < 1 || n % classes != 0)
    raise(ErrorCode::InvalidConfig, "n must be a positive multiple of classes");
  if (imageShape.size() != 3) raise(ErrorCode::InvalidConfig, "image shape must be [C,H,W]");
  for (int64_t e : imageShape)
    if (e < 1) raise(ErrorCode::InvalidConfig, "image extents must be >= 1");

  Dataset d;
  d.classCount = classes;
  Shape full = {n, imageShape[0], imageShape[1], imageShape[2]};
  d.images = Tensor::empty(backend, DType::UInt8, full);
  d.labels = Tensor::empty(backend, DType::Int32, {n});
  uint8_t* pi = d.images.dataAs<uint8_t>();
  int32_t* pl = d.labels.dataAs<int32_t>();
  int64_t c = imageShape[0], h = imageShape[1], w = imageShape[2];
  int64_t pixels = c * h * w;
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    int64_t k = i % classes;
    pl[i] = static_cast<int32_t>(k);
    // distinct base intensity per class plus a bright class-k column band;
    // +-16 noise keeps the classes linearly separable
    int64_t base = ((k + 1) * 255) / (classes + 1);
    int64_t bandLo = k * w / classes;
    int64_t bandHi = std::max(bandLo + 1, (k + 1) * w / classes);
    uint8_t* img = pi + i * pixels;
    for (int64_t ci = 0; ci < c; ++ci) {
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          int64_t value = x >= bandLo && x < bandHi ? base + 120 : base;
          int64_t noise = static_cast<int64_t>(rng.below(33)) - 16;
          img[(ci * h + y) * w + x] =
              static_cast<uint8_t>(std::clamp<int64_t>(value + noise, 0, 255));
        }
      }
    }
  }
  return d;
}

void saveDataset(const Dataset& dataset, const std::string& path) {
  TensorArchive archive;
  archive.add("images", dataset.images);
  archive.add("labels", dataset.labels);
  saveArchive(archive, path);
}

Dataset loadDataset(Backend& backend, const std::string& path) {
  TensorArchive archive = loadArchive(backend, path);
  Dataset d;
  d.images = archive.at("images");
  d.labels = archive.at("labels");
  if (d.images.rank() != 4 || d.labels.rank() != 1 || d.images.shape()[0] != d.labels.shape()[0])
    raise(ErrorCode::ShapeMismatch, "dataset archive needs images [N,C,H,W] and labels [N]");
  int32_t maxLabel = -1;
  for (int32_t v : d.labels.toVector<int32_t>()) maxLabel = std::max(maxLabel, v);
  d.classCount = maxLabel + 1;
  return d;
}

std::vector<int64_t> batchIndices(uint64_t seed, int64_t n, int64_t batch, uint64_t step) {
  if (batch < 1 || batch > n) raise(ErrorCode::InvalidConfig, "batch size out of range");
  int64_t perEpoch = n / batch;
  uint64_t epoch = step / static_cast<uint64_t>(perEpoch);
  int64_t slot = static_cast<int64_t>(step % static_cast<uint64_t>(perEpoch));
  std::vector<int64_t> perm = seededPermutation(n, seed, epoch);
  return std::vector<int64_t>(perm.begin() + slot * batch, perm.begin() + (slot + 1) * batch);
}

Dataset gatherBatch(const Dataset& dataset, const std::vector<int64_t>& indices) {
  return gatherBatch(dataset.images.backend(), dataset, indices);
}

Dataset gatherBatch(Backend& target, const Dataset& dataset, const std::vector<int64_t>& indices) {
  int64_t b = static_cast<int64_t>(indices.size());
  Shape shape = dataset.images.shape();
  shape[0] = b;
  Dataset out;
  out.classCount = dataset.classCount;
  out.images = Tensor::empty(target, DType::UInt8, shape);
  out.labels = Tensor::empty(target, DType::Int32, {b});
  int64_t pixels = shape[1] * shape[2] * shape[3];
  Tensor imagesC = toContiguous(dataset.images);
  Tensor labelsC = toContiguous(dataset.labels);
  const uint8_t* src = imagesC.dataAs<uint8_t>();
  const int32_t* srcLabels = labelsC.dataAs<int32_t>();
  uint8_t* dst = out.images.dataAs<uint8_t>();
  int32_t* dstLabels = out.labels.dataAs<int32_t>();
  for (int64_t i = 0; i < b; ++i) {
    int64_t idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= dataset.size()) raise(ErrorCode::IndexOutOfBounds, "sample index");
    std::memcpy(dst + i * pixels, src + idx * pixels, static_cast<size_t>(pixels));
    dstLabels[i] = srcLabels[idx];
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& dataset, int64_t batchSize, uint64_t seed)
    : dataset_(&dataset), batchSize_(batchSize), seed_(seed) {
  if (batchSize < 1 || batchSize > dataset.size())
    raise(ErrorCode::InvalidConfig, "batch size out of range");
  permutation_ = seededPermutation(dataset.size(), seed_, epoch_);
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ + batchSize_ > dataset_->size()) return false;  // drop the short tail
  std::vector<int64_t> indices(permutation_.begin() + cursor_,
                               permutation_.begin() + cursor_ + batchSize_);
  cursor_ += batchSize_;
  Dataset raw = gatherBatch(*dataset_, indices);
  out.images = normalizeU8(raw.images);
  out.labels = raw.labels;
  return true;
}

void BatchIterator::nextEpoch() {
  ++epoch_;
  cursor_ = 0;
  permutation_ = seededPermutation(dataset_->size(), seed_, epoch_);
}

}  // namespace dmlt
