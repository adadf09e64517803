#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dmlt/nn.hpp"
#include "dmlt/tensor.hpp"

namespace dmlt {

// Ordered name -> tensor collection with a bit-exact single-binary encoding,
// used for weights, gradients and batches on the wire and on disk (.dmlt).
//
// Layout, all integers little-endian, no padding, no checksum:
//
//   [offset] [size]     [field]
//   0        4          magic "DMLT"
//   4        4          version, u32 = 1
//   8        4          entry count, u32
//   per entry:
//            4          name_len, u32
//            name_len   name bytes (UTF-8)
//            1          dtype, u8 (0=f32, 1=i32, 2=u8, 3=bool)
//            1          ndim, u8
//            4*ndim     shape, u32 each
//            elem*numel payload, row-major
class TensorArchive {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;  // stored contiguous
  };

  // Non-contiguous tensors are materialized on insertion.
  void add(const std::string& name, const Tensor& tensor);

  size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

 private:
  std::vector<Entry> entries_;
};

std::vector<std::byte> encodeArchive(const TensorArchive& archive);

// Inverse of encodeArchive. Never reads past the input and never allocates
// more than the input length; trailing bytes after the declared content are
// an error. Raises BadMagic, UnsupportedVersion, TruncatedInput,
// TrailingGarbage, InvalidDType.
TensorArchive decodeArchive(Backend& backend, std::span<const std::byte> bytes);

// Exact encoded size: 12 + sum(6 + name_len + 4*ndim + elem_size*numel).
size_t encodedSize(const TensorArchive& archive);

void saveArchive(const TensorArchive& archive, const std::string& path);
TensorArchive loadArchive(Backend& backend, const std::string& path);

// Parameters in enumeration order, archive names = dotted parameter names.
TensorArchive archiveModel(const Layer& model);
// Gradients in enumeration order; raises MissingGradient when absent.
TensorArchive archiveGradients(const Layer& model);
// Overwrites parameter data in place. Archive names/shapes must exactly
// match the model's enumeration (NameMismatch / ShapeMismatch).
void restoreModel(Layer& model, const TensorArchive& archive);

}  // namespace dmlt
