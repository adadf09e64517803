#include "dmlt/archive.hpp"

#include <cstring>
#include <fstream>

#include "dmlt/kernels.hpp"

namespace dmlt {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'L', 'T'};
constexpr uint32_t kVersion = 1;

void putU32(std::vector<std::byte>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  size_t remaining() const { return bytes_.size() - pos_; }

  const std::byte* take(size_t n, const char* what) {
    if (remaining() < n)
      raise(ErrorCode::TruncatedInput, std::string("while reading ") + what + ": need " +
                                           std::to_string(n) + " bytes, have " +
                                           std::to_string(remaining()));
    const std::byte* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  uint32_t u32(const char* what) {
    const std::byte* p = take(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(std::to_integer<uint8_t>(p[i])) << (8 * i);
    return v;
  }

  uint8_t u8(const char* what) { return std::to_integer<uint8_t>(*take(1, what)); }

 private:
  std::span<const std::byte> bytes_;
  size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(const std::string& name, const Tensor& tensor) {
  for (const Entry& e : entries_)
    if (e.name == name) raise(ErrorCode::DuplicateName, "archive entry '" + name + "'");
  entries_.push_back({name, toContiguous(tensor)});
}

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e.tensor;
  raise(ErrorCode::NameMismatch, "archive has no entry '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return true;
  return false;
}

size_t encodedSize(const TensorArchive& archive) {
  size_t total = 12;
  for (const auto& e : archive.entries())
    total += 6 + e.name.size() + 4 * static_cast<size_t>(e.tensor.rank()) +
             dtypeSize(e.tensor.dtype()) * static_cast<size_t>(e.tensor.numel());
  return total;
}

std::vector<std::byte> encodeArchive(const TensorArchive& archive) {
  std::vector<std::byte> out;
  out.reserve(encodedSize(archive));
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  putU32(out, kVersion);
  putU32(out, static_cast<uint32_t>(archive.size()));
  for (const auto& e : archive.entries()) {
    putU32(out, static_cast<uint32_t>(e.name.size()));
    for (char c : e.name) out.push_back(static_cast<std::byte>(c));
    out.push_back(static_cast<std::byte>(e.tensor.dtype()));
    out.push_back(static_cast<std::byte>(static_cast<uint8_t>(e.tensor.rank())));
    for (int64_t ext : e.tensor.shape()) putU32(out, static_cast<uint32_t>(ext));
    size_t payload = dtypeSize(e.tensor.dtype()) * static_cast<size_t>(e.tensor.numel());
    const std::byte* p = reinterpret_cast<const std::byte*>(e.tensor.backend().data(e.tensor.buffer()));
    out.insert(out.end(), p, p + payload);
  }
  return out;
}

TensorArchive decodeArchive(Backend& backend, std::span<const std::byte> bytes) {
  Reader r(bytes);
  const std::byte* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) raise(ErrorCode::BadMagic, "not a DMLT archive");
  uint32_t version = r.u32("version");
  if (version != kVersion)
    raise(ErrorCode::UnsupportedVersion, "archive version " + std::to_string(version));
  uint32_t count = r.u32("entry count");
  TensorArchive archive;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nameLen = r.u32("name length");
    const std::byte* nameBytes = r.take(nameLen, "name");
    std::string name(reinterpret_cast<const char*>(nameBytes), nameLen);
    DType dtype = dtypeFromTag(r.u8("dtype"));
    uint8_t ndim = r.u8("ndim");
    Shape shape(ndim);
    uint64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      uint64_t extent = r.u32("shape");
      // overflow-safe size guard: payload can never exceed the input anyway
      if (extent != 0 && numel > bytes.size() / extent)
        raise(ErrorCode::TruncatedInput, "entry '" + name + "' declares oversized payload");
      shape[d] = static_cast<int64_t>(extent);
      numel *= extent;
    }
    uint64_t payload = numel * dtypeSize(dtype);
    const std::byte* data = r.take(static_cast<size_t>(payload), "payload");
    Tensor t = Tensor::empty(backend, dtype, shape);
    if (payload > 0) std::memcpy(backend.data(t.buffer()), data, static_cast<size_t>(payload));
    archive.add(name, t);
  }
  if (r.remaining() > 0)
    raise(ErrorCode::TrailingGarbage, std::to_string(r.remaining()) + " bytes after archive content");
  return archive;
}

void saveArchive(const TensorArchive& archive, const std::string& path) {
  std::vector<std::byte> bytes = encodeArchive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorCode::IoError, "short write to " + path);
}

TensorArchive loadArchive(Backend& backend, const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) raise(ErrorCode::IoError, "cannot read " + path);
  std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::byte> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) raise(ErrorCode::IoError, "short read from " + path);
  return decodeArchive(backend, bytes);
}

TensorArchive archiveModel(const Layer& model) {
  TensorArchive archive;
  for (const auto& [name, param] : model.namedParameters()) archive.add(name, param.data());
  return archive;
}

TensorArchive archiveGradients(const Layer& model) {
  TensorArchive archive;
  for (const auto& [name, param] : model.namedParameters()) {
    if (!param.grad()) raise(ErrorCode::MissingGradient, "parameter " + name + " has no gradient");
    archive.add(name, *param.grad());
  }
  return archive;
}

void restoreModel(Layer& model, const TensorArchive& archive) {
  auto params = model.namedParameters();
  if (params.size() != archive.size())
    raise(ErrorCode::NameMismatch, "archive has " + std::to_string(archive.size()) +
                                       " entries, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& entry = archive.entries()[i];
    auto& [name, param] = params[i];
    if (entry.name != name)
      raise(ErrorCode::NameMismatch, "archive entry '" + entry.name + "' != parameter '" + name + "'");
    if (entry.tensor.dtype() != param.data().dtype() || entry.tensor.shape() != param.data().shape())
      raise(ErrorCode::ShapeMismatch, "entry '" + name + "' is " + shapeToString(entry.tensor.shape()) +
                                          ", parameter is " + shapeToString(param.data().shape()));
    Tensor dst = param.data();
    copyInto(dst, entry.tensor);
  }
}

}  // namespace dmlt
