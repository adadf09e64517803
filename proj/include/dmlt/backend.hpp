#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "dmlt/error.hpp"

namespace dmlt {

using BufferId = uint64_t;

// Host-memory backend that tracks every buffer it hands out. Buffers are
// never garbage collected: each one belongs to the scope that was innermost
// when it was allocated, and dies when that scope exits unless tidy()
// re-parents it. Accessing a released buffer raises UseAfterRelease.
//
// All bookkeeping is serialized through an internal mutex; one backend per
// worker context is the intended usage.
class Backend {
 public:
  Backend() { scopes_.push_back({nextScopeId_++, {}}); }

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  BufferId alloc(size_t bytes) {
    std::lock_guard<std::mutex> lock(mu_);
    BufferId id = nextBufferId_++;
    buffers_.emplace(id, std::vector<std::byte>(bytes));
    scopes_.back().live.push_back(id);
    return id;
  }

  std::byte* data(BufferId id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = buffers_.find(id);
    if (it == buffers_.end())
      raise(ErrorCode::UseAfterRelease, "buffer " + std::to_string(id) + " was released");
    return it->second.data();
  }

  size_t bufferBytes(BufferId id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = buffers_.find(id);
    if (it == buffers_.end())
      raise(ErrorCode::UseAfterRelease, "buffer " + std::to_string(id) + " was released");
    return it->second.size();
  }

  bool alive(BufferId id) const {
    std::lock_guard<std::mutex> lock(mu_);
    return buffers_.count(id) > 0;
  }

  size_t liveBufferCount() const {
    std::lock_guard<std::mutex> lock(mu_);
    return buffers_.size();
  }

  void pushScope() {
    std::lock_guard<std::mutex> lock(mu_);
    scopes_.push_back({nextScopeId_++, {}});
  }

  // Exits the innermost scope. Buffers in its live set that appear in
  // `retained` move to the parent scope; the rest are released. Retained ids
  // owned by outer scopes are left untouched.
  void popScope(std::span<const BufferId> retained) {
    std::lock_guard<std::mutex> lock(mu_);
    if (scopes_.size() <= 1) raise(ErrorCode::InvalidConfig, "popScope without matching pushScope");
    Scope scope = std::move(scopes_.back());
    scopes_.pop_back();
    for (BufferId id : scope.live) {
      bool keep = false;
      for (BufferId r : retained) {
        if (r == id) { keep = true; break; }
      }
      if (keep) {
        scopes_.back().live.push_back(id);
      } else {
        buffers_.erase(id);
      }
    }
  }

  size_t scopeDepth() const {
    std::lock_guard<std::mutex> lock(mu_);
    return scopes_.size();
  }

 private:
  struct Scope {
    uint64_t id;
    std::vector<BufferId> live;
  };

  mutable std::mutex mu_;
  std::unordered_map<BufferId, std::vector<std::byte>> buffers_;
  std::vector<Scope> scopes_;
  BufferId nextBufferId_ = 1;
  uint64_t nextScopeId_ = 1;
};

}  // namespace dmlt
