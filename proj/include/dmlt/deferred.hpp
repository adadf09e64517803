#pragma once

#include <utility>

namespace dmlt {

// Completion handle for operations that may resolve asynchronously in other
// backends. The value must not be read before get()/wait(); the current
// backend resolves synchronously, but callers should not rely on that.
template <typename T>
class Deferred {
 public:
  explicit Deferred(T value) : value_(std::move(value)) {}

  const T& get() const& { return value_; }
  T get() && { return std::move(value_); }
  void wait() const {}

 private:
  T value_;
};

template <>
class Deferred<void> {
 public:
  void get() const {}
  void wait() const {}
};

}  // namespace dmlt
