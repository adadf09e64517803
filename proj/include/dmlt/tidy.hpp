#pragma once

#include <type_traits>
#include <utility>
#include <vector>

#include "dmlt/backend.hpp"
#include "dmlt/tensor.hpp"

namespace dmlt {

// Overload set collecting the buffer ids a tidy return value keeps alive.
// autograd.hpp and nn.hpp extend it for Variable, Layer and MomentumSGD.
inline void appendRetainedBuffers(const Tensor& t, std::vector<BufferId>& out) {
  if (t.defined()) out.push_back(t.buffer());
}

template <typename T>
  requires std::is_arithmetic_v<T>
void appendRetainedBuffers(T, std::vector<BufferId>&) {}  // plain values hold no buffers

template <typename T>
void appendRetainedBuffers(const std::vector<T>& items, std::vector<BufferId>& out) {
  for (const T& item : items) appendRetainedBuffers(item, out);
}

template <typename A, typename B>
void appendRetainedBuffers(const std::pair<A, B>& p, std::vector<BufferId>& out) {
  appendRetainedBuffers(p.first, out);
  appendRetainedBuffers(p.second, out);
}

template <typename... Ts>
void appendRetainedBuffers(const std::tuple<Ts...>& t, std::vector<BufferId>& out) {
  std::apply([&](const Ts&... items) { (appendRetainedBuffers(items, out), ...); }, t);
}

template <typename T>
void appendRetainedBuffers(T* ptr, std::vector<BufferId>& out) {
  if (ptr) appendRetainedBuffers(*ptr, out);
}

template <typename T>
void appendRetainedBuffers(const std::shared_ptr<T>& ptr, std::vector<BufferId>& out) {
  if (ptr) appendRetainedBuffers(*ptr, out);
}

// Runs `body` inside a fresh allocation scope. Buffers allocated during the
// body and not reachable from its return value are released on exit;
// retained buffers are re-parented to the enclosing scope. Scopes nest.
template <typename F>
auto tidy(Backend& backend, F&& body) {
  using R = std::invoke_result_t<F>;
  backend.pushScope();
  if constexpr (std::is_void_v<R>) {
    try {
      body();
    } catch (...) {
      backend.popScope({});
      throw;
    }
    backend.popScope({});
  } else {
    try {
      R result = body();
      std::vector<BufferId> keep;
      appendRetainedBuffers(result, keep);
      backend.popScope(keep);
      return result;
    } catch (...) {
      backend.popScope({});
      throw;
    }
  }
}

}  // namespace dmlt
