#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "rtcc/tensor/kernels.hpp"
#include "rtcc/tensor/tensor.hpp"

// Hooks that let a profiler observe every op executed on the current thread.
namespace rtcc::trace {

struct OpEvent {
  std::string_view op;
  std::string_view scope;  // dotted layer path set by NameScope
  Dims out_dims;
  std::int64_t macs = 0;
  // Set for conv2d only.
  const ConvSpec* conv = nullptr;
  Dims in_dims;
};

class Recorder {
 public:
  virtual ~Recorder() = default;
  virtual void on_op(const OpEvent& event) = 0;
};

// Installs a recorder for the current thread for the guard's lifetime.
class ScopedRecorder {
 public:
  explicit ScopedRecorder(Recorder& recorder);
  ~ScopedRecorder();
  ScopedRecorder(const ScopedRecorder&) = delete;
  ScopedRecorder& operator=(const ScopedRecorder&) = delete;

 private:
  Recorder* previous_;
};

// Appends ".name" to the current scope, or replaces it when `absolute`.
class NameScope {
 public:
  explicit NameScope(std::string_view name, bool absolute = false);
  ~NameScope();
  NameScope(const NameScope&) = delete;
  NameScope& operator=(const NameScope&) = delete;

 private:
  std::string previous_;
};

const std::string& current_scope();
bool active();
void emit(std::string_view op, const Dims& out_dims, std::int64_t macs, const ConvSpec* conv = nullptr,
          const Dims& in_dims = {});

}  // namespace rtcc::trace
