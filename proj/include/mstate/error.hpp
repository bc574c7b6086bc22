#pragma once

#include <stdexcept>
#include <string>

namespace mstate {

/// Failure inside a pipeline stage. what() reads "<module>::<operation>: <detail>".
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string module, std::string operation, const std::string& detail)
      : std::runtime_error(module + "::" + operation + ": " + detail),
        module_(std::move(module)),
        operation_(std::move(operation)) {}

  const std::string& module() const noexcept { return module_; }
  const std::string& operation() const noexcept { return operation_; }

 private:
  std::string module_;
  std::string operation_;
};

}  // namespace mstate
