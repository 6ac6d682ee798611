#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace hmf {

// Error taxonomy shared by the library and the CLI. The CLI maps codes to
// process exit status: InvalidSpec/InvalidInput -> 1, NonConvergence -> 2,
// everything else -> 3.
enum class ErrorCode {
  InvalidSpec,
  InvalidInput,
  UnsupportedDerivative,
  NonConvergence,
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string stage, const std::string& what)
      : std::runtime_error(what), code_(code), stage_(std::move(stage)) {}
  ErrorCode code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  ErrorCode code_;
  std::string stage_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& stage, const std::string& msg);

const char* error_code_name(ErrorCode code);

// Shortest round-trip decimal form of v. All text output goes through this so
// repeated runs are byte-identical.
std::string fmt_double(double v);

// Thread budget from HMF_THREADS (default 1). Results never depend on it:
// parallel sections write disjoint slots and reduce in a fixed order.
int env_thread_count();
void parallel_for(int count, const std::function<void(int)>& body);

}  // namespace hmf
