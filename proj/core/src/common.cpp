#include "hmf/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

namespace hmf {

void fail(ErrorCode code, const std::string& stage, const std::string& msg) {
  throw Error(code, stage, msg);
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::UnsupportedDerivative: return "unsupported-derivative";
    case ErrorCode::NonConvergence: return "non-convergence";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int env_thread_count() {
  const char* env = std::getenv("HMF_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  if (n < 1) return 1;
  return n;
}

void parallel_for(int count, const std::function<void(int)>& body) {
  int threads = std::min(env_thread_count(), count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(threads);
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, &err = errs[t], t]() {
      try {
        for (int i = t; i < count; i += threads) body(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hmf
