#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace poex {

struct VerifyResult {
  std::string name;
  bool passed;
  std::string detail;
};

// Suites: "theorem1", "gradients", "invariance", "flows", "bound", "all".
std::vector<VerifyResult> run_verify_suite(const std::string& suite, std::uint64_t seed);

}  // namespace poex
