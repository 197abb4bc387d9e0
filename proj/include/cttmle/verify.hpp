#pragma once

#include <string>
#include <vector>

namespace cttmle {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<std::string> verify_check_names();

// Enumeration-identity and score-identity checks. `inject_error` perturbs a
// hazard so that the identity checks must fail (sensitivity probe).
std::vector<CheckResult> run_verification(bool inject_error = false);

}  // namespace cttmle
