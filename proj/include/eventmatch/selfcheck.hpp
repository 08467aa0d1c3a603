#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace eventmatch {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // the quantity compared against the tolerance
  double tolerance = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct SelfcheckReport {
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
};

// Names in execution order.
const std::vector<std::string>& selfcheck_names();

// Runs every invariant suite single-threaded. `broken` names one check whose
// computation gets a deliberate fault injected, so the harness can be tested;
// an unknown name throws DomainError.
SelfcheckReport run_selfcheck(std::uint64_t seed, const std::optional<std::string>& broken = std::nullopt);

// {"seed", "passed", "seconds", "checks": [{"name", "passed", "measured",
// "tolerance", "detail", "seconds"}]}
std::string selfcheck_json(const SelfcheckReport& r);
std::string selfcheck_text(const SelfcheckReport& r);

}  // namespace eventmatch
