#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stark/ndiff.hpp"

namespace stark::gradcheck {

struct CheckResult {
  std::string name;
  bool pass = false;
  double max_err = 0.0;   // worst |fd - tape| or relative error, whichever applied
  int64_t checked = 0;    // number of scalar entries compared
  std::string detail;     // first failure location, empty on pass
};

// Builds the scalar loss from tape leaves that alias the given inputs.
using BuildFn = std::function<nd::Var(nd::Tape&, std::vector<nd::Var>&)>;

// Central finite differences vs tape gradients. An entry passes when
// |fd - tape| < floor or the relative error is below tol.
CheckResult check(const std::string& name, std::vector<nd::Array> inputs, const BuildFn& build,
                  double h = 1e-5, double tol = 1e-4, double floor = 1e-7);

// Registered per-operation suites (used by the gradcheck CLI verb).
std::vector<std::string> suite_names();

// Runs one named suite, or every suite when name is "all". Each suite
// repeats over n_seeds seeds derived from base_seed.
std::vector<CheckResult> run(const std::string& name, uint64_t base_seed, int n_seeds = 5);

}  // namespace stark::gradcheck
