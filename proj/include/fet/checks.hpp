#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fet/gradcheck.hpp"

// Finite-difference gradient checks over the differentiable surface of the
// library, shared by the CLI and the test suites.
namespace fet::checks {

struct CheckRow {
  std::string name;
  double tol = 0.0;
  GradCheckResult result;
  bool pass() const { return result.checked > 0 && result.max_rel_error <= tol; }
};

// Every primitive in ops, wavelet, attention, the losses and the small
// building blocks (SE, Mix-FFN, pyramid), each on its own tiny input.
std::vector<CheckRow> op_suite(std::uint64_t seed = 0, double tol = 1e-5);

// One FET block on a 4 x 4 x 8 input, every parameter and the input.
CheckRow fet_block_check(std::uint64_t seed = 0, double tol = 1e-4);

// The MSCE bridge on an 8/4/2/1 stage pyramid, sampled coordinates.
CheckRow msce_check(std::uint64_t seed = 0, double tol = 1e-4);

// The full toy model at 32 x 32 on a sampled fraction of its parameters.
CheckRow model_check(std::uint64_t seed = 0, double fraction = 0.01, double tol = 1e-4);

}  // namespace fet::checks
