#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nsk::gradcheck {

struct Report {
  std::string op;
  bool pass = false;
  // Largest |analytic − numeric| / max(1e-4, 1e-2·|numeric|); pass when ≤ 1.
  double worst = 0.0;
};

// Compares analytic gradients of every differentiable stdlib op against
// central differences of a 64-bit forward (eps 1e-3).
std::vector<Report> check_all(std::uint64_t seed);

}  // namespace nsk::gradcheck
