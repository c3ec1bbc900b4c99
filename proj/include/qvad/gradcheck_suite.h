#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qvad {

struct GradCheckCase {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::string worst;

  bool passed() const { return max_error < tolerance; }
};

// Finite-difference checks of every differentiable op and of the composed
// networks (GatedGCN with the score head, graph encoder with decoder loss),
// at 64-bit with step 1e-5. Linear ops are held to 1e-6, the rest to 1e-4.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 11);

}  // namespace qvad
