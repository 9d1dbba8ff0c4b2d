#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace pcam {

struct GradCheck {
  std::string name;
  std::size_t checked = 0;
  double worst_gap = 0.0;  // worst |analytic - fd| beyond the relative slack
  bool ok = true;
};

// Central finite differences (step 1e-5, relative tolerance 1e-4) against
// the tape for every differentiable op family, the attention pipeline, the
// losses, and the composed network loss; `instances` seeded trials per
// family.
std::vector<GradCheck> gradcheck_suite(std::uint64_t seed,
                                       std::size_t instances = 20);

bool gradcheck_passed(const std::vector<GradCheck>& checks);

}  // namespace pcam
