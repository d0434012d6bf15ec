#pragma once

#include <string>
#include <vector>

namespace sspext {

// Central finite-difference verification of the analytic gradients of all four
// losses (mask, replace, switch, finetune) on a toy configuration in 64-bit
// arithmetic.
struct GradCheckReport {
  struct Entry {
    std::string loss_name;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> entries;

  double overall_max() const;
  bool all_below(double threshold) const;
};

GradCheckReport run_gradient_checks();

}  // namespace sspext
