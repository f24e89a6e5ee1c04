#pragma once

#include <string>
#include <vector>

namespace dys {

struct GradCheckItem {
  std::string name;
  int configs = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool all_pass = false;
  double seconds = 0.0;
  std::string text() const;
};

// Finite-difference verification of every loss term, the attention join, and
// the full forward-plus-objective pipeline, each over `configs_per_item`
// random configurations at rel_tol 1e-4 (eps 1e-5).
GradCheckReport run_gradient_suite(uint64_t seed, int configs_per_item = 50);

}  // namespace dys
