#pragma once

#include <string>

// Precision-neutral summary so the 32-bit and 64-bit sweeps can live in one binary.
struct GradcheckReport {
  int ops = 0;
  int shapes_per_op = 0;
  double worst_error = 0;
  std::string worst_op;
  double seconds = 0;
};

GradcheckReport gradcheck_sweep32(int shapes_per_op);
GradcheckReport gradcheck_sweep64(int shapes_per_op);
