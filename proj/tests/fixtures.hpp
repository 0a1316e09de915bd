#pragma once

#include <secgain/model.hpp>

namespace secgain::testutil {

// Two-state, two-input, two-output benchmark plant used across the test suites.
inline LtiSystem benchmark_system() {
  Matrix f(2, 2), g(2, 2), c(2, 2), r1(2, 2), r2(2, 2);
  f << 1.0444, -0.1409, 0.3001, 0.6327;
  g << 2, 3, 1, 1;
  c << 2, 2, 1, 2;
  r1 << 0.0183, -0.0218, -0.0218, 0.0261;
  r2 << 0.0018, 0.0031, 0.0031, 0.0096;
  return LtiSystem(f, g, c, r1, r2);
}

// Performance-optimal observer/controller pair for the benchmark plant.
inline GainPair benchmark_h2_gains() {
  GainPair gp;
  gp.l = Matrix(2, 2);
  gp.k = Matrix(2, 2);
  gp.l << 1.0085, -0.9780, -0.0139, 0.2664;
  gp.k << 0.1273, -2.0544, -0.4303, 1.4190;
  return gp;
}

// Security-aware pair from the iterative design at a relaxed performance budget.
inline GainPair benchmark_iterative_gains() {
  GainPair gp;
  gp.l = Matrix(2, 2);
  gp.k = Matrix(2, 2);
  gp.l << 0.0956, -0.1248, -0.1010, 0.1321;
  gp.k << 0.1440, -2.0390, -0.4441, 1.4063;
  return gp;
}

// Security-aware pair from the convex design at the same budget.
inline GainPair benchmark_convex_gains() {
  GainPair gp;
  gp.l = Matrix(2, 2);
  gp.k = Matrix(2, 2);
  gp.l << 0.1274, -0.1737, -0.2019, 0.2872;
  gp.k << 0.1902, -1.9945, -0.4757, 1.3759;
  return gp;
}

}  // namespace secgain::testutil
