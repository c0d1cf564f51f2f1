#pragma once

#include <cmath>
#include <functional>

namespace monoflow {

/// Argmax of a unimodal function on [a, b] by golden-section search.
/// Stops when the bracket is narrower than `tol`.
template <class F>
double golden_section_maximize(F&& fn, double a, double b, double tol = 1e-10,
                               int max_iterations = 500) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = fn(c);
  double fd = fn(d);
  for (int i = 0; i < max_iterations && (b - a) > tol; ++i) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = fn(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = fn(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace monoflow
