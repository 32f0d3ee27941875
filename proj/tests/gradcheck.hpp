#pragma once

// Central finite-difference oracle for gradient tests. Lives in test code
// and stays independent of the backward implementation it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dta/ops.hpp"
#include "dta/tensor.hpp"

namespace dta::test {

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / denom;
}

// Runs `forward` once under a tape to collect analytic gradients for every
// leaf, then perturbs each leaf coordinate by +-h and re-evaluates the
// scalar without recording. Returns the worst relative disagreement.
inline double finite_diff_check(const std::function<Tensor()>& forward,
                                std::vector<Tensor> leaves, double h = 1e-5) {
  for (Tensor& leaf : leaves) leaf.drop_grad();
  Tape tape;
  {
    Recording rec(tape);
    Tensor loss = forward();
    tape.backward(loss);
  }
  std::vector<Array> analytic;
  analytic.reserve(leaves.size());
  for (Tensor& leaf : leaves)
    analytic.push_back(leaf.has_grad() ? leaf.grad()
                                       : Array(Array::Zero(leaf.size())));

  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    for (Eigen::Index i = 0; i < leaf.size(); ++i) {
      const double orig = leaf.values()[i];
      leaf.values()[i] = orig + h;
      const double fp = forward().item();
      leaf.values()[i] = orig - h;
      const double fm = forward().item();
      leaf.values()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      max_rel = std::max(max_rel, rel_err(analytic[li][i], fd));
    }
  }
  return max_rel;
}

}  // namespace dta::test
