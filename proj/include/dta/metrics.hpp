#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>

#include "dta/error.hpp"

namespace dta {

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

double mse(const VectorRef& y, const VectorRef& yhat);
double mae(const VectorRef& y, const VectorRef& yhat);
double pearson(const VectorRef& y, const VectorRef& yhat);

// Probability-style ranking score: over all pairs with y_i > y_j, credit 1
// when yhat agrees, 0.5 on a tie. O(N log N) via order-statistic counting.
double concordance_index(const VectorRef& y, const VectorRef& yhat);
// Definitional O(N^2) pair enumeration; must agree with the fast path
// exactly.
double concordance_index_pairwise(const VectorRef& y, const VectorRef& yhat);

// r_m^2 = r^2 * (1 - sqrt(|r^2 - r0^2|)) with r0^2 the through-origin
// coefficient of determination.
double rm2(const VectorRef& y, const VectorRef& yhat);

struct EvaluationReport {
  std::string scenario;
  std::size_t n = 0;
  double mse = 0.0;
  double mae = 0.0;
  double ci = 0.0;
  double rm2 = 0.0;
  double pearson_r = 0.0;

  std::string to_text() const;  // flat key = value block
  std::string to_json() const;
};

EvaluationReport evaluate_metrics(const VectorRef& y, const VectorRef& yhat,
                                  const std::string& scenario);

}  // namespace dta
