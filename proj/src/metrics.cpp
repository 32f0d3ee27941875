#include "dta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace dta {

namespace {

void check_lengths(const char* op, const VectorRef& y, const VectorRef& yhat,
                   Eigen::Index min_n) {
  if (y.size() != yhat.size())
    throw ParameterError(std::string(op) + ": length mismatch, " +
                         std::to_string(y.size()) + " vs " +
                         std::to_string(yhat.size()));
  if (y.size() < min_n)
    throw ParameterError(std::string(op) + ": needs at least " +
                         std::to_string(min_n) + " samples, got " +
                         std::to_string(y.size()));
}

// Prefix-sum tree over compressed ranks.
class CountTree {
 public:
  explicit CountTree(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {  // 1-based
    for (; rank < tree_.size(); rank += rank & (~rank + 1)) ++tree_[rank];
  }
  long long prefix(std::size_t rank) const {  // count of inserted <= rank
    long long s = 0;
    for (; rank > 0; rank -= rank & (~rank + 1)) s += tree_[rank];
    return s;
  }

 private:
  std::vector<long long> tree_;
};

}  // namespace

double mse(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("mse", y, yhat, 1);
  return (y - yhat).squaredNorm() / static_cast<double>(y.size());
}

double mae(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("mae", y, yhat, 1);
  return (y - yhat).cwiseAbs().sum() / static_cast<double>(y.size());
}

double pearson(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("pearson", y, yhat, 2);
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::VectorXd pc = yhat.array() - yhat.mean();
  const double denom = yc.norm() * pc.norm();
  if (denom == 0.0)
    throw ParameterError("pearson: zero variance in an input vector");
  return yc.dot(pc) / denom;
}

double concordance_index_pairwise(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("concordance_index", y, yhat, 2);
  const Eigen::Index n = y.size();
  long long pairs = 0;
  double credit = 0.0;  // exact: multiples of 0.5
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(y[i] > y[j])) continue;
      ++pairs;
      if (yhat[i] > yhat[j])
        credit += 1.0;
      else if (yhat[i] == yhat[j])
        credit += 0.5;
    }
  if (pairs == 0)
    throw ParameterError(
        "concordance index undefined: no pair with distinct observed values");
  return credit / static_cast<double>(pairs);
}

double concordance_index(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("concordance_index", y, yhat, 2);
  const Eigen::Index n = y.size();

  // Compress yhat to 1-based ranks.
  std::vector<double> sorted(yhat.data(), yhat.data() + n);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto rank_of = [&](double v) {
    return static_cast<std::size_t>(
               std::lower_bound(sorted.begin(), sorted.end(), v) -
               sorted.begin()) +
           1;
  };

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return y[a] < y[b]; });

  CountTree tree(sorted.size());
  long long pairs = 0;
  double credit = 0.0;
  std::size_t inserted = 0;
  std::size_t i = 0;
  while (i < static_cast<std::size_t>(n)) {
    // Query the whole equal-y group before inserting any of it: pairs
    // within the group have y_i == y_j and never count.
    std::size_t j = i;
    while (j < static_cast<std::size_t>(n) && y[order[j]] == y[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) {
      const std::size_t r = rank_of(yhat[order[t]]);
      const long long below = tree.prefix(r - 1);
      const long long ties = tree.prefix(r) - below;
      pairs += static_cast<long long>(inserted);
      credit += static_cast<double>(below) + 0.5 * static_cast<double>(ties);
    }
    for (std::size_t t = i; t < j; ++t) tree.add(rank_of(yhat[order[t]]));
    inserted += j - i;
    i = j;
  }
  if (pairs == 0)
    throw ParameterError(
        "concordance index undefined: no pair with distinct observed values");
  return credit / static_cast<double>(pairs);
}

double rm2(const VectorRef& y, const VectorRef& yhat) {
  check_lengths("rm2", y, yhat, 3);
  const double sum_hh = yhat.squaredNorm();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::VectorXd hc = yhat.array() - yhat.mean();
  if (yc.squaredNorm() == 0.0 || hc.squaredNorm() == 0.0 || sum_hh == 0.0)
    throw ParameterError("rm2: zero variance in an input vector");

  // r^2 straight from squared norms: sqrt-free so that identical inputs
  // land on exactly 1 before the |r^2 - r0^2| root amplifies rounding.
  const double cov = yc.dot(hc);
  const double r2 = (cov * cov) / (yc.squaredNorm() * hc.squaredNorm());

  // Least-squares fit of y on yhat forced through the origin.
  const double k = y.dot(yhat) / sum_hh;
  const double ss_res = (y - k * yhat).squaredNorm();
  const double ss_tot = yc.squaredNorm();
  const double r02 = 1.0 - ss_res / ss_tot;

  return r2 * (1.0 - std::sqrt(std::abs(r2 - r02)));
}

std::string EvaluationReport::to_text() const {
  std::ostringstream os;
  os.precision(12);
  os << "scenario = " << scenario << '\n';
  os << "n = " << n << '\n';
  os << "mse = " << mse << '\n';
  os << "mae = " << mae << '\n';
  os << "ci = " << ci << '\n';
  os << "rm2 = " << rm2 << '\n';
  os << "pearson_r = " << pearson_r << '\n';
  return os.str();
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j{{"scenario", scenario}, {"n", n},      {"mse", mse},
                   {"mae", mae},           {"ci", ci},    {"rm2", rm2},
                   {"pearson_r", pearson_r}};
  return j.dump(2);
}

EvaluationReport evaluate_metrics(const VectorRef& y, const VectorRef& yhat,
                                  const std::string& scenario) {
  EvaluationReport report;
  report.scenario = scenario;
  report.n = static_cast<std::size_t>(y.size());
  report.mse = mse(y, yhat);
  report.mae = mae(y, yhat);
  report.ci = concordance_index(y, yhat);
  report.rm2 = rm2(y, yhat);
  report.pearson_r = pearson(y, yhat);
  return report;
}

}  // namespace dta
