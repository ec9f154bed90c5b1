#include "hbda/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hbda {

namespace {
double sorted_quantile(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}
}  // namespace

double quantile(std::vector<double> xs, double p) { return quantiles(std::move(xs), {p}).front(); }

std::vector<double> quantiles(std::vector<double> xs, const std::vector<double>& ps) {
  if (xs.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  std::vector<double> out;
  for (double p : ps) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level outside [0, 1]");
    out.push_back(sorted_quantile(xs, p));
  }
  return out;
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double variance(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace hbda
