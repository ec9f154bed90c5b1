#pragma once

#include <vector>

namespace hbda {

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). Sorts a copy; throws std::invalid_argument when empty.
double quantile(std::vector<double> xs, double p);

/// Several quantiles from one sort.
std::vector<double> quantiles(std::vector<double> xs, const std::vector<double>& ps);

double mean(const std::vector<double>& xs);
/// Unbiased sample variance (0 for fewer than two values).
double variance(const std::vector<double>& xs);

/// One-pass mean/variance accumulator (Welford).
class Welford {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  long long count() const { return n_; }
  double mean() const { return mean_; }
  /// Population variance m2 / n, matching a two-pass mean of squared deviations.
  double variance() const { return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0; }
  double sample_variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

 private:
  long long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace hbda
