#pragma once

// Split-conformal prediction band over (similarity score, correctness label)
// pairs. The nonconformity score is |y - min-max normalized score|.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace confret {

template <typename T>
struct LabeledScore {
  T theta;
  std::uint8_t label;  // 1 = correct retrieval
};

/// Subset of the label space {0, 1}.
struct LabelSet {
  bool zero = false;
  bool one = false;

  bool empty() const { return !zero && !one; }
  bool contains(int y) const { return y == 0 ? zero : one; }
  bool operator==(const LabelSet&) const = default;

  static LabelSet none() { return {}; }
  static LabelSet only_one() { return {false, true}; }
  static LabelSet both() { return {true, true}; }
};

template <typename T>
class PredictionBand {
 public:
  /// Validates invariants; throws std::invalid_argument.
  PredictionBand(T theta_min, T theta_max, std::vector<T> sorted_gamma)
      : theta_min_(theta_min), theta_max_(theta_max), sorted_gamma_(std::move(sorted_gamma)) {
    if (!(theta_min_ < theta_max_)) throw std::invalid_argument("prediction band: theta_min must be < theta_max");
    if (sorted_gamma_.empty()) throw std::invalid_argument("prediction band: no calibration scores");
    if (!std::is_sorted(sorted_gamma_.begin(), sorted_gamma_.end())) {
      throw std::invalid_argument("prediction band: calibration scores not sorted");
    }
    if (!(sorted_gamma_.front() >= 0 && sorted_gamma_.back() <= 1)) {
      throw std::invalid_argument("prediction band: calibration scores outside [0, 1]");
    }
  }

  T theta_min() const { return theta_min_; }
  T theta_max() const { return theta_max_; }
  const std::vector<T>& sorted_gamma() const { return sorted_gamma_; }
  std::size_t size() const { return sorted_gamma_.size(); }

  bool operator==(const PredictionBand&) const = default;

 private:
  T theta_min_;
  T theta_max_;
  std::vector<T> sorted_gamma_;
};

/// Min-max normalization against the calibration range, clamped to [0, 1].
template <typename T>
T normalize_score(const PredictionBand<T>& band, T theta) {
  const T t = (theta - band.theta_min()) / (band.theta_max() - band.theta_min());
  return std::clamp<T>(t, 0, 1);
}

template <typename T>
T calibration_score(T theta_tilde, int label) {
  return std::abs(static_cast<T>(label) - theta_tilde);
}

template <typename T>
PredictionBand<T> fit_band(std::span<const LabeledScore<T>> pairs) {
  if (pairs.size() < 2) throw std::invalid_argument("fit_band: need at least 2 calibration pairs");
  T lo = pairs.front().theta;
  T hi = lo;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.theta)) throw std::invalid_argument("fit_band: non-finite score");
    if (p.label > 1) throw std::invalid_argument("fit_band: labels must be 0 or 1");
    lo = std::min(lo, p.theta);
    hi = std::max(hi, p.theta);
  }
  if (!(lo < hi)) throw std::invalid_argument("fit_band: degenerate score range");
  std::vector<T> gamma;
  gamma.reserve(pairs.size());
  for (const auto& p : pairs) {
    const T t = std::clamp<T>((p.theta - lo) / (hi - lo), 0, 1);
    gamma.push_back(calibration_score(t, p.label));
  }
  std::sort(gamma.begin(), gamma.end());
  return PredictionBand<T>(lo, hi, std::move(gamma));
}

template <typename T>
PredictionBand<T> fit_band(const std::vector<LabeledScore<T>>& pairs) {
  return fit_band(std::span<const LabeledScore<T>>(pairs));
}

/// Nonconformity threshold for error rate epsilon: the ⌈(m+1)(1-ε)⌉-th
/// smallest calibration score, +inf past m, -inf (empty band) at or below 0.
template <typename T>
T band_threshold(const PredictionBand<T>& band, T epsilon) {
  const auto m = band.size();
  const T target = static_cast<T>(m + 1) * (1 - epsilon);
  // Shave off representation error so e.g. 10 * (1 - 0.1) does not round up to 10.
  const T index = std::ceil(target - std::abs(target) * 8 * std::numeric_limits<T>::epsilon());
  if (index > static_cast<T>(m)) return std::numeric_limits<T>::infinity();
  if (index <= 0) return -std::numeric_limits<T>::infinity();
  return band.sorted_gamma()[static_cast<std::size_t>(index) - 1];
}

/// Labels whose nonconformity at `theta` stays within the epsilon threshold.
template <typename T>
LabelSet band_set(const PredictionBand<T>& band, T theta, T epsilon) {
  const T alpha = band_threshold(band, epsilon);
  const T t = normalize_score(band, theta);
  return {calibration_score(t, 0) <= alpha, calibration_score(t, 1) <= alpha};
}

/// c / (m + 1) with c the number of calibration scores strictly below the
/// normalized score. Binary search, O(log m).
template <typename T>
T conformal_probability(const PredictionBand<T>& band, T theta) {
  const T t = normalize_score(band, theta);
  const auto& g = band.sorted_gamma();
  const auto c = std::lower_bound(g.begin(), g.end(), t) - g.begin();
  return static_cast<T>(c) / static_cast<T>(band.size() + 1);
}

/// Element-wise conformal_probability over an Eigen expression.
template <typename Derived>
auto conformal_probability(const PredictionBand<typename Derived::Scalar>& band,
                           const Eigen::ArrayBase<Derived>& thetas) {
  using T = typename Derived::Scalar;
  return thetas.unaryExpr([&band](T theta) { return conformal_probability(band, theta); }).eval();
}

/// Grid search over epsilon in {0, step, 2 step, ..., 1} for the smallest
/// error rate whose band is exactly {1}; returns 1 - that rate, or 0 when no
/// grid point yields {1}. Reference oracle for conformal_probability.
template <typename T>
T brute_force_probability(const PredictionBand<T>& band, T theta, T grid_step) {
  if (!(grid_step > 0)) throw std::invalid_argument("brute_force_probability: grid_step must be positive");
  const auto steps = static_cast<std::size_t>(std::ceil(1 / grid_step));
  for (std::size_t i = 0; i <= steps; ++i) {
    const T epsilon = std::min<T>(static_cast<T>(i) * grid_step, 1);
    if (band_set(band, theta, epsilon) == LabelSet::only_one()) return 1 - epsilon;
  }
  return 0;
}

}  // namespace confret
