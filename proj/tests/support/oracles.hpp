#pragma once

// Test-only reference implementations. Nothing here may call into the
// library code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace chai::testing {

// Reference MT19937-64 (Matsumoto & Nishimura), written out from the
// published recurrence.
class Mt64 {
 public:
  explicit Mt64(std::uint64_t seed) {
    mt_[0] = seed;
    for (index_ = 1; index_ < kN; ++index_) {
      mt_[index_] = 6364136223846793005ULL * (mt_[index_ - 1] ^ (mt_[index_ - 1] >> 62)) + index_;
    }
  }

  std::uint64_t next() {
    if (index_ >= kN) twist();
    std::uint64_t x = mt_[index_++];
    x ^= (x >> 29) & 0x5555555555555555ULL;
    x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
    x ^= (x << 37) & 0xFFF7EEE000000000ULL;
    x ^= x >> 43;
    return x;
  }

 private:
  static constexpr std::size_t kN = 312;
  static constexpr std::size_t kM = 156;
  static constexpr std::uint64_t kUpper = 0xFFFFFFFF80000000ULL;
  static constexpr std::uint64_t kLower = 0x7FFFFFFFULL;

  void twist() {
    for (std::size_t i = 0; i < kN; ++i) {
      const std::uint64_t x = (mt_[i] & kUpper) | (mt_[(i + 1) % kN] & kLower);
      std::uint64_t xa = x >> 1;
      if (x & 1ULL) xa ^= 0xB5026F5AA96619E9ULL;
      mt_[i] = mt_[(i + kM) % kN] ^ xa;
    }
    index_ = 0;
  }

  std::uint64_t mt_[kN];
  std::size_t index_ = 0;
};

inline std::vector<std::vector<double>> naive_matmul(const std::vector<std::vector<double>>& a,
                                                     const std::vector<std::vector<double>>& b) {
  std::vector<std::vector<double>> c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.front().size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Minimum SSE over every partition of `points` into exactly k non-empty
// groups, by enumerating all k^n labelings.
inline double optimal_partition_sse(const std::vector<std::vector<double>>& points, std::size_t k) {
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::size_t> count(k, 0);
    for (auto l : label) ++count[l];
    bool full = true;
    for (auto c : count) full = full && c > 0;
    if (full) {
      double sse = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          if (label[i] == c)
            for (std::size_t j = 0; j < dim; ++j) mean[j] += points[i][j];
        for (auto& m : mean) m /= static_cast<double>(count[c]);
        for (std::size_t i = 0; i < n; ++i)
          if (label[i] == c)
            for (std::size_t j = 0; j < dim; ++j) sse += (points[i][j] - mean[j]) * (points[i][j] - mean[j]);
      }
      if (sse < best) best = sse;
    }
    std::size_t pos = 0;
    while (pos < n && ++label[pos] == k) label[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace chai::testing
