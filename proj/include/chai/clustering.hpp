#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "chai/attention.hpp"
#include "chai/plan.hpp"

namespace chai::clustering {

using Point = std::vector<double>;
using Points = std::vector<Point>;

// Inclusive range of traced steps, 1-based.
struct StepWindow {
  std::size_t first_step = 1;
  std::size_t last_step = 5;

  std::size_t size() const { return last_step - first_step + 1; }
  bool operator==(const StepWindow&) const = default;
};

// One feature vector per head for a single layer.
struct LayerFeatures {
  Points heads;
  StepWindow window;
};

// Concatenates each head's probability rows over `window`, right-padding
// every row with zeros to the length of the window's last row. With the
// default window over a trace that starts at position 0 this is 5 rows of 5.
LayerFeatures extract_features(const AttentionTrace& trace, std::size_t layer, StepWindow window = {});

struct KMeansOptions {
  std::uint64_t seed = 0;
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
  double tol = 1e-6;  // relative SSE change that ends Lloyd iterations
};

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Points centroids;
  double sse = 0.0;
  // SSE after each assignment step of the winning restart.
  std::vector<double> sse_history;
};

// Lloyd's algorithm from k-means++ seeds, best of `restarts` by SSE. Empty
// clusters take the point farthest from its centroid. Deterministic in
// (points order, seed).
KMeansResult kmeans(const Points& points, std::size_t k, const KMeansOptions& options = {});

// Lloyd iterations from the given centroids.
KMeansResult lloyd(const Points& points, Points centroids, std::size_t max_iter, double tol);

double squared_distance(std::span<const double> a, std::span<const double> b);

// err(k) for k = 1..|points|. Each entry is the SSE of a real clustering and
// the curve is non-increasing.
std::vector<double> elbow_curve(const Points& points, const KMeansOptions& options = {});

// Smallest k in [1, H-1] whose next drop, relative to err(1), is below
// `threshold`; H if none is.
std::size_t elbow_select(std::span<const double> curve, double threshold = 0.05);

// Member nearest its centroid per cluster; ties go to the lower head index.
std::vector<std::size_t> choose_representatives(const Points& points, std::span<const std::size_t> assignment,
                                                const Points& centroids);

// k-means + representatives, canonicalized.
LayerPlan cluster_heads(const Points& points, std::size_t k, const KMeansOptions& options = {});

class CorrelationMatrix {
 public:
  CorrelationMatrix() = default;
  explicit CorrelationMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Pearson correlation between every pair of vectors. Pairs involving a
// zero-variance vector are 0.
CorrelationMatrix correlation_matrix(const Points& vectors);

struct StabilityReport {
  std::size_t from_step = 0;
  std::size_t to_step = 0;
  std::size_t window = 0;
  // changes[layer][s - from_step]: heads whose cluster differs from the
  // clustering one step earlier. The first step, or any step whose
  // predecessor has no full window, reports 0.
  std::vector<std::vector<std::size_t>> changes;
};

// Re-clusters the trailing `window`-step window ending at every step in
// [from_step, to_step] with cluster_counts[layer] clusters. A cluster is
// identified by its lowest-index member.
StabilityReport membership_stability(const AttentionTrace& trace, std::span<const std::size_t> cluster_counts,
                                     std::size_t from_step, std::size_t to_step, std::size_t window = 5,
                                     const KMeansOptions& options = {});

// Cluster cardinalities, largest first.
std::vector<std::size_t> cluster_size_histogram(const ClusterPlan& plan, std::size_t layer);

// SplitMix64 finalizer over base ^ salt. Used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

}  // namespace chai::clustering
