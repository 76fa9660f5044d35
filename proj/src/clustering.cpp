#include "chai/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "chai/errors.hpp"

namespace chai::clustering {

namespace {

double unit_draw(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

std::size_t index_draw(std::mt19937_64& gen, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit_draw(gen) * static_cast<double>(n)));
}

void check_points(const Points& points) {
  if (points.empty()) throw ArgumentError("no points to cluster");
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("points have different dimensions");
  }
}

std::size_t nearest(const Point& p, const Points& centroids, double& best_dist) {
  std::size_t best = 0;
  best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double dist = squared_distance(p, centroids[c]);
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return best;
}

// Assigns every point to its nearest centroid, gives each empty cluster the
// point farthest from its own centroid (that centroid moving onto the point),
// and returns the resulting SSE.
double assign(const Points& points, Points& centroids, std::vector<std::size_t>& assignment) {
  const std::size_t k = centroids.size();
  std::vector<double> dist(points.size());
  std::vector<std::size_t> counts(k, 0);
  assignment.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    assignment[i] = nearest(points[i], centroids, dist[i]);
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = points.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (counts[assignment[i]] < 2) continue;
      if (far == points.size() || dist[i] > dist[far]) far = i;
    }
    if (far == points.size()) throw ContractError("cannot repair empty cluster: more clusters than points");
    --counts[assignment[far]];
    assignment[far] = c;
    ++counts[c];
    centroids[c] = points[far];
    dist[far] = 0.0;
  }
  return std::accumulate(dist.begin(), dist.end(), 0.0);
}

Points means(const Points& points, std::span<const std::size_t> assignment, std::size_t k) {
  const std::size_t dim = points.front().size();
  Points out(k, Point(dim, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& dst = out[assignment[i]];
    for (std::size_t j = 0; j < dim; ++j) dst[j] += points[i][j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (double& v : out[c]) v /= static_cast<double>(counts[c]);
  }
  return out;
}

Points plus_plus_seeds(const Points& points, std::size_t k, std::mt19937_64& gen) {
  const std::size_t n = points.size();
  std::vector<bool> chosen(n, false);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  Points centroids;
  std::size_t pick = index_draw(gen, n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
      if (total > 0.0) {
        const double target = unit_draw(gen) * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (dist[i] <= 0.0) continue;
          acc += dist[i];
          pick = i;
          if (acc > target) break;
        }
      } else {
        // Every point coincides with a chosen centroid; take any unchosen one.
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) rest.push_back(i);
        }
        pick = rest[index_draw(gen, rest.size())];
      }
    }
    chosen[pick] = true;
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], squared_distance(points[i], points[pick]));
  }
  return centroids;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

KMeansResult lloyd(const Points& points, Points centroids, std::size_t max_iter, double tol) {
  check_points(points);
  const std::size_t k = centroids.size();
  if (k == 0 || k > points.size()) throw ArgumentError("k must be in [1, number of points]");
  KMeansResult r;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
    const double sse = assign(points, centroids, r.assignment);
    r.sse_history.push_back(sse);
    const bool converged = it > 0 && (prev - sse <= tol * prev || sse == 0.0);
    prev = sse;
    if (converged) break;
    centroids = means(points, r.assignment, k);
  }
  // Re-centre and reassign once more so assignment, centroids and sse agree.
  centroids = means(points, r.assignment, k);
  r.sse = assign(points, centroids, r.assignment);
  r.sse_history.push_back(r.sse);
  r.centroids = std::move(centroids);
  return r;
}

KMeansResult kmeans(const Points& points, std::size_t k, const KMeansOptions& options) {
  check_points(points);
  if (k == 0 || k > points.size()) {
    throw ArgumentError("k = " + std::to_string(k) + " must be in [1, " + std::to_string(points.size()) + "]");
  }
  std::mt19937_64 gen(options.seed);
  KMeansResult best;
  best.sse = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(options.restarts, 1); ++r) {
    KMeansResult run = lloyd(points, plus_plus_seeds(points, k, gen), options.max_iter, options.tol);
    if (run.sse < best.sse) best = std::move(run);
  }
  return best;
}

std::vector<double> elbow_curve(const Points& points, const KMeansOptions& options) {
  check_points(points);
  std::vector<double> curve;
  KMeansResult prev;
  for (std::size_t k = 1; k <= points.size(); ++k) {
    KMeansOptions opt = options;
    opt.seed = mix_seed(options.seed, k);
    KMeansResult run = kmeans(points, k, opt);
    if (k > 1 && run.sse > prev.sse) {
      // Split the previous solution's worst point into its own cluster; that
      // start already costs no more than err(k-1).
      std::size_t far = 0;
      double far_dist = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double dist = squared_distance(points[i], prev.centroids[prev.assignment[i]]);
        if (dist > far_dist) {
          far_dist = dist;
          far = i;
        }
      }
      Points start = prev.centroids;
      start.push_back(points[far]);
      KMeansResult warm = lloyd(points, std::move(start), options.max_iter, options.tol);
      if (warm.sse < run.sse) run = std::move(warm);
    }
    curve.push_back(run.sse);
    prev = std::move(run);
  }
  return curve;
}

std::size_t elbow_select(std::span<const double> curve, double threshold) {
  if (curve.empty()) throw ArgumentError("elbow selection over an empty curve");
  const double denom = std::max(curve[0], 1e-12);
  for (std::size_t k = 1; k < curve.size(); ++k) {
    if ((curve[k - 1] - curve[k]) / denom < threshold) return k;
  }
  return curve.size();
}

std::vector<std::size_t> choose_representatives(const Points& points, std::span<const std::size_t> assignment,
                                                const Points& centroids) {
  if (assignment.size() != points.size()) throw ContractError("assignment does not cover every point");
  const std::size_t k = centroids.size();
  constexpr auto kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> reps(k, kNone);
  std::vector<double> best(k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t c = assignment[i];
    if (c >= k) throw ContractError("cluster id out of range");
    const double dist = squared_distance(points[i], centroids[c]);
    if (dist < best[c]) {
      best[c] = dist;
      reps[c] = i;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (reps[c] == kNone) throw ContractError("cluster " + std::to_string(c) + " is empty");
  }
  return reps;
}

LayerPlan cluster_heads(const Points& points, std::size_t k, const KMeansOptions& options) {
  const KMeansResult r = kmeans(points, k, options);
  LayerPlan plan;
  plan.cluster_count = k;
  plan.assignment = r.assignment;
  plan.representative = choose_representatives(points, r.assignment, r.centroids);
  return canonicalize(plan);
}

LayerFeatures extract_features(const AttentionTrace& trace, std::size_t layer, StepWindow window) {
  if (window.first_step < 1 || window.last_step < window.first_step) {
    throw ArgumentError("invalid step window [" + std::to_string(window.first_step) + ", " +
                        std::to_string(window.last_step) + "]");
  }
  if (layer >= trace.num_layers()) throw ArgumentError("layer " + std::to_string(layer) + " not in trace");
  if (trace.steps(layer) < window.last_step) {
    throw InsufficientTraceError("trace has " + std::to_string(trace.steps(layer)) + " steps, window needs " +
                                 std::to_string(window.last_step));
  }
  LayerFeatures out;
  out.window = window;
  for (std::size_t h = 0; h < trace.num_heads(); ++h) {
    const auto& rows = trace.rows(layer, h);
    const std::size_t width = rows[window.last_step - 1].size();
    Point f(window.size() * width, 0.0);
    for (std::size_t s = window.first_step; s <= window.last_step; ++s) {
      const auto& row = rows[s - 1];
      if (row.size() > width) throw ShapeError("trace row longer than the window's last row");
      const std::size_t base = (s - window.first_step) * width;
      for (std::size_t j = 0; j < row.size(); ++j) f[base + j] = row[j];
    }
    out.heads.push_back(std::move(f));
  }
  return out;
}

CorrelationMatrix correlation_matrix(const Points& vectors) {
  if (vectors.empty()) return {};
  const std::size_t len = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != len) throw ShapeError("correlation over vectors of different lengths");
  }
  if (len < 2) throw ArgumentError("correlation needs vectors of length >= 2");
  const std::size_t n = vectors.size();
  Points centered(n);
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = std::accumulate(vectors[i].begin(), vectors[i].end(), 0.0) / static_cast<double>(len);
    centered[i].resize(len);
    double ss = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      centered[i][j] = vectors[i][j] - mean;
      ss += centered[i][j] * centered[i][j];
    }
    norm[i] = std::sqrt(ss);
  }
  CorrelationMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (norm[i] == 0.0) continue;
    m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norm[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t t = 0; t < len; ++t) dot += centered[i][t] * centered[j][t];
      const double r = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      m(i, j) = r;
      m(j, i) = r;
    }
  }
  return m;
}

StabilityReport membership_stability(const AttentionTrace& trace, std::span<const std::size_t> cluster_counts,
                                     std::size_t from_step, std::size_t to_step, std::size_t window,
                                     const KMeansOptions& options) {
  if (window < 1) throw ArgumentError("stability window must be at least one step");
  if (from_step < window || to_step < from_step) {
    throw ArgumentError("step range [" + std::to_string(from_step) + ", " + std::to_string(to_step) +
                        "] must start at or after the window length " + std::to_string(window));
  }
  if (cluster_counts.size() != trace.num_layers()) throw ArgumentError("need one cluster count per traced layer");
  if (trace.steps() < to_step) {
    throw InsufficientTraceError("trace has " + std::to_string(trace.steps()) + " steps, need " + std::to_string(to_step));
  }
  StabilityReport report{from_step, to_step, window, {}};
  for (std::size_t l = 0; l < trace.num_layers(); ++l) {
    auto identity_at = [&](std::size_t step) {
      const auto features = extract_features(trace, l, {step - window + 1, step});
      KMeansOptions opt = options;
      opt.seed = mix_seed(options.seed, (l << 32) ^ step);
      const LayerPlan plan = cluster_heads(features.heads, cluster_counts[l], opt);
      // Canonical labels number clusters by their lowest member; map back to it.
      std::vector<std::size_t> lowest(plan.cluster_count, 0);
      for (std::size_t h = plan.assignment.size(); h-- > 0;) lowest[plan.assignment[h]] = h;
      std::vector<std::size_t> ids(plan.assignment.size());
      for (std::size_t h = 0; h < ids.size(); ++h) ids[h] = lowest[plan.assignment[h]];
      return ids;
    };
    std::vector<std::size_t> counts;
    std::vector<std::size_t> prev;
    if (from_step > window) prev = identity_at(from_step - 1);
    for (std::size_t s = from_step; s <= to_step; ++s) {
      auto ids = identity_at(s);
      std::size_t changed = 0;
      if (!prev.empty()) {
        for (std::size_t h = 0; h < ids.size(); ++h) changed += ids[h] != prev[h] ? 1 : 0;
      }
      counts.push_back(changed);
      prev = std::move(ids);
    }
    report.changes.push_back(std::move(counts));
  }
  return report;
}

std::vector<std::size_t> cluster_size_histogram(const ClusterPlan& plan, std::size_t layer) {
  const LayerPlan& lp = plan.layers.at(layer);
  std::vector<std::size_t> sizes(lp.cluster_count, 0);
  for (std::size_t c : lp.assignment) ++sizes.at(c);
  std::sort(sizes.begin(), sizes.end(), std::greater<>());
  return sizes;
}

}  // namespace chai::clustering
