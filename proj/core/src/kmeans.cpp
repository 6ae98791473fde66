#include "frad/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "frad/rng.hpp"

namespace frad {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

}  // namespace

KMeans kmeans_fit(const Tensor& points, int k, int iters, std::uint64_t seed) {
  if (points.rank() != 2) throw ShapeError("kmeans: points must be [n, d]");
  const std::size_t n = points.shape[0], d = points.shape[1];
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("kmeans: need 1 <= k <= point count");
  }

  // Seeded distance-weighted init: first centroid uniform, each later one
  // drawn with probability proportional to squared distance from the
  // nearest already-chosen centroid. Far more robust against two seeds
  // landing in one natural cluster than plain uniform picks.
  Rng rng(seed);
  KMeans km;
  km.centroids = Tensor::zeros({static_cast<std::size_t>(k), d});
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.bounded(n);
  for (int c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) km.centroids.data[c * d + j] = points.data[pick * d + j];
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(&points.data[i * d], &points.data[pick * d], d));
      total += nearest[i];
    }
    if (total == 0.0) {
      pick = rng.bounded(n);  // all remaining mass identical to a centroid
      continue;
    }
    double target = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= nearest[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<int> assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dd = sq_dist(&points.data[i * d], &km.centroids.data[c * d], d);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      assign[i] = best;
      dist[i] = best_d;
    }

    Tensor sums = Tensor::zeros({static_cast<std::size_t>(k), d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums.data[assign[i] * d + j] += points.data[i * d + j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed an emptied cluster to the worst-served point.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist[i] > dist[far]) far = i;
        }
        for (std::size_t j = 0; j < d; ++j) km.centroids.data[c * d + j] = points.data[far * d + j];
        dist[far] = 0.0;  // don't hand the same point to two empty clusters
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        km.centroids.data[c * d + j] = sums.data[c * d + j] / static_cast<double>(counts[c]);
      }
    }
  }
  return km;
}

std::vector<int> kmeans_assign(const KMeans& km, const Tensor& points) {
  if (points.rank() != 2 || points.shape[1] != km.centroids.shape[1]) {
    throw ShapeError("kmeans assign: points " + shape_str(points.shape) +
                     " do not match centroids " + shape_str(km.centroids.shape));
  }
  const std::size_t n = points.shape[0], d = points.shape[1];
  const std::size_t k = km.centroids.shape[0];
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = sq_dist(&points.data[i * d], &km.centroids.data[c * d], d);
      if (dd < best_d) {
        best_d = dd;
        best = static_cast<int>(c);
      }
    }
    out[i] = best;
  }
  return out;
}

}  // namespace frad
